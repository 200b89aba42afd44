"""Engine and eager model kept in lockstep by a hypothesis state machine, so
a divergence shrinks to a short command sequence."""

import random

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.stateful import RuleBasedStateMachine, initialize, invariant, precondition, rule

from traces import TraceState, gen_command, generate_step, make_engine, make_model, run_step, run_trace

seeds = st.integers(min_value=0, max_value=2**32 - 1)


class EngineMatchesEagerModel(RuleBasedStateMachine):
    def __init__(self):
        super().__init__()
        self.eng = make_engine()
        self.st = TraceState(make_model())
        self.installs = 0

    @initialize(seed=seeds)
    def fill(self, seed):
        # a seeded burst of commands so later installs have data to move
        rng = random.Random(seed)
        for _ in range(200):
            step = gen_command(rng, self.st)
            got, want = run_step(self.eng, self.st, step)
            assert got == want, step

    @rule(seed=seeds)
    def command(self, seed):
        step = gen_command(random.Random(seed), self.st)
        got, want = run_step(self.eng, self.st, step)
        assert got == want, step

    @precondition(lambda self: self.installs < 3)
    @rule(seed=seeds)
    def install(self, seed):
        self.installs += 1
        run_step(self.eng, self.st, generate_step(random.Random(seed), self.st, True))

    @rule()
    def flush(self):
        self.eng.eager_migrate_all()

    @invariant()
    def same_logical_view(self):
        assert self.eng.logical_items() == self.st.model.payloads()

    def teardown(self):
        self.eng.eager_migrate_all()
        assert self.eng.store.digest(with_tags=False) == self.st.model.digest()


TestEngineMatchesEagerModel = EngineMatchesEagerModel.TestCase
TestEngineMatchesEagerModel.settings = settings(
    max_examples=60, stateful_step_count=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)


@pytest.mark.parametrize("seed", range(25))
def test_long_traces_agree(seed):
    out = run_trace(seed, length=400)
    assert out.mismatch is None, out
