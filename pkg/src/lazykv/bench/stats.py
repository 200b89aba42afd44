"""Median and semi-interquartile range, as used for trial summaries."""

from __future__ import annotations

import statistics
from typing import Sequence


def median(xs: Sequence[float]) -> float:
    return statistics.median(xs)


def siqr(xs: Sequence[float]) -> float:
    """Half the distance between the first and third quartiles."""
    if len(xs) < 2:
        return 0.0
    q1, _, q3 = statistics.quantiles(xs, n=4, method="inclusive")
    return (q3 - q1) / 2
