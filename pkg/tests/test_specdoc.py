import pytest

from lazykv.errors import ParseError
from lazykv.registry import PrefixChange
from lazykv.specdoc import UpdateSpec, format_spec_document, parse_spec_document
from lazykv.transform import fig1_transform

ORDER_DOC = """\
# purchase orders get differentiated pricing
program fig1_transform {
    foreach order/orderItems { rename price fullPrice; add discountedPrice = fullPrice - 3.0; }
}
change order order 0 1 fig1_transform
"""


def test_parse_order_document():
    spec, programs = parse_spec_document(ORDER_DOC)
    assert spec.changes == [PrefixChange(b"order", b"order", 0, 1, ("fig1_transform",))]
    assert programs == {"fig1_transform": fig1_transform}


def test_bytes_input_and_multiple_changes():
    spec, programs = parse_spec_document(
        b"change skx:/ skx:DIR:/ 5 6\nchange skx:NODE skx:NODE 5 6 redisfs_compress_data\n"
    )
    assert programs == {}
    assert [c.new_prefix for c in spec.changes] == [b"skx:DIR:/", b"skx:NODE"]
    assert spec.transformer_names() == ["redisfs_compress_data"]


def test_format_round_trip():
    spec, programs = parse_spec_document(ORDER_DOC)
    again = parse_spec_document(format_spec_document(spec, programs))
    assert again == (spec, programs)


def test_document_without_changes_rejected():
    with pytest.raises(ParseError, match="no change lines"):
        parse_spec_document(format_spec_document(UpdateSpec()))


@pytest.mark.parametrize(
    "text, line",
    [
        ("change x y 0", 1),
        ("\nchange x y a b", 2),
        ("program { }", 1),
        ("program a { bogus; }", 1),
        ("frob x", 1),
        ("change x y 0 1 bad!name", 1),
        ("program a { compress; }\nprogram a { compress; }", 2),
    ],
)
def test_parse_errors(text, line):
    with pytest.raises(ParseError) as info:
        parse_spec_document(text)
    assert info.value.line == line
