import math

import numpy as np
import pytest

from spinlab.results import Column, ResultTable, parse_table, read_table


def _table(fmt="csv"):
    cols = [Column("j", "str"), Column("theta", "float", "rad"), Column("n", "int"),
            Column("status", "str")]
    t = ResultTable(cols, metadata={"seed": 5, "note": "x"}, fmt=fmt)
    t.add("1/2", 0.1, 3, "PASS")
    t.add(j="3/2", theta=5e-324, n=-1, status="PASS")
    t.add("2", 1 / 3, 0, "FAIL")
    t.add("5/2", float("nan"), 1, "NONCONVERGED")
    return t


@pytest.mark.parametrize("fmt", ["csv", "tsv"])
def test_round_trip(fmt, tmp_path):
    t = _table(fmt)
    path = tmp_path / f"out.{fmt}"
    t.write(path)
    back = read_table(path)
    assert back.fmt == fmt
    assert back.names == t.names
    assert [c.unit for c in back.columns] == ["", "rad", "", ""]
    assert back.metadata == {"seed": "5", "note": "x"}
    for a, b in zip(t.rows, back.rows):
        for x, y in zip(a, b):
            if isinstance(x, float) and math.isnan(x):
                assert math.isnan(y)
            else:
                assert x == y and type(x) is type(y)
    assert back.data_lines() == t.data_lines()


def test_floats_reparse_exactly(gen):
    t = ResultTable([Column("x")])
    vals = list(gen.normal(size=50) * 10.0 ** gen.integers(-300, 300, 50)) + [2.2250738585072014e-308]
    for v in vals:
        t.add(float(v))
    assert parse_table(t.to_text()).column("x") == [float(v) for v in vals]


def test_validation_errors():
    with pytest.raises(ValueError):
        Column("a,b")
    with pytest.raises(ValueError):
        Column("a", "complex")
    with pytest.raises(ValueError):
        ResultTable([Column("a")], fmt="json")
    t = ResultTable([Column("a"), Column("b", "int")])
    with pytest.raises(ValueError):
        t.add(1.0)
    with pytest.raises(ValueError):
        t.add(a=1.0)
    with pytest.raises(ValueError):
        t.add(1.0, b=2)
    with pytest.raises(ValueError):
        t.add(float("inf"), 1)
    t.metadata["bad"] = "two\nlines"
    with pytest.raises(ValueError):
        t.to_text()


def test_parse_errors():
    with pytest.raises(ValueError):
        parse_table("a\n1\n")
    with pytest.raises(ValueError):
        parse_table("# columns: a[]\n# types: float\nb\n1\n")
    with pytest.raises(ValueError):
        parse_table("# columns: a[],b[]\n# types: float,int\na,b\n1\n")
    with pytest.raises(ValueError):
        parse_table("# format: xml\n# columns: a[]\n# types: float\na\n1\n")


def test_sort_and_column():
    t = _table()
    t.sort(["n"])
    assert t.column("n") == [-1, 0, 1, 3]
