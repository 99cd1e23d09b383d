import math

import pytest

from sbrp.lpformat import LPModel, LPParseError, parse_lp, read_lp

HAND = """\\ hand written
Minimize
 obj: 3 x + 2 y - z
Subject To
 c1: x + y >= 1
 c2: - x + 4 z
   + 2 y <= 10.5
 c3: x - y = 0
Bounds
 0 <= x <= 5
 z free
 y <= 7
General
 x
Binary
 b
End
"""


def test_parse_hand_written_model():
    lp = parse_lp(HAND)
    assert lp.comments == ["hand written"]
    assert lp.objective == {"x": 3.0, "y": 2.0, "z": -1.0}
    assert [r.name for r in lp.rows] == ["c1", "c2", "c3"]
    assert lp.rows[1].coeffs == {"x": -1.0, "z": 4.0, "y": 2.0}
    assert lp.rows[1].rhs == 10.5
    assert lp.bounds["z"] == (-math.inf, math.inf)
    assert lp.bounds["y"] == (0.0, 7.0)
    assert lp.bounds["b"] == (0.0, 1.0)
    assert lp.general == ["x"] and lp.binary == ["b"]


def test_violations_and_objective():
    lp = parse_lp(HAND)
    ok = {"x": 1.0, "y": 1.0, "z": 0.0}
    assert lp.violations(ok) == []
    assert lp.objective_value(ok) == 5.0
    assert set(lp.violations({"x": 0.5, "y": 0.5})) == {"integrality:x"}
    assert set(lp.violations({"x": 6.0, "y": 6.0, "z": 3.0})) == {"bound:x", "c2"}
    assert "integrality:b" in lp.violations({"x": 1, "y": 1, "b": 0.5})


def test_write_read_round_trip(tmp_path):
    lp = LPModel(comments=["demo"])
    for k in range(15):
        lp.add_var(f"v{k}", 0, 1, "binary")
    lp.add_var("n", -2, 9, "integer")
    lp.add_var("f", -math.inf, math.inf)
    lp.objective = {f"v{k}": 0.1 * k - 0.5 for k in range(15)}
    lp.add_row("big", {f"v{k}": float(k) for k in range(15)}, "<=", 7)
    lp.add_row("mix", {"n": 1.0, "f": -1.0}, "=", 0.25)
    text = lp.to_text()
    back = parse_lp(text)
    assert back.to_text() == text
    assert back.objective == lp.objective
    assert back.bounds == lp.bounds
    p = tmp_path / "m.lp"
    p.write_text(text)
    assert read_lp(p).to_text() == text


def test_builder_guards():
    lp = LPModel()
    lp.add_var("x")
    with pytest.raises(ValueError):
        lp.add_var("x")
    with pytest.raises(ValueError):
        lp.add_var("1bad")
    with pytest.raises(KeyError):
        lp.add_row("r", {"y": 1.0}, "<=", 1)
    with pytest.raises(ValueError):
        lp.add_row("r", {"x": 1.0}, "<", 1)


@pytest.mark.parametrize("text,line", [
    ("Minimize\n obj: x\nSubject To\n c: x <= 1\n", None),
    ("Minimize\n obj: x\nSubject To\n c: x <= \nEnd\n", 4),
    ("Minimize\n obj: x\nSubject To\n c: x ?? y <= 1\nEnd\n", 4),
    ("x + y\nEnd\n", 1),
    ("Minimize\n obj: x\nSubject To\n x <= 1\nEnd\n", 4),
    ("Minimize\n obj: x\nBounds\n 0 <= x <= abc\nEnd\n", 4),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(LPParseError) as exc:
        parse_lp(text)
    assert exc.value.line == line
