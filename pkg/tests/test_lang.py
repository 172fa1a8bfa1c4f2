import pytest
from hypothesis import given, strategies as st

from smcmdp.bltl import Atom, Finally, Globally, Next, Until, depth, horizon
from smcmdp.lang import ParseError, load_model, parse_model, parse_property, print_model, validate
from smcmdp.model import ProbabilityProperty, RewardProperty, joint_branches, enabled_actions
from smcmdp.models import list_models, model_path

MINIMAL = """mdp
module m
  x : [0..1] init 0;
  [] x=0 -> (x'=1);
endmodule
"""

SYNC = """
mdp
module a
  x : [0..2] init 0;
  [sync] x=0 -> 0.5:(x'=1) + 0.5:(x'=2);
  [sync] x=0 -> (x'=2);
endmodule
module b
  y : [0..2] init 0;
  [sync] y=0 -> 0.25:(y'=1) + 0.75:(y'=2);
  [sync] y=0 -> (y'=1);
endmodule
"""


def test_minimal_document():
    m = parse_model(MINIMAL)
    assert len(m.variables) == 1
    assert sum(len(mod.commands) for mod in m.modules) == 1


def test_probability_sum_error():
    src = MINIMAL.replace("(x'=1)", "0.5:(x'=1) + 0.6:(x'=0)")
    with pytest.raises(ParseError) as exc:
        parse_model(src)
    d = exc.value.diagnostics[0]
    assert d.severity == "error" and "sum" in d.message and d.line == 4


def test_sync_product_by_hand():
    m = parse_model(SYNC)
    acts = enabled_actions(m, (0, 0))
    assert [a.commands for a in acts] == [((0, 0), (1, 0)), ((0, 0), (1, 1)),
                                          ((0, 1), (1, 0)), ((0, 1), (1, 1))]
    first = sorted((p, s) for p, s in joint_branches(m, (0, 0), acts[0]))
    assert first == [(0.125, (1, 1)), (0.125, (2, 1)), (0.375, (1, 2)), (0.375, (2, 2))]
    assert joint_branches(m, (0, 0), acts[3]) == [(1.0, (2, 1))]
    for a in acts:
        assert sum(p for p, _ in joint_branches(m, (0, 0), a)) == pytest.approx(1, abs=1e-9)


def test_sync_label_blocks_when_partner_disabled():
    m = parse_model(SYNC)
    assert enabled_actions(m, (0, 1)) == []


@pytest.mark.parametrize("src, message", [
    ("mdp\nmodule m\n  x : [0..1] init 0;\n  [] y=0 -> (x'=1);\nendmodule\n", "y"),
    ("mdp\nmodule m\n  x : [0..1] init 3;\nendmodule\n", "init"),
    ("mdp\nmodule m\n  x : [0..1] init 0\nendmodule\n", "expected"),
    ("mdp\nmodule m\n  x : [0..1] init 0;\n  x : [0..1] init 0;\nendmodule\n", "x"),
])
def test_errors_have_locations(src, message):
    with pytest.raises(ParseError) as exc:
        parse_model(src)
    lines = src.split("\n")
    assert exc.value.diagnostics
    for d in exc.value.diagnostics:
        assert d.severity == "error"
        assert 1 <= d.line <= len(lines)
        assert 1 <= d.col <= len(lines[d.line - 1]) + 1
    assert any(message in d.message for d in exc.value.diagnostics)


def test_constant_folding_matches_substitution():
    with_const = parse_model("""
mdp
const int N = 4;
module m
  x : [0..N] init N-1;
  [] x<N -> (x'=min(x+1, N));
endmodule
""")
    literal = parse_model("""
mdp
module m
  x : [0..4] init 4-1;
  [] x<4 -> (x'=min(x+1, 4));
endmodule
""")
    assert with_const.modules == literal.modules


def test_constant_override():
    m = parse_model("mdp\nconst int N = 4;\nmodule m\n  x : [0..N] init 0;\nendmodule\n", {"N": 9})
    assert m.variables[0].hi == 9


def test_fig1_style_formula():
    f = parse_property('X ("psi" & X G<=4 "phi")', parse_model("""
mdp
module m
  s : [0..2] init 0;
  [] true -> (s'=s);
endmodule
label "psi" = s=1;
label "phi" = s=2;
"""))
    assert depth(f) == 4 and horizon(f) == 6
    assert isinstance(f, Next) and isinstance(f.arg.right.arg, Globally)


def test_until_constructor():
    f = parse_property("true U<=5 (x=3)")
    assert isinstance(f, Until) and f.k == 5 and isinstance(f.right, Atom)


def test_reward_property_constructor():
    m = parse_model(MINIMAL + 'label "done" = x=1;\nrewards "steps"\n  true : 1;\nendrewards\n')
    rho = parse_property('R{"steps"}=? [ F<=1000 "done" ]', m)
    assert isinstance(rho, RewardProperty) and rho.kind == "F" and rho.k == 1000
    assert rho.reward_name == "steps"
    assert isinstance(rho.formula(), Finally)


def test_probability_property():
    prop = parse_property("Pmax=? [ F<=3 x=1 ]", parse_model(MINIMAL))
    assert isinstance(prop, ProbabilityProperty) and prop.direction == "max"


@pytest.mark.parametrize("text", ["F<=0 x=1", 'R{"nope"}=? [ C<=3 ]', "x=1 U<=", "G<=2 y=1"])
def test_bad_properties(text):
    with pytest.raises(ParseError):
        parse_property(text, parse_model(MINIMAL))


def test_bit_widths():
    m = parse_model("""
mdp
module m
  x : [0..7] init 0;
  b : [0..1] init 0;
  c : [3..3] init 3;
endmodule
""")
    rep = validate(m)
    assert rep.layout == (("x", 3), ("b", 1), ("c", 1))
    assert rep.total_bits == 5


def test_bit_width_sum_of_two():
    rep = validate(parse_model("mdp\nmodule m\n  x : [0..7] init 0;\n  y : [0..1] init 0;\nendmodule\n"))
    assert rep.total_bits == 4


def test_one_sided_sync_label_warns():
    m = parse_model("""
mdp
module a
  x : [0..1] init 0;
  [go] true -> (x'=x);
endmodule
module b
  y : [0..1] init 0;
  [] true -> (y'=y);
endmodule
sync go;
""")
    warnings = [d for d in validate(m).diagnostics if d.severity == "warning"]
    assert any("go" in d.message for d in warnings)


def test_contradictory_guard_warns():
    m = parse_model("mdp\nmodule m\n  x : [0..3] init 0;\n  [] x>2 & x<1 -> (x'=0);\nendmodule\n")
    (d,) = validate(m).diagnostics
    assert d.severity == "warning" and d.line == 4


@pytest.mark.parametrize("name", list_models())
def test_bundled_models_round_trip(name):
    m = load_model(model_path(name))
    again = parse_model(print_model(m))
    assert again == m
    assert not [d for d in validate(m).diagnostics if d.severity == "error"]


@given(st.integers(0, 50), st.integers(1, 50))
def test_folded_bounds_match_literals(n, w):
    a = parse_model(f"mdp\nconst int A = {n};\nconst int W = {w};\nmodule m\n  x : [A..A+W] init A;\nendmodule\n")
    b = parse_model(f"mdp\nmodule m\n  x : [{n}..{n + w}] init {n};\nendmodule\n")
    assert a.modules == b.modules
