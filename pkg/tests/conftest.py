import os

import pytest
from hypothesis import HealthCheck, settings

from smcmdp.lang import load_model, parse_model
from smcmdp.models import model_path

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

BANDIT = """
mdp
module bandit
  s : [0..1] init 0;
  [a] s=0 -> (s'=1);
  [b] s=0 -> (s'=1);
  [] s=1 -> (s'=1);
endmodule
label "done" = s=1;
rewards "r"
  [a] true : 1;
endrewards
"""

# two schedulers: the first action reaches goal with 0.2, the second with 0.8
TWO_COINS = """
mdp
module coins
  s : [0..2] init 0;
  [lo] s=0 -> 0.2:(s'=1) + 0.8:(s'=2);
  [hi] s=0 -> 0.8:(s'=1) + 0.2:(s'=2);
  [] s>0 -> (s'=s);
endmodule
label "goal" = s=1;
"""

# 0 -> 1 -> 2 with retry probabilities; reward 1 per step until s=2
CHAIN = """
mdp
module chain
  s : [0..2] init 0;
  [] s=0 -> 0.5:(s'=1) + 0.5:(s'=0);
  [] s=1 -> 0.25:(s'=2) + 0.75:(s'=1);
  [] s=2 -> (s'=2);
endmodule
label "end" = s=2;
rewards "steps"
  s<2 : 1;
endrewards
"""


@pytest.fixture(scope="session")
def bundled():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = load_model(model_path(name))
        return cache[name]
    return get


@pytest.fixture
def bandit():
    return parse_model(BANDIT)


@pytest.fixture
def two_coins():
    return parse_model(TWO_COINS)


@pytest.fixture
def chain():
    return parse_model(CHAIN)


_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record the one-line verdict of an acceptance criterion for the terminal summary."""
    def add(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append((number, line))
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
