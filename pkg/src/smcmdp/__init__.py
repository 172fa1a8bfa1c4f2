"""Statistical model checking of MDPs with hash-seeded schedulers and smart sampling."""
from .bltl import Monitor, Verdict, evaluate_trace, horizon
from .engine import EngineConfig, EngineResult, estimate_probability_extremum, estimate_reward_extremum
from .lang import ParseError, load_model, parse_formula, parse_model, parse_property, validate
from .model import Model, ProbabilityProperty, RewardProperty
from .oracle import OracleInfeasible, OracleResult, exact_oracle
from .scheduler import DEFAULT_MODULUS, SchedulerMode, simulate
from .stats import chernoff_n, hoeffding_n, hypothesis_test, multi_chernoff_n, optimal_split

__all__ = [
    "DEFAULT_MODULUS", "EngineConfig", "EngineResult", "Model", "Monitor", "OracleInfeasible", "OracleResult",
    "ParseError", "ProbabilityProperty", "RewardProperty", "SchedulerMode", "Verdict", "chernoff_n",
    "estimate_probability_extremum", "estimate_reward_extremum", "evaluate_trace", "exact_oracle", "hoeffding_n",
    "horizon", "hypothesis_test", "load_model", "multi_chernoff_n", "optimal_split", "parse_formula",
    "parse_model", "parse_property", "simulate", "validate",
]
