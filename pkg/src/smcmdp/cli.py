"""Command-line front end.

    smcmdp reward      --model virus --prop 'R{"detected"}max=? [ F<=300 "target" ]'
    smcmdp probability --model gossip --prop 'P=? [ F<=4 "all" ]' --min
    smcmdp oracle      --model selfstab --prop 'R{"steps"}=? [ F<=200 "stable" ]'
    smcmdp simulate    --model history --prop 'F<=6 s=2' --sigma 42
    smcmdp list-models

``--model`` takes a file path or the name of a bundled model; ``--prop``
takes a property string or a file containing one. ``--config FILE`` reads
any long option from a JSON object (keys use underscores, e.g.
``"max_steps"``); explicit flags override the file.

Exit codes: 0 success, 1 error, 2 the hypothesis ``P(phi) >= p0`` was
rejected (the result is still written, flagged as a bound).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Optional

from . import models
from .bltl import horizon
from .engine import EngineConfig, EngineResult, default_workers, estimate_probability_extremum, \
    estimate_reward_extremum
from .lang import ParseError, load_model, parse_property
from .model import JointAction, Model, ModelError, ProbabilityProperty, RewardProperty
from .oracle import OracleInfeasible, exact_oracle
from .scheduler import DEFAULT_MODULUS, SchedulerMode, derive_seed, record_outcome, simulate
from .stats import NoCandidateError

SCHEMA_VERSION = 1
CSV_COLUMNS = ("iteration", "schedulers_remaining", "sims_per_scheduler", "best_estimate", "conf")

EXIT_OK, EXIT_ERROR, EXIT_REJECTED = 0, 1, 2


def result_schema() -> dict:
    """The published JSON schema of ``reward``, ``probability`` and ``oracle`` output."""
    return json.loads(resources.files(__package__).joinpath("result.schema.json").read_text())


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# argument parsing

_DEFAULTS = {
    "model": None, "prop": None, "reward_name": None, "direction": None, "budget": 100_000,
    "epsilon": 0.01, "delta": 0.01, "p0": 0.99, "alpha": 0.99, "k": None, "max_steps": None,
    "memoryless": False, "seed": 0, "workers": None, "format": "json", "out": None, "const": [],
    "backend": "auto", "modulus": DEFAULT_MODULUS, "deadlock_loops": False, "sigma": None,
}


def _common(p: argparse.ArgumentParser, estimation: bool) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON file with default values for any long option")
    p.add_argument("--model", default=S, help="model file or bundled model name")
    p.add_argument("--prop", default=S, help="property string or file")
    p.add_argument("--const", action="append", default=S, metavar="NAME=VALUE", help="override a model constant")
    p.add_argument("--reward-name", dest="reward_name", default=S, help="reward structure (if the property names none)")
    p.add_argument("--k", type=int, default=S, help="bound for 'F phi' without an explicit '<=k'")
    p.add_argument("--max-steps", dest="max_steps", type=int, default=S, help="step budget per simulation")
    p.add_argument("--memoryless", action="store_true", default=S, help="memoryless instead of history-dependent schedulers")
    p.add_argument("--seed", type=int, default=S, help="global seed (default 0)")
    p.add_argument("--deadlock-loops", dest="deadlock_loops", action="store_true", default=S,
                   help="treat deadlocks as self-loops instead of errors")
    p.add_argument("--out", default=S, help="output file (default stdout)")
    if estimation:
        g = p.add_mutually_exclusive_group()
        g.add_argument("--max", dest="direction", action="store_const", const="max", default=S)
        g.add_argument("--min", dest="direction", action="store_const", const="min", default=S)
        p.add_argument("--budget", type=int, default=S, help="simulations per iteration, N_max (default 100000)")
        p.add_argument("--epsilon", type=float, default=S, help="Chernoff precision (default 0.01)")
        p.add_argument("--delta", type=float, default=S, help="Chernoff confidence (default 0.01)")
        p.add_argument("--p0", type=float, default=S, help="hypothesis threshold for P(phi) (default 0.99)")
        p.add_argument("--alpha", type=float, default=S, help="hypothesis significance (default 0.99)")
        p.add_argument("--workers", type=int, default=S, help="worker processes (default $SMCMDP_WORKERS or 1)")
        p.add_argument("--format", choices=("json", "csv"), default=S,
                       help="json: result object; csv: per-iteration table")
        p.add_argument("--modulus", type=int, default=S, help="prime modulus of the trace hash")
        p.add_argument("--backend", choices=("auto", "numba", "numpy"), default=S, help="simulation backend")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smcmdp", description="Statistical model checking of MDPs by scheduler sampling.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, est, helptext in (("reward", True, "estimate max/min expected reward"),
                                ("probability", True, "estimate max/min probability of a BLTL formula"),
                                ("oracle", False, "exact max/min/uniform values by value iteration"),
                                ("simulate", False, "print one trace under a given scheduler")):
        p = sub.add_parser(name, help=helptext, description=helptext)
        _common(p, est)
        if name == "simulate":
            p.add_argument("--sigma", default=argparse.SUPPRESS, help="scheduler id (decimal)")
    sub.add_parser("list-models", help="list the bundled models")
    return parser


def resolve_options(argv=None) -> argparse.Namespace:
    """Parse ``argv`` and merge: built-in defaults < ``--config`` file < explicit flags."""
    ns = build_parser().parse_args(argv)
    opts = dict(_DEFAULTS)
    config = getattr(ns, "config", None)
    if config:
        try:
            data = json.loads(Path(config).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {config}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(data) - set(_DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        opts.update(data)
    opts.update({k: v for k, v in vars(ns).items() if k != "config"})
    return argparse.Namespace(**opts)


# --------------------------------------------------------------------------
# helpers


def _constants(items) -> dict:
    out = {}
    for item in items or []:
        name, sep, value = str(item).partition("=")
        if not sep:
            raise UsageError(f"--const expects NAME=VALUE, got '{item}'")
        try:
            out[name.strip()] = json.loads(value.strip())
        except ValueError:
            raise UsageError(f"--const {name}: '{value}' is not a number or boolean") from None
    return out


def _load(opts):
    if not opts.model:
        raise UsageError("--model is required")
    path = Path(opts.model)
    if not path.exists():
        try:
            path = models.model_path(opts.model)
        except FileNotFoundError as exc:
            raise UsageError(str(exc)) from None
    model = load_model(path, _constants(opts.const))
    if not opts.prop:
        raise UsageError("--prop is required")
    text = opts.prop
    prop_path = Path(text)
    if len(text) < 4096 and "\n" not in text and prop_path.is_file():
        text = prop_path.read_text().strip()
    prop = parse_property(text, model, opts.k)
    if isinstance(prop, RewardProperty) and opts.reward_name:
        if prop.reward_name is not None and prop.reward_name != opts.reward_name:
            raise UsageError(f"--reward-name {opts.reward_name} conflicts with the property's {prop.reward_name}")
        model.reward(opts.reward_name)
        prop = replace(prop, reward_name=opts.reward_name)
    return model, prop, text, str(opts.model)


def _mode(opts) -> SchedulerMode:
    return SchedulerMode.MEMORYLESS if opts.memoryless else SchedulerMode.HISTORY


def _config(opts, direction: str) -> EngineConfig:
    return EngineConfig(direction=direction, mode=_mode(opts), budget=opts.budget, epsilon=opts.epsilon,
                        delta=opts.delta, p0=opts.p0, alpha=opts.alpha, seed=opts.seed,
                        workers=opts.workers if opts.workers is not None else default_workers(),
                        max_steps=opts.max_steps, modulus=opts.modulus, deadlock_loops=opts.deadlock_loops,
                        backend=opts.backend)


def _finite(x: float) -> Optional[float]:
    return x if isinstance(x, (int, float)) and math.isfinite(x) else None


def result_json(command: str, res: EngineResult, cfg: EngineConfig, model: str, prop: str,
                wall_ms: float) -> dict:
    hyp = None
    if res.hypothesis is not None:
        hyp = {"Z": res.hypothesis.z, "z_crit": res.hypothesis.z_crit, "accepted": res.hypothesis.accepted}
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "model": model,
        "property": prop,
        "direction": cfg.direction,
        "mode": cfg.mode.value,
        "estimate": res.estimate,
        "scheduler_id": str(res.sigma),
        "conf": res.conf,
        "hypothesis": hyp,
        "bound": res.bound,
        "satisfaction_fraction": _finite(res.satisfaction_fraction),
        "uniform_estimate": _finite(res.uniform_estimate),
        "iterations": res.iterations,
        "simulations": res.simulations,
        "wall_time_ms": wall_ms,
        "seed": cfg.seed,
        "modulus": str(cfg.modulus),
    }


def iterations_csv(res: EngineResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in res.history:
        w.writerow([rec.iteration, rec.schedulers_remaining, rec.sims_per_scheduler, repr(rec.best_estimate),
                    repr(rec.conf)])
    return buf.getvalue()


def _action_text(model: Model, a: JointAction) -> str:
    if a.label is not None:
        return f"[{a.label}]"
    mi, ci = a.commands[0]
    m = model.modules[mi]
    return f"{m.name}:line{m.commands[ci].line}"


def _emit(opts, text: str) -> None:
    if opts.out:
        Path(opts.out).write_text(text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# commands


def cmd_estimate(opts) -> int:
    model, prop, text, model_name = _load(opts)
    if opts.command == "reward":
        if not isinstance(prop, RewardProperty):
            raise UsageError("the reward command needs an R{..}=? [ .. ] property")
    elif isinstance(prop, RewardProperty):
        raise UsageError("the probability command needs a path formula or P=? [ .. ]")
    direction = opts.direction or getattr(prop, "direction", None) or "max"
    cfg = _config(opts, direction)
    start = time.perf_counter()
    if opts.command == "reward":
        res = estimate_reward_extremum(model, prop, cfg)
    else:
        phi = prop.formula if isinstance(prop, ProbabilityProperty) else prop
        res = estimate_probability_extremum(model, phi, cfg)
    wall = (time.perf_counter() - start) * 1000.0
    if opts.format == "csv":
        _emit(opts, iterations_csv(res))
    else:
        _emit(opts, json.dumps(result_json(opts.command, res, cfg, model_name, text, wall), indent=2) + "\n")
    if res.hypothesis is not None and not res.hypothesis.accepted:
        return EXIT_REJECTED
    return EXIT_OK


def cmd_oracle(opts) -> int:
    model, prop, text, model_name = _load(opts)
    res = exact_oracle(model, prop, deadlock_loops=opts.deadlock_loops)
    out = {"schema_version": SCHEMA_VERSION, "command": "oracle", "model": model_name, "property": text,
           "max": res.max, "min": res.min, "uniform": res.uniform, "states": res.states}
    _emit(opts, json.dumps(out, indent=2) + "\n")
    return EXIT_OK


def cmd_simulate(opts) -> int:
    model, prop, _, _ = _load(opts)
    if opts.sigma is None:
        raise UsageError("--sigma is required")
    try:
        sigma = int(str(opts.sigma), 10)
    except ValueError:
        raise UsageError(f"--sigma must be a decimal integer, got '{opts.sigma}'") from None
    if not 0 <= sigma < 1 << 64:
        raise UsageError("--sigma must lie in [0, 2**64)")
    rho = prop if isinstance(prop, RewardProperty) else None
    if rho is not None:
        phi = rho.formula()
    else:
        phi = prop.formula if isinstance(prop, ProbabilityProperty) else prop
    steps = opts.max_steps if opts.max_steps is not None else horizon(phi) + 1
    rec = simulate(model, phi, sigma, derive_seed(opts.seed, sigma, 0), _mode(opts), steps,
                   rho.reward_name if rho else None, opts.modulus, opts.deadlock_loops)
    names = model.var_names
    lines = [f"# sigma {sigma}  seed {opts.seed}  mode {_mode(opts).value}",
             "step\tstate\taction\treward"]
    for i, s in enumerate(rec.states):
        a = rec.actions[i]
        state = ",".join(f"{n}={v}" for n, v in zip(names, s))
        action = "-" if a is None else _action_text(model, a)
        reward = str(rec.rewards[i]) if i < len(rec.rewards) else "-"
        lines.append(f"{i}\t{state}\t{action}\t{reward}")
    lines.append(f"# verdict {rec.verdict.name.lower()}" + ("  (step budget exhausted)" if rec.exhausted else ""))
    if rho is not None:
        value, ok = record_outcome(model, rec, rho)
        lines.append(f"# property reward {float(value)!r}  satisfied {str(bool(ok)).lower()}")
    _emit(opts, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_list_models(opts) -> int:
    for name in models.list_models():
        first = models.model_path(name).read_text().splitlines()[0].lstrip("/ ").strip()
        print(f"{name:10s} {first}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        opts = resolve_options(argv)
        if opts.command == "list-models":
            return cmd_list_models(opts)
        if opts.command in ("reward", "probability"):
            return cmd_estimate(opts)
        if opts.command == "oracle":
            return cmd_oracle(opts)
        return cmd_simulate(opts)
    except SystemExit as exc:
        # argparse usage errors
        return EXIT_ERROR if exc.code else EXIT_OK
    except ParseError as exc:
        print(str(exc), file=sys.stderr)
    except (UsageError, ModelError, NoCandidateError, OracleInfeasible, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
