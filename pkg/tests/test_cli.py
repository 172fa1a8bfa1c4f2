import csv
import io
import json

import jsonschema
import pytest

from smcmdp.cli import CSV_COLUMNS, EXIT_ERROR, EXIT_OK, EXIT_REJECTED, main, result_schema

from conftest import BANDIT, CHAIN, TWO_COINS

FAST = ["--budget", "2000", "--epsilon", "0.05", "--delta", "0.05"]

BIG = """
mdp
module grid
  x : [0..3000] init 0;
  y : [0..3000] init 0;
  [] x<3000 -> (x'=x+1);
  [] y<3000 -> (y'=y+1);
endmodule
label "far" = x+y=3000;
rewards "steps"
  true : 1;
endrewards
"""


@pytest.fixture
def files(tmp_path):
    out = {}
    for name, src in (("bandit", BANDIT), ("coins", TWO_COINS), ("chain", CHAIN), ("big", BIG)):
        p = tmp_path / f"{name}.mdp"
        p.write_text(src)
        out[name] = str(p)
    return out


def run(capsys, *argv):
    code = main(list(argv))
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_reward_min_on_bandit(capsys, files):
    code, out, _ = run(capsys, "reward", "--model", files["bandit"], "--prop", 'R{"r"}=? [ C<=1 ]', "--min", *FAST)
    assert code == EXIT_OK
    res = json.loads(out)
    jsonschema.validate(res, result_schema())
    assert res["estimate"] == 0 and res["direction"] == "min" and res["hypothesis"] is None


def test_paper_scale_flags_build_the_config(capsys, files, monkeypatch):
    seen = {}
    import smcmdp.cli as cli

    def fake(model, rho, config):
        seen["config"] = config
        raise ValueError("stop")
    monkeypatch.setattr(cli, "estimate_reward_extremum", fake)
    code, _, _ = run(capsys, "reward", "--model", files["bandit"], "--prop", 'R{"r"}=? [ C<=1 ]',
                     "--budget", "100000", "--epsilon", "0.01", "--delta", "0.01")
    cfg = seen["config"]
    assert code == EXIT_ERROR
    assert (cfg.budget, cfg.epsilon, cfg.delta) == (100_000, 0.01, 0.01)


def test_same_seed_same_json(capsys, files):
    args = ("reward", "--model", files["chain"], "--prop", 'R{"steps"}=? [ F<=200 "end" ]', "--seed", "42", *FAST)
    a = json.loads(run(capsys, *args)[1])
    b = json.loads(run(capsys, *args)[1])
    a.pop("wall_time_ms")
    b.pop("wall_time_ms")
    assert a == b
    assert a["hypothesis"]["accepted"] is True


def test_rejected_hypothesis_exit_code(capsys, files, tmp_path):
    out = tmp_path / "res.json"
    code, _, _ = run(capsys, "reward", "--model", files["bandit"], "--prop", 'R{"r"}=? [ F<=5 (s=0 & s=1) ]',
                     "--out", str(out), *FAST)
    assert code == EXIT_REJECTED
    res = json.loads(out.read_text())
    jsonschema.validate(res, result_schema())
    assert res["hypothesis"]["accepted"] is False and res["bound"] == "lower"


def test_probability_ordering(capsys, files):
    hi = json.loads(run(capsys, "probability", "--model", files["coins"], "--prop", 'F<=1 "goal"', "--max", *FAST)[1])
    lo = json.loads(run(capsys, "probability", "--model", files["coins"], "--prop", 'F<=1 "goal"', "--min", *FAST)[1])
    for res in (hi, lo):
        jsonschema.validate(res, result_schema())
    assert lo["estimate"] < hi["estimate"]


def test_certain_probability(capsys, files):
    code, out, _ = run(capsys, "probability", "--model", files["chain"], "--prop", "G<=3 s<=2", *FAST)
    assert code == EXIT_OK and json.loads(out)["estimate"] == 1.0


def test_missing_property_is_a_usage_error(capsys, files):
    code, _, err = run(capsys, "probability", "--model", files["coins"], *FAST)
    assert code == EXIT_ERROR and "prop" in err


@pytest.mark.parametrize("argv", [
    ["reward", "--model", "no-such-model", "--prop", "F<=1 true"],
    ["reward", "--prop", 'R{"r"}=? [ C<=1 ]'],
    ["frobnicate"],
    ["reward", "--model", "history", "--prop", "F<=1 (", *FAST],
])
def test_errors_exit_one(capsys, argv):
    assert run(capsys, *argv)[0] == EXIT_ERROR


def test_csv_output(capsys, files):
    code, out, _ = run(capsys, "reward", "--model", files["chain"], "--prop", 'R{"steps"}=? [ F<=200 "end" ]',
                       "--format", "csv", *FAST)
    rows = list(csv.reader(io.StringIO(out)))
    assert code == EXIT_OK
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [int(r[0]) for r in rows[1:]] == list(range(1, len(rows)))
    assert int(rows[1][1]) == 2000


def test_config_file_and_flag_precedence(capsys, files, tmp_path):
    conf = tmp_path / "run.json"
    conf.write_text(json.dumps({"model": files["bandit"], "prop": 'R{"r"}=? [ C<=1 ]', "direction": "min",
                                "budget": 2000, "epsilon": 0.05, "delta": 0.05, "seed": 9}))
    res = json.loads(run(capsys, "reward", "--config", str(conf))[1])
    assert res["estimate"] == 0 and res["seed"] == 9
    res = json.loads(run(capsys, "reward", "--config", str(conf), "--max", "--seed", "3")[1])
    assert res["estimate"] == 1 and res["seed"] == 3


def test_unknown_config_key(capsys, tmp_path):
    conf = tmp_path / "bad.json"
    conf.write_text(json.dumps({"bugdet": 10}))
    code, _, err = run(capsys, "reward", "--config", str(conf))
    assert code == EXIT_ERROR and "bugdet" in err


def test_oracle_bandit(capsys, files):
    code, out, _ = run(capsys, "oracle", "--model", files["bandit"], "--prop", 'R{"r"}=? [ C<=1 ]')
    res = json.loads(out)
    jsonschema.validate(res, result_schema())
    assert code == EXIT_OK and (res["max"], res["min"], res["uniform"]) == (1, 0, 0.5)


def test_oracle_on_five_process_ring(capsys, tmp_path):
    from smcmdp.models import ring_source
    p = tmp_path / "ring5.mdp"
    p.write_text(ring_source(5, 3))
    code, out, _ = run(capsys, "oracle", "--model", str(p), "--prop", 'R{"steps"}=? [ F<=100 "stable" ]')
    res = json.loads(out)
    assert code == EXIT_OK and 0 < res["min"] <= res["max"] < 100


def test_oracle_too_large(capsys, files):
    code, _, err = run(capsys, "oracle", "--model", files["big"], "--prop", 'R{"steps"}=? [ F<=3000 "far" ]')
    assert code == EXIT_ERROR and "reachable states" in err


def test_bundled_model_by_name_and_constants(capsys):
    code, out, _ = run(capsys, "oracle", "--model", "choice", "--const", "BOUND=3",
                       "--prop", 'R{"rounds"}=? [ F<=100 "met" ]')
    res = json.loads(out)
    assert code == EXIT_OK and res["model"] == "choice" and res["min"] == 6


def test_list_models(capsys):
    code, out, _ = run(capsys, "list-models")
    names = [line.split()[0] for line in out.splitlines()]
    assert code == EXIT_OK and names == ["choice", "gossip", "history", "selfstab", "virus"]


SIM = ("simulate", "--model", "history", "--prop", 'R{"cost"}min=? [ C<=6 given X ("psi" & X G<=4 "phi") ]')


def test_simulate_is_deterministic(capsys):
    a = run(capsys, *SIM, "--sigma", "17", "--seed", "4")[1]
    b = run(capsys, *SIM, "--sigma", "17", "--seed", "4")[1]
    assert a == b
    assert a.splitlines()[1] == "step\tstate\taction\treward"


def _s0_actions(text):
    rows = [line.split("\t") for line in text.splitlines() if line and line[0].isdigit()]
    return [r[2] for r in rows if r[1] == "s=0" and r[2] != "-"]


def test_simulate_memoryless_flag():
    import contextlib
    found = False
    for sigma in range(200):
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            main([*SIM, "--sigma", str(sigma), "--memoryless"])
        assert "mode memoryless" in buf.getvalue()
        assert len(set(_s0_actions(buf.getvalue()))) == 1
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            main([*SIM, "--sigma", str(sigma)])
        acts = _s0_actions(buf.getvalue())
        found = found or len(set(acts)) > 1
    assert found


def test_simulate_needs_decimal_sigma(capsys):
    assert run(capsys, *SIM, "--sigma", "0x10")[0] == EXIT_ERROR
    assert run(capsys, *SIM)[0] == EXIT_ERROR


def test_module_entry_point():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-m", "smcmdp", "list-models"], capture_output=True, text=True)
    assert out.returncode == 0 and "selfstab" in out.stdout
