import csv

import numpy as np
import pytest

from wolf.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main, pif_command
from wolf.config import ConfigError, parse_config, sweep_targets
from wolf.experiment import run_experiment, run_sweep, run_trials

TRACK = """
scenario.kind = track2d
scenario.steps = 40
filters = kf, imq
filter.imq.kind = wolf-imq
filter.imq.c = 4
experiment.trials = 3
experiment.bootstrap = 100
experiment.warmup = 10
"""

LORENZ = """
scenario.kind = lorenz96
scenario.dim = 10
scenario.steps = 10
scenario.particles = 20
filters = enkf, hub
filter.hub.kind = hub-enkf
experiment.trials = 2
experiment.bootstrap = 100
"""

REGRESS = """
scenario.kind = regress1d
scenario.steps = 60
scenario.hidden = 4
filters = ekf, imq, ogd
filter.imq.kind = wolf-imq
filter.imq.c = 3
experiment.trials = 2
experiment.bootstrap = 100
"""


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_defaults_and_aliases():
    cfg = parse_config(TRACK)
    assert cfg.scenario == "track2d" and cfg.trials == 3
    assert [f.label for f in cfg.filters] == ["kf", "imq"]
    assert cfg.filter("imq").value("c") == 4.0
    assert cfg.reference_label == "kf" and cfg.primary_metric == "J_0"
    alias = parse_config("scenario.kind = track2d\nfilters = ekf-b\n")
    assert alias.filters[0].kind == "kfb"
    tuned = parse_config("scenario.kind = track2d\nfilters = w\nfilter.w.kind = wolf-imq\nfilter.w.c = 1, 2, 4\n")
    assert tuned.filters[0].tunable == {"c": (1.0, 2.0, 4.0)}


@pytest.mark.parametrize("text", [
    "filters = kf\n",
    "scenario.kind = mars\nfilters = kf\n",
    "scenario.kind = track2d\n",
    "scenario.kind = track2d\nfilters = kf\nfilters = kf\n",
    "scenario.kind = track2d\nfilters = kf\nscenario.bogus = 1\n",
    "scenario.kind = track2d\nfilters = kf\nfilter.kf.c = 3\n",
    "scenario.kind = track2d\nfilters = x\nfilter.x.kind = nope\n",
    "scenario.kind = track2d\nfilters = kf\nexperiment.trials = 2.5\n",
    "scenario.kind = track2d\nfilters = kf\nexperiment.reference = imq\n",
    "scenario.kind = track2d\nfilters = kf\nsweep.param = c\n",
    "scenario.kind = track2d\nfilters = kf\nfilter.other.kind = kf\n",
    "scenario.kind = lorenz96\nfilters = kf\n",
    "scenario.kind = track2d\nfilters = kf\nno equals sign\n",
])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_sweep_targets_default_to_filters_with_the_parameter():
    cfg = parse_config(LORENZ + "sweep.param = c\nsweep.values = 1, 2\n")
    assert sweep_targets(cfg) == ("hub",)


def test_trial_rows_and_reference_slowdown(tmp_path):
    cfg = parse_config(TRACK)
    rows = run_experiment(cfg, tmp_path)
    trials = read_rows(tmp_path / "per_trial.csv")
    assert len(trials) == 6
    assert {(r["trial"], r["filter"]) for r in trials} == {(str(t), f) for t in range(3) for f in ("kf", "imq")}
    assert len(read_rows(tmp_path / "per_step.csv")) == 6 * 40
    ref = [r for r in rows if r.label == "kf"]
    assert all(r.slowdown == 1.0 for r in ref)
    for r in rows:
        assert r.low <= r.mean <= r.high


def _outputs(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


@pytest.mark.parametrize("text", [TRACK, LORENZ, REGRESS])
def test_determinism_with_timing_off(tmp_path, text):
    cfg = parse_config(text + "experiment.timing = false\n")
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    assert _outputs(tmp_path / "a") == _outputs(tmp_path / "b")


def test_parallel_trials_match_serial(tmp_path):
    cfg = parse_config(TRACK + "experiment.timing = false\n")
    run_experiment(cfg, tmp_path / "serial")
    run_experiment(cfg.replace(jobs=2), tmp_path / "par")
    assert _outputs(tmp_path / "serial") == _outputs(tmp_path / "par")


def test_seed_changes_results():
    cfg = parse_config(TRACK)
    a = run_trials(cfg.replace(trials=1))
    b = run_trials(cfg.replace(trials=1, seed=1))
    assert a[0].metrics["J_0"] != b[0].metrics["J_0"]


def test_sweep_outputs(tmp_path):
    cfg = parse_config(LORENZ + "sweep.param = c\nsweep.values = 2, 8, 32\nexperiment.timing = false\n")
    points = run_sweep(cfg, tmp_path)
    assert len(points) == 3
    summary = read_rows(tmp_path / "sweep_summary.csv")
    assert len(summary) == 3 * 2
    # the untouched EnKF reference is the same at every sweep value
    ref = {r["median"] for r in summary if r["filter"] == "enkf"}
    assert len(ref) == 1
    hub = [r["median"] for r in summary if r["filter"] == "hub"]
    assert len(set(hub)) > 1
    assert len(read_rows(tmp_path / "sweep.csv")) == 3 * 2 * 2 * 2  # values, filters, trials, metrics


def test_single_value_sweep_matches_experiment(tmp_path):
    base = parse_config(LORENZ + "filter.hub.c = 8\nexperiment.timing = false\n")
    run_experiment(base, tmp_path / "exp")
    sweep = parse_config(LORENZ + "sweep.param = c\nsweep.values = 8\nexperiment.timing = false\n")
    run_sweep(sweep, tmp_path / "sw")
    exp = {(r["filter"], r["trial"]): r["L_mean"] for r in read_rows(tmp_path / "exp" / "per_trial.csv")}
    sw = {(r["filter"], r["trial"]): r["result"] for r in read_rows(tmp_path / "sw" / "sweep.csv")
          if r["metric"] == "L_mean"}
    assert exp == sw


def test_pif_grid_files(tmp_path):
    cfg = parse_config("""
scenario.kind = track2d
filters = kf, imq
filter.imq.kind = wolf-imq
filter.imq.c = 2
pif.steps = 10
""")
    maxima = pif_command(cfg, tmp_path)
    rows = read_rows(tmp_path / "pif_kf.csv")
    assert len(rows) == 41 * 41
    origin = [r for r in rows if float(r["eps1"]) == 0.0 and float(r["eps2"]) == 0.0]
    assert float(origin[0]["pif"]) == 0.0
    assert maxima["kf"] > maxima["imq"]
    assert all(float(r["pif"]) >= 0.0 for r in rows)
    assert len(read_rows(tmp_path / "pif_summary.csv")) == 2


def test_regression_reports_prediction_error(tmp_path):
    rows = run_experiment(parse_config(REGRESS), tmp_path)
    assert {r.metric for r in rows} == {"rmedse"}
    assert all(np.isfinite(r.median) for r in rows)
    steps = read_rows(tmp_path / "per_step.csv")
    assert "pred_err" in steps[0]


def test_cli_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.cfg"
    good.write_text(TRACK.replace("experiment.trials = 3", "experiment.trials = 1"))
    assert main(["track2d", "--config", str(good), "--out", str(tmp_path / "out")]) == EXIT_OK
    assert (tmp_path / "out" / "summary.csv").exists()
    bad = tmp_path / "bad.cfg"
    bad.write_text("scenario.kind = track2d\nfilters = kf\nexperiment.trials = 0\n")
    assert main(["track2d", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["lorenz96", "--config", str(good)]) == EXIT_CONFIG
    assert main(["track2d", "--config", str(tmp_path / "missing.cfg")]) == EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["track2d", "--config", str(good), "--out", str(blocker / "sub")]) == EXIT_IO
    assert main(["sweep", "--config", str(good)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
