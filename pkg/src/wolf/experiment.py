"""Seeded multi-trial experiments, grid tuning, sweeps and CSV reports."""

from __future__ import annotations

import csv
import itertools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from wolf.baselines import AdamState, KfBConfig, KfIwConfig, adam_ogd_step, kfb_update, kfiw_update
from wolf.config import ExperimentConfig, FilterSpec, parse_bool, sweep_targets
from wolf.core_math import GaussianBelief, RngStream
from wolf.ensemble_filters import (
    Ensemble,
    ap_enkf_update,
    enkf_predict,
    enkf_update,
    hub_enkf_update,
    inflate,
    pp_enkf_update,
)
from wolf.gaussian_filters import NonlinearModel, ekf_update, kf_predict, kf_update, wolf_update
from wolf.scenarios import (
    Lorenz96Config,
    MlpSpec,
    RegressionConfig,
    Tracking2dConfig,
    bootstrap_mean_ci,
    lorenz96_generate,
    metric_j,
    metric_lt,
    metric_rmedse,
    mlp_apply,
    mlp_jacobian,
    regression1d_stream,
    tracking2d_generate,
)
from wolf.weights import WeightSpec

# stream ids under each trial's RngStream
DATA_STREAM, FILTER_STREAM, INIT_STREAM = 0, 1, 2
FAILURES = (FloatingPointError, np.linalg.LinAlgError, OverflowError)


@dataclass
class TrialResult:
    trial: int
    label: str
    params: str
    metrics: dict[str, float]
    step_metrics: dict[str, np.ndarray]
    weights: np.ndarray
    step_ns: np.ndarray
    outliers: np.ndarray
    diverged: bool = False
    diverged_at: int = -1

    @property
    def total_ns(self) -> int:
        return int(self.step_ns.sum())


# ---------------------------------------------------------------------------
# scenario problems


@dataclass
class Problem:
    """Generated data for one trial plus what every filter needs to start."""

    truth: np.ndarray
    measurements: np.ndarray
    outliers: np.ndarray
    extras: dict = field(default_factory=dict)


def tracking_config(cfg: ExperimentConfig) -> Tracking2dConfig:
    p = cfg.scenario_params
    return Tracking2dConfig(dt=float(p["dt"]), q=float(p["q"]), r=float(p["r"]), steps=int(p["steps"]),
                            variant=p["variant"], nu=float(p["nu"]), p_eps=float(p["p_eps"]),
                            init_scale=float(p["init_scale"]))


def lorenz_config(cfg: ExperimentConfig) -> Lorenz96Config:
    p = cfg.scenario_params
    return Lorenz96Config(dim=int(p["dim"]), dt=float(p["dt"]), steps=int(p["steps"]),
                          forcing=float(p["forcing"]), forcing_std=float(p["forcing_std"]),
                          obs_std=float(p["obs_std"]), p_eps=float(p["p_eps"]),
                          outlier_value=float(p["outlier_value"]), particles=int(p["particles"]),
                          init_std=float(p["init_std"]))


def regression_config(cfg: ExperimentConfig) -> RegressionConfig:
    p = cfg.scenario_params
    return RegressionConfig(steps=int(p["steps"]), p_eps=float(p["p_eps"]),
                            sorted=parse_bool(p["sorted"], "scenario.sorted"),
                            noise_var=float(p["noise_var"]))


def mlp_spec(cfg: ExperimentConfig) -> MlpSpec:
    hidden = tuple(int(float(h)) for h in cfg.scenario_params["hidden"].split(",") if h.strip())
    return MlpSpec((1,) + hidden + (1,))


def make_problem(cfg: ExperimentConfig, trial_rng: RngStream) -> Problem:
    rng = trial_rng.split(DATA_STREAM)
    if cfg.scenario == "track2d":
        data = tracking2d_generate(tracking_config(cfg), rng)
        return Problem(data.states, data.measurements, data.outliers)
    if cfg.scenario == "lorenz96":
        data = lorenz96_generate(lorenz_config(cfg), rng)
        return Problem(data.states, data.measurements, data.outliers.any(axis=1))
    data = regression1d_stream(regression_config(cfg), rng)
    return Problem(data.y, data.y, data.outliers, {"x": data.x})


# ---------------------------------------------------------------------------
# filter steppers: init once, then step(t, y) -> (estimate, weight)


def _weight_spec(spec: FilterSpec) -> WeightSpec | None:
    kind = spec.kind
    if kind == "kf":
        return None
    if kind == "wolf-const":
        return WeightSpec.constant(spec.value("w0"))
    name = {"wolf-imq": "imq", "wolf-md": "md", "wolf-tmd": "tmd", "wolf-perdim": "perdim_tmd"}[kind]
    return WeightSpec(name, c=spec.value("c"))


class TrackingStepper:
    def __init__(self, cfg: ExperimentConfig, spec: FilterSpec):
        tcfg = tracking_config(cfg)
        self.dyn, self.obs = tcfg.model()
        scale = float(cfg.scenario_params["prior_scale"])
        self.belief = GaussianBelief(np.zeros(4), scale * np.eye(4))
        self.update = _gaussian_update(spec)

    def step(self, t, y):
        pred = kf_predict(self.belief, self.dyn)
        self.belief, w = self.update(pred, self.obs, y)
        return self.belief.mean, w


def _gaussian_update(spec: FilterSpec):
    """Return ``update(pred, obs, y) -> (posterior, weight)`` for linear or linearised models."""
    kind = spec.kind
    if kind == "kfb":
        bcfg = KfBConfig(spec.value("alpha0"), spec.value("beta0"), int(spec.value("iters")), spec.value("tol"))

        def update(pred, obs, y):
            trace: list = []
            post = kfb_update(pred, obs, y, bcfg, trace)
            return post, trace[-1]
        return update
    if kind == "kfiw":
        icfg = KfIwConfig(spec.value("ell"), int(spec.value("iters")))
        return lambda pred, obs, y: (kfiw_update(pred, obs, y, icfg), math.nan)
    wspec = _weight_spec(spec)

    def update(pred, obs, y):
        if isinstance(obs, NonlinearModel):
            out = ekf_update(pred, obs, y, wspec)
        elif wspec is None:
            out = kf_update(pred, obs, y)
        else:
            out = wolf_update(pred, obs, y, wspec)
        w = out.weight
        return out.posterior, float(np.mean(w))
    return update


class RegressionStepper:
    """Online MLP fit; the estimate recorded is the prior predictive ``h(mu_{t|t-1}, x_t)``."""

    def __init__(self, cfg: ExperimentConfig, spec: FilterSpec, problem: Problem, init_rng: RngStream):
        self.net = mlp_spec(cfg)
        p = cfg.scenario_params
        m = self.net.n_params
        self.q = float(p["q"])
        theta0 = self.net.init_params(init_rng)
        self.x = problem.extras["x"]
        net = self.net
        self.model = NonlinearModel(lambda th: th, lambda th: np.array([0.0]), self.q * np.eye(m),
                                    np.array([[float(p["obs_var"])]]))
        self.kind = spec.kind
        if spec.kind == "ogd":
            self.params = theta0
            self.adam = AdamState.zeros(m, lr=spec.value("lr"), inner_iters=int(spec.value("iters")))
        else:
            self.belief = GaussianBelief(theta0, float(p["prior_scale"]) * np.eye(m))
            self.update = _gaussian_update(spec)
        self._h = lambda th, x: np.array([mlp_apply(net, th, x)])
        self._hj = lambda th, x: mlp_jacobian(net, th, x)[None, :]

    def step(self, t, y):
        x = self.x[t]
        if self.kind == "ogd":
            yhat = mlp_apply(self.net, self.params, x)

            def grad(th):
                return -(y - mlp_apply(self.net, th, x)) * mlp_jacobian(self.net, th, x)
            self.params, self.adam = adam_ogd_step(self.params, grad, self.adam)
            return yhat, math.nan
        cov = self.belief.cov.copy()
        cov[np.diag_indices_from(cov)] += self.q
        pred = GaussianBelief(self.belief.mean, cov)
        yhat = mlp_apply(self.net, pred.mean, x)
        obs = self.model.with_observation(lambda th: self._h(th, x), lambda th: self._hj(th, x))
        self.belief, w = self.update(pred, obs, np.array([y]))
        return yhat, w


class EnsembleStepper:
    def __init__(self, cfg: ExperimentConfig, spec: FilterSpec, rng: RngStream):
        lcfg = lorenz_config(cfg)
        self.model = lcfg.model(float(cfg.scenario_params["filter_q"]))
        self.rng = rng
        init = lcfg.forcing + lcfg.init_std * rng.normal((lcfg.particles, lcfg.dim))
        self.ens = Ensemble(init)
        self.kind = spec.kind
        self.lam = spec.value("inflation")
        self.c = None if spec.kind == "enkf" else spec.value("c")
        self.masked = bool(spec.value("masked")) if spec.kind == "ap-enkf" else False

    def step(self, t, y):
        ens = enkf_predict(self.ens, self.model, self.rng)
        if self.lam != 1.0:
            ens = inflate(ens, self.lam)
        w = 1.0
        if self.kind == "enkf":
            ens = enkf_update(ens, self.model, y, self.rng)
        elif self.kind == "ap-enkf":
            ens, wv = ap_enkf_update(ens, self.model, y, self.c, self.rng, self.masked)
            w = float(wv.mean())
        elif self.kind == "pp-enkf":
            ens, wv = pp_enkf_update(ens, self.model, y, self.c, self.rng)
            w = float(wv.mean())
        else:
            ens = hub_enkf_update(ens, self.model, y, self.c, self.rng)
        self.ens = ens
        return ens.mean(), w


def make_stepper(cfg: ExperimentConfig, spec: FilterSpec, problem: Problem, trial_rng: RngStream):
    if cfg.scenario == "track2d":
        return TrackingStepper(cfg, spec)
    if cfg.scenario == "lorenz96":
        return EnsembleStepper(cfg, spec, trial_rng.split(FILTER_STREAM))
    return RegressionStepper(cfg, spec, problem, trial_rng.split(INIT_STREAM))


# ---------------------------------------------------------------------------
# one trial


def _metrics(cfg: ExperimentConfig, problem: Problem, est: np.ndarray) -> tuple[dict, dict]:
    if cfg.scenario == "track2d":
        err = problem.truth - est
        j = metric_j(problem.truth, est)
        return {f"J_{i}": float(j[i]) for i in range(j.size)}, {f"err_{i}": err[:, i] for i in range(err.shape[1])}
    if cfg.scenario == "lorenz96":
        lt = metric_lt(problem.truth, est)
        return {"L_mean": float(np.mean(lt)), "L_T": float(lt[-1])}, {"L_t": lt}
    err = problem.measurements - est
    return {"rmedse": metric_rmedse(problem.measurements, est)}, {"pred_err": err}


def run_filter(cfg: ExperimentConfig, spec: FilterSpec, problem: Problem, trial: int,
               trial_rng: RngStream) -> TrialResult:
    T = len(problem.measurements)
    est = np.full((T,) + np.shape(problem.truth)[1:], np.nan)
    weights = np.full(T, np.nan)
    step_ns = np.zeros(T, dtype=np.int64)
    diverged_at, t = -1, 0
    clock = time.perf_counter_ns
    try:
        stepper = make_stepper(cfg, spec, problem, trial_rng)
        for t in range(T):
            start = clock()
            mean, w = stepper.step(t, problem.measurements[t])
            step_ns[t] = clock() - start
            est[t], weights[t] = mean, w
    except FAILURES:
        diverged_at = t
    if not cfg.timing:
        step_ns[:] = 0
    metrics, steps = _metrics(cfg, problem, est)
    if diverged_at >= 0:
        metrics = {k: math.nan for k in metrics}
    return TrialResult(trial, spec.label, spec.describe(), metrics, steps, weights, step_ns,
                       problem.outliers, diverged_at >= 0, diverged_at)


def run_trial(cfg: ExperimentConfig, trial: int) -> list[TrialResult]:
    trial_rng = RngStream(cfg.seed, trial)
    problem = make_problem(cfg, trial_rng)
    return [run_filter(cfg, spec, problem, trial, trial_rng) for spec in cfg.filters]


# ---------------------------------------------------------------------------
# tuning and execution


def tune_filter(cfg: ExperimentConfig, spec: FilterSpec) -> FilterSpec:
    """Grid search over list-valued parameters on the first ``tune_trials`` trials."""
    grid = spec.tunable
    if not grid:
        return spec
    names = sorted(grid)
    problems = [(t, RngStream(cfg.seed, t)) for t in range(cfg.tune_trials)]
    problems = [(t, r, make_problem(cfg, r)) for t, r in problems]
    best, best_score = None, math.inf
    for combo in itertools.product(*(grid[n] for n in names)):
        cand = spec.with_params(**dict(zip(names, combo)))
        scores = [run_filter(cfg, cand, p, t, r).metrics[cfg.primary_metric] for t, r, p in problems]
        score = float(np.median(scores))
        if best is None or score < best_score:
            best, best_score = cand, score
    return best


def resolve_filters(cfg: ExperimentConfig) -> ExperimentConfig:
    return cfg.replace(filters=tuple(tune_filter(cfg, f) for f in cfg.filters))


def _run_trial_job(args):
    return run_trial(*args)


def run_trials(cfg: ExperimentConfig) -> list[TrialResult]:
    cfg = resolve_filters(cfg)
    jobs = [(cfg, t) for t in range(cfg.trials)]
    if cfg.jobs > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            batches = list(pool.map(_run_trial_job, jobs))
    else:
        batches = [run_trial(c, t) for c, t in jobs]
    order = {f.label: i for i, f in enumerate(cfg.filters)}
    results = [r for batch in batches for r in batch]
    return sorted(results, key=lambda r: (r.trial, order[r.label]))


# ---------------------------------------------------------------------------
# summaries and reports


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def median_step_ns(cfg: ExperimentConfig, results: list[TrialResult], label: str) -> float:
    chunks = []
    for r in results:
        if r.label == label and not r.diverged:
            T = r.step_ns.size
            skip = min(cfg.warmup, T // 2)
            chunks.append(r.step_ns[skip:])
    return float(np.median(np.concatenate(chunks))) if chunks else math.nan


def slowdowns(cfg: ExperimentConfig, results: list[TrialResult]) -> dict[str, float | None]:
    if not cfg.timing:
        return {f.label: None for f in cfg.filters}
    ref = median_step_ns(cfg, results, cfg.reference_label)
    return {f.label: median_step_ns(cfg, results, f.label) / ref for f in cfg.filters}


@dataclass(frozen=True)
class SummaryRow:
    label: str
    metric: str
    median: float
    mean: float
    low: float
    high: float
    slowdown: float | None
    params: str


def summarize(cfg: ExperimentConfig, results: list[TrialResult]) -> list[SummaryRow]:
    slow = slowdowns(cfg, results)
    rows = []
    boot_rng = RngStream(cfg.seed, 2**31)
    for spec in cfg.filters:
        mine = [r for r in results if r.label == spec.label]
        for metric in mine[0].metrics:
            vals = np.array([r.metrics[metric] for r in mine])
            vals = vals[np.isfinite(vals)]
            if vals.size == 0:
                rows.append(SummaryRow(spec.label, metric, math.nan, math.nan, math.nan, math.nan,
                                       slow[spec.label], mine[0].params))
                continue
            if vals.size >= 2:
                mean, low, high = bootstrap_mean_ci(vals, boot_rng.split(len(rows)), B=cfg.bootstrap)
            else:
                mean = low = high = float(vals[0])
            rows.append(SummaryRow(spec.label, metric, float(np.median(vals)), mean, low, high,
                                   slow[spec.label], mine[0].params))
    return rows


def write_reports(cfg: ExperimentConfig, results: list[TrialResult], out: Path) -> list[SummaryRow]:
    out.mkdir(parents=True, exist_ok=True)
    metric_names = list(results[0].metrics)
    with open(out / "per_trial.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "filter", "params"] + metric_names + ["total_time_ns", "diverged", "diverged_at"])
        for r in results:
            w.writerow([r.trial, r.label, r.params] + [_fmt(r.metrics[m]) for m in metric_names]
                       + [r.total_ns, int(r.diverged), r.diverged_at])
    if cfg.per_step:
        step_names = list(results[0].step_metrics)
        with open(out / "per_step.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "filter", "step"] + step_names + ["weight", "step_time_ns", "outlier_flag"])
            for r in results:
                cols = [r.step_metrics[n] for n in step_names]
                for t in range(r.weights.size):
                    w.writerow([r.trial, r.label, t] + [_fmt(c[t]) for c in cols]
                               + [_fmt(r.weights[t]), int(r.step_ns[t]), int(r.outliers[t])])
    rows = summarize(cfg, results)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["filter", "metric", "median", "mean", "bootstrap_low", "bootstrap_high",
                    "slowdown_vs_reference", "params"])
        for s in rows:
            w.writerow([s.label, s.metric, _fmt(s.median), _fmt(s.mean), _fmt(s.low), _fmt(s.high),
                        _fmt(s.slowdown), s.params])
    return rows


def run_experiment(cfg: ExperimentConfig, out) -> list[SummaryRow]:
    results = run_trials(cfg)
    return write_reports(cfg, results, Path(out))


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepPoint:
    value: float
    results: list


def run_sweep(cfg: ExperimentConfig, out) -> list[SweepPoint]:
    """Run the experiment once per sweep value, overriding the parameter on the target filters."""
    if cfg.sweep is None:
        raise ValueError("configuration has no sweep section")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    targets = set(sweep_targets(cfg))
    points = []
    for value in cfg.sweep.values:
        filters = tuple(f.with_params(**{cfg.sweep.param: value}) if f.label in targets else f
                        for f in cfg.filters)
        points.append(SweepPoint(value, run_trials(cfg.replace(filters=filters))))
    metric = cfg.sweep.metric or cfg.primary_metric
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "filter", "trial", "metric", "result"])
        for p in points:
            for r in p.results:
                for name, v in r.metrics.items():
                    w.writerow([_fmt(p.value), r.label, r.trial, name, _fmt(v)])
    boot = RngStream(cfg.seed, 2**31 + 1)
    with open(out / "sweep_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "filter", "metric", "median", "mean", "bootstrap_low", "bootstrap_high"])
        for i, p in enumerate(points):
            for j, spec in enumerate(cfg.filters):
                vals = np.array([r.metrics[metric] for r in p.results if r.label == spec.label])
                vals = vals[np.isfinite(vals)]
                if vals.size >= 2:
                    mean, low, high = bootstrap_mean_ci(vals, boot.split(i * 1000 + j), B=cfg.bootstrap)
                    med = float(np.median(vals))
                elif vals.size == 1:
                    med = mean = low = high = float(vals[0])
                else:
                    med = mean = low = high = math.nan
                w.writerow([_fmt(p.value), spec.label, metric, _fmt(med), _fmt(mean), _fmt(low), _fmt(high)])
    return points
