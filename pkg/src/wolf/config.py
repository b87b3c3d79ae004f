"""Flat ``key = value`` experiment configuration.

Example::

    scenario.kind = track2d
    scenario.variant = student
    experiment.trials = 100
    filters = kf, wolf-imq, kfb
    filter.wolf-imq.c = 4
    filter.kfb.alpha0 = 1, 10, 100   # a list is tuned on trial 0

Keys are case sensitive, ``#`` starts a comment and blank lines are ignored.
See ``docs/config.md`` for the full schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

SCENARIOS = ("track2d", "lorenz96", "regress1d")

GAUSSIAN_KINDS = ("kf", "wolf-imq", "wolf-md", "wolf-tmd", "wolf-perdim", "wolf-const", "kfb", "kfiw")
ENSEMBLE_KINDS = ("enkf", "ap-enkf", "pp-enkf", "hub-enkf")
KIND_ALIASES = {"ekf": "kf", "wolf-imq-ekf": "wolf-imq", "ekf-b": "kfb", "ekf-iw": "kfiw",
                "kf-b": "kfb", "kf-iw": "kfiw"}

# numeric parameters each kind accepts, with defaults
KIND_PARAMS: dict[str, dict[str, float]] = {
    "kf": {},
    "wolf-imq": {"c": 4.0},
    "wolf-md": {"c": 4.0},
    "wolf-tmd": {"c": 9.0},
    "wolf-perdim": {"c": 9.0},
    "wolf-const": {"w0": 1.0},
    "kfb": {"alpha0": 1.0, "beta0": 1.0, "iters": 2, "tol": 1e-4},
    "kfiw": {"ell": 1.0, "iters": 2},
    "ogd": {"lr": 1e-2, "iters": 1},
    "enkf": {"inflation": 1.0},
    "ap-enkf": {"c": 16.0, "inflation": 1.0, "masked": 0},
    "pp-enkf": {"c": 16.0, "inflation": 1.0},
    "hub-enkf": {"c": 4.0, "inflation": 1.0},
}

SCENARIO_KINDS = {
    "track2d": GAUSSIAN_KINDS,
    "regress1d": GAUSSIAN_KINDS + ("ogd",),
    "lorenz96": ENSEMBLE_KINDS,
}

PRIMARY_METRIC = {"track2d": "J_0", "lorenz96": "L_mean", "regress1d": "rmedse"}

SCENARIO_DEFAULTS: dict[str, dict[str, str]] = {
    "track2d": {"variant": "student", "steps": "1000", "dt": "0.1", "q": "0.1", "r": "10",
                "nu": "2.01", "p_eps": "0.05", "init_scale": "1", "prior_scale": "1"},
    "lorenz96": {"dim": "40", "dt": "0.05", "steps": "60", "p_eps": "0.01", "particles": "500",
                 "forcing": "8", "forcing_std": "1", "obs_std": "1", "outlier_value": "100",
                 "init_std": "1", "filter_q": "0"},
    "regress1d": {"steps": "1500", "p_eps": "0.05", "sorted": "false", "noise_var": "3",
                  "hidden": "10, 10", "prior_scale": "30", "q": "1e-4", "obs_var": "3"},
}

EXPERIMENT_KEYS = {"trials", "seed", "reference", "timing", "bootstrap", "warmup", "jobs",
                   "per_step", "tune_trials"}
PIF_KEYS = {"filters", "low", "high", "n", "steps", "reverse", "variant"}
SWEEP_KEYS = {"param", "values", "filters", "metric"}


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


def canonical_kind(kind: str) -> str:
    kind = kind.strip().lower()
    kind = KIND_ALIASES.get(kind, kind)
    if kind not in KIND_PARAMS:
        raise ConfigError(f"unknown filter kind {kind!r}")
    return kind


def parse_number(text: str, key: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{key}: value must be finite")
    return value


def parse_list(text: str, key: str) -> list[float]:
    items = [t for t in (s.strip() for s in text.split(",")) if t]
    if not items:
        raise ConfigError(f"{key}: empty list")
    return [parse_number(t, key) for t in items]


def parse_bool(text: str, key: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


@dataclass(frozen=True)
class FilterSpec:
    """A filter label, its kind and its parameters; list values are tuned."""

    label: str
    kind: str
    params: dict[str, tuple[float, ...]] = field(default_factory=dict)

    def value(self, name: str) -> float:
        vals = self.params.get(name)
        if vals is None:
            return KIND_PARAMS[self.kind][name]
        if len(vals) != 1:
            raise ConfigError(f"filter {self.label}: parameter {name} has not been tuned")
        return vals[0]

    @property
    def tunable(self) -> dict[str, tuple[float, ...]]:
        return {k: v for k, v in self.params.items() if len(v) > 1}

    def with_params(self, **values: float) -> "FilterSpec":
        params = dict(self.params)
        params.update({k: (float(v),) for k, v in values.items()})
        return replace(self, params=params)

    def describe(self) -> str:
        """Resolved scalar parameters, e.g. ``c=4``."""
        out = []
        for name in sorted(KIND_PARAMS[self.kind]):
            vals = self.params.get(name, (KIND_PARAMS[self.kind][name],))
            out.append(f"{name}=" + "|".join(f"{v:g}" for v in vals))
        return ";".join(out)


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple[float, ...]
    filters: tuple[str, ...] = ()
    metric: str | None = None


@dataclass(frozen=True)
class PifSpec:
    filters: tuple[str, ...] = ()
    low: float = -5.0
    high: float = 5.0
    n: int = 41
    steps: int = 20
    reverse: bool = False
    variant: str = "clean"


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    scenario_params: dict[str, str]
    filters: tuple[FilterSpec, ...]
    trials: int = 100
    seed: int = 0
    reference: str | None = None
    timing: bool = True
    bootstrap: int = 500
    warmup: int = 100
    jobs: int = 1
    per_step: bool = True
    tune_trials: int = 1
    sweep: SweepSpec | None = None
    pif: PifSpec = PifSpec()

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if not self.filters:
            raise ConfigError("at least one filter is required")
        labels = [f.label for f in self.filters]
        if len(set(labels)) != len(labels):
            raise ConfigError("filter labels must be unique")
        allowed = SCENARIO_KINDS[self.scenario]
        for f in self.filters:
            if f.kind not in allowed:
                raise ConfigError(f"filter {f.label} ({f.kind}) cannot run on {self.scenario}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.reference is not None and self.reference not in labels:
            raise ConfigError(f"reference filter {self.reference!r} is not in the filter list")
        if self.bootstrap < 100:
            raise ConfigError("bootstrap needs at least 100 resamples")
        if self.jobs < 1 or self.warmup < 0 or self.tune_trials < 1:
            raise ConfigError("jobs and tune_trials must be positive, warmup nonnegative")

    @property
    def reference_label(self) -> str:
        return self.reference or self.filters[0].label

    @property
    def primary_metric(self) -> str:
        if self.sweep is not None and self.sweep.metric:
            return self.sweep.metric
        return PRIMARY_METRIC[self.scenario]

    def scenario_value(self, key: str) -> str:
        return self.scenario_params[key]

    def filter(self, label: str) -> FilterSpec:
        for f in self.filters:
            if f.label == label:
                return f
        raise ConfigError(f"no filter labelled {label!r}")

    def replace(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def read_entries(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def _filter_specs(entries: dict[str, str], names: list[str]) -> tuple[FilterSpec, ...]:
    specs = []
    for label in names:
        prefix = f"filter.{label}."
        own = {k[len(prefix):]: v for k, v in entries.items() if k.startswith(prefix)}
        kind = canonical_kind(own.pop("kind", label))
        params = {}
        for name, text in own.items():
            if name not in KIND_PARAMS[kind]:
                raise ConfigError(f"filter {label}: {kind} has no parameter {name!r}")
            params[name] = tuple(parse_list(text, prefix + name))
        specs.append(FilterSpec(label, kind, params))
    known = {f"filter.{label}." for label in names}
    for key in entries:
        if key.startswith("filter.") and not any(key.startswith(p) for p in known):
            raise ConfigError(f"{key}: filter is not listed in 'filters'")
    return tuple(specs)


def parse_config(text: str, scenario: str | None = None) -> ExperimentConfig:
    entries = read_entries(text)
    kind = entries.get("scenario.kind", scenario)
    if kind is None:
        raise ConfigError("scenario.kind is required")
    if scenario is not None and kind != scenario:
        raise ConfigError(f"config is for scenario {kind!r}, not {scenario!r}")
    if kind not in SCENARIOS:
        raise ConfigError(f"unknown scenario {kind!r}; expected one of {SCENARIOS}")
    scen = dict(SCENARIO_DEFAULTS[kind])
    for key, value in entries.items():
        if key.startswith("scenario.") and key != "scenario.kind":
            name = key[len("scenario."):]
            if name not in scen:
                raise ConfigError(f"{key}: unknown parameter for {kind}")
            scen[name] = value
    if "filters" not in entries:
        raise ConfigError("'filters' is required")
    names = [s.strip() for s in entries["filters"].split(",") if s.strip()]
    filters = _filter_specs(entries, names)

    exp: dict = {}
    for key, value in entries.items():
        if not key.startswith("experiment."):
            continue
        name = key[len("experiment."):]
        if name not in EXPERIMENT_KEYS:
            raise ConfigError(f"{key}: unknown experiment setting")
        if name == "reference":
            exp[name] = value
        elif name in ("timing", "per_step"):
            exp[name] = parse_bool(value, key)
        else:
            number = parse_number(value, key)
            if number != int(number):
                raise ConfigError(f"{key}: expected an integer")
            exp[name] = int(number)

    sweep = None
    sweep_entries = {k[6:]: v for k, v in entries.items() if k.startswith("sweep.")}
    for name in sweep_entries:
        if name not in SWEEP_KEYS:
            raise ConfigError(f"sweep.{name}: unknown sweep setting")
    if sweep_entries:
        if "param" not in sweep_entries or "values" not in sweep_entries:
            raise ConfigError("a sweep needs sweep.param and sweep.values")
        targets = tuple(s.strip() for s in sweep_entries.get("filters", "").split(",") if s.strip())
        sweep = SweepSpec(sweep_entries["param"], tuple(parse_list(sweep_entries["values"], "sweep.values")),
                          targets, sweep_entries.get("metric"))

    pif_entries = {k[4:]: v for k, v in entries.items() if k.startswith("pif.")}
    pif_kw: dict = {}
    for name, value in pif_entries.items():
        if name not in PIF_KEYS:
            raise ConfigError(f"pif.{name}: unknown PIF setting")
        if name == "filters":
            pif_kw[name] = tuple(s.strip() for s in value.split(",") if s.strip())
        elif name == "reverse":
            pif_kw[name] = parse_bool(value, "pif.reverse")
        elif name == "variant":
            pif_kw[name] = value
        elif name in ("n", "steps"):
            pif_kw[name] = int(parse_number(value, f"pif.{name}"))
        else:
            pif_kw[name] = parse_number(value, f"pif.{name}")

    for key in entries:
        head = key.split(".", 1)[0]
        if head not in ("scenario", "filters", "filter", "experiment", "sweep", "pif"):
            raise ConfigError(f"{key}: unknown section {head!r}")

    cfg = ExperimentConfig(kind, scen, filters, sweep=sweep, pif=PifSpec(**pif_kw), **exp)
    _check_sweep(cfg)
    return cfg


def _check_sweep(cfg: ExperimentConfig):
    if cfg.sweep is None:
        return
    for label in cfg.sweep.filters:
        f = cfg.filter(label)
        if cfg.sweep.param not in KIND_PARAMS[f.kind]:
            raise ConfigError(f"sweep target {label} has no parameter {cfg.sweep.param!r}")


def sweep_targets(cfg: ExperimentConfig) -> tuple[str, ...]:
    if cfg.sweep is None:
        return ()
    if cfg.sweep.filters:
        return cfg.sweep.filters
    return tuple(f.label for f in cfg.filters if cfg.sweep.param in KIND_PARAMS[f.kind])


def load_config(path, scenario: str | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), scenario)
