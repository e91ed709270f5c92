"""Regret experiment grid: replications over (method, n, alpha, p) with
deterministic per-replication seeding and CSV output."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import IO, NamedTuple

import numpy as np

from .dgp import DgpConfig, NcDgpConfig, generate_iv_dataset, generate_nc_dataset
from .errors import ConfigurationError, QoplError
from .evaluation import ContextDistribution, regret
from .learners import (FitConfig, candidate_search, fit_alternating, fit_greedy,
                       fit_nc_regularized, fit_pessimistic_regularized, fit_solution_set)
from .loss import LossConfig

log = logging.getLogger(__name__)

METHODS = ("greedy", "pessimistic", "solution_set", "alternating", "nc_regularized")
CSV_HEADER = ("method", "n", "alpha", "p", "mean_regret", "std_regret", "n_reps", "base_seed")

PRESETS = {
    "desk": {"n_grid": (250, 1000, 3000), "replications": 50},
    "full": {"n_grid": tuple(range(100, 3001, 50)), "replications": 200},
}


@dataclass(frozen=True)
class ExperimentConfig:
    n_grid: tuple[int, ...] = tuple(range(100, 3001, 50))
    alphas: tuple[float, ...] = (0.15, 0.2, 0.25)
    p_values: tuple[float, ...] = (0.7, 0.8)
    methods: tuple[str, ...] = ("greedy", "pessimistic")
    replications: int = 200
    base_seed: int = 0
    workers: int = 1
    failure_budget: float = 0.1
    fit: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)
    dgp: dict = field(default_factory=dict)
    nc: dict = field(default_factory=dict)
    out_csv: str | None = None
    out_plots: str | None = None

    def validate(self) -> None:
        if int(self.replications) < 1:
            raise ConfigurationError("replications must be a positive integer")
        if not self.n_grid or any(int(n) < 1 for n in self.n_grid):
            raise ConfigurationError("n_grid must hold positive sample sizes")
        if not self.alphas or any(not 0 < a < 1 for a in self.alphas):
            raise ConfigurationError("alphas must lie in (0, 1)")
        if not self.p_values or any(not 0 <= p <= 1 for p in self.p_values):
            raise ConfigurationError("p_values must lie in [0, 1]")
        unknown = set(self.methods) - set(METHODS)
        if not self.methods or unknown:
            raise ConfigurationError(f"unknown methods: {sorted(unknown)}")
        if int(self.workers) < 1:
            raise ConfigurationError("workers must be a positive integer")
        if self.base_seed < 0:
            raise ConfigurationError("base_seed must be unsigned")
        self.fit_config()
        self.loss_config()
        DgpConfig(n=1, alpha=self.alphas[0], **self.dgp).validate()
        NcDgpConfig(n=1, alpha=self.alphas[0], **self.nc).validate()

    def fit_config(self) -> FitConfig:
        try:
            return FitConfig(**self.fit)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    def loss_config(self) -> LossConfig:
        try:
            return LossConfig(**self.loss)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    def with_preset(self, name: str) -> "ExperimentConfig":
        if name not in PRESETS:
            raise ConfigurationError(f"unknown preset {name!r}")
        return replace(self, **PRESETS[name])


class RegretRow(NamedTuple):
    method: str
    n: int
    alpha: float
    p: float
    mean_regret: float
    std_regret: float
    n_reps: int
    base_seed: int


@dataclass
class RegretCurve:
    rows: list[RegretRow] = field(default_factory=list)
    failures: dict = field(default_factory=dict)

    def sorted_rows(self) -> list[RegretRow]:
        return sorted(self.rows, key=lambda r: (r.method, r.alpha, r.p, r.n))

    def get(self, method: str, n: int, alpha: float, p: float) -> RegretRow:
        for row in self.rows:
            if (row.method, row.n) == (method, n) and math.isclose(row.alpha, alpha) \
                    and math.isclose(row.p, p):
                return row
        raise KeyError((method, n, alpha, p))

    def worst_failure_rate(self) -> float:
        rates = [f / total for f, total in self.failures.values() if total]
        return max(rates, default=0.0)


def replication_seed(base_seed: int, alpha_index: int, p_index: int, n: int,
                     replication: int, stream: int = 0) -> int:
    """Stable 64-bit seed for one replication; ``stream`` separates data from fitting."""
    ss = np.random.SeedSequence([int(base_seed), alpha_index, p_index, int(n),
                                 int(replication), stream])
    return int(ss.generate_state(1, np.uint64)[0])


class _Task(NamedTuple):
    alpha_index: int
    p_index: int
    n: int
    replication: int
    alpha: float
    p: float


def _run_replication(config: ExperimentConfig, task: _Task) -> dict[str, float | None]:
    data_seed = replication_seed(config.base_seed, task.alpha_index, task.p_index, task.n,
                                 task.replication, 0)
    fit_seed = replication_seed(config.base_seed, task.alpha_index, task.p_index, task.n,
                                task.replication, 1)
    fit_cfg = replace(config.fit_config(), seed=fit_seed)
    loss_cfg = config.loss_config()
    out: dict[str, float | None] = {}
    iv_methods = [m for m in config.methods if m != "nc_regularized"]
    if iv_methods:
        dgp = DgpConfig(n=task.n, alpha=task.alpha, p_structured=task.p, seed=data_seed,
                        **config.dgp)
        dist = ContextDistribution.gaussian(dgp.rho)
        try:
            dataset = generate_iv_dataset(dgp)
            greedy = fit_greedy(dataset, task.alpha, None, fit_cfg, loss_cfg)
        except (QoplError, np.linalg.LinAlgError) as exc:
            log.warning("greedy fit failed (%s): %s", task, exc)
            return {m: None for m in config.methods}
        candidates = None
        for method in iv_methods:
            try:
                if method == "greedy":
                    fit = greedy
                elif method == "alternating":
                    fit = fit_alternating(dataset, task.alpha, None, fit_cfg, loss_cfg)
                else:
                    if candidates is None:
                        candidates = candidate_search(dataset, task.alpha, None, fit_cfg,
                                                      loss_cfg, greedy, dist)
                    learner = (fit_pessimistic_regularized if method == "pessimistic"
                               else fit_solution_set)
                    fit = learner(dataset, task.alpha, None, fit_cfg, loss_cfg, greedy,
                                  dist, candidates)
                out[method] = regret(fit.policy, dgp, dist)
            except (QoplError, np.linalg.LinAlgError) as exc:
                log.warning("%s fit failed (%s): %s", method, task, exc)
                out[method] = None
    if "nc_regularized" in config.methods:
        try:
            nc_cfg = NcDgpConfig(n=task.n, alpha=task.alpha, seed=data_seed, **config.nc)
            nc_data = generate_nc_dataset(nc_cfg)
            dist = ContextDistribution.gaussian(nc_cfg.rho)
            fit = fit_nc_regularized(nc_data, task.alpha, fit_config=fit_cfg,
                                     loss_config=loss_cfg, dist=dist)
            out["nc_regularized"] = regret(fit.policy, nc_cfg, dist)
        except (QoplError, np.linalg.LinAlgError) as exc:
            log.warning("nc_regularized fit failed (%s): %s", task, exc)
            out["nc_regularized"] = None
    return out


def _tasks(config: ExperimentConfig) -> list[_Task]:
    return [_Task(ai, pi, int(n), r, float(alpha), float(p))
            for ai, alpha in enumerate(config.alphas)
            for pi, p in enumerate(config.p_values)
            for n in config.n_grid
            for r in range(int(config.replications))]


def _star(args):
    return _run_replication(*args)


def run_experiment(config: ExperimentConfig) -> RegretCurve:
    """Run every (alpha, p, n) cell for ``config.replications`` replications.

    Results land in pre-indexed slots and are reduced sequentially, so the output
    does not depend on the number of workers.
    """
    config.validate()
    tasks = _tasks(config)
    log.info("running %d replications with %d worker(s)", len(tasks), config.workers)
    if config.workers == 1:
        results = [_run_replication(config, t) for t in tasks]
    else:
        chunk = max(1, len(tasks) // (config.workers * 8))
        with ProcessPoolExecutor(max_workers=int(config.workers)) as pool:
            results = list(pool.map(_star, [(config, t) for t in tasks], chunksize=chunk))

    cells: dict[tuple, list] = {}
    for task, res in zip(tasks, results):
        for method in config.methods:
            cells.setdefault((method, task.n, task.alpha, task.p), []).append(res[method])
    curve = RegretCurve()
    for (method, n, alpha, p), values in cells.items():
        ok = np.array([v for v in values if v is not None], dtype=float)
        curve.failures[(method, n, alpha, p)] = (len(values) - len(ok), len(values))
        if len(ok) == 0:
            continue
        curve.rows.append(RegretRow(method, n, alpha, p, float(ok.mean()), float(ok.std()),
                                    len(ok), int(config.base_seed)))
    curve.rows = curve.sorted_rows()
    return curve


# --- CSV -----------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(curve: RegretCurve, path: str | Path | IO[str]) -> None:
    """Write ``curve`` to a path, or to an already open text stream."""
    if hasattr(path, "write"):
        _write_rows(curve, path)
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _write_rows(curve, fh)


def _write_rows(curve: RegretCurve, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in curve.sorted_rows():
        writer.writerow([row.method] + [_fmt(v) for v in row[1:]])


def read_csv(path: str | Path) -> RegretCurve:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ConfigurationError(f"unexpected CSV header in {path}")
        rows = [RegretRow(r[0], int(r[1]), float(r[2]), float(r[3]), float(r[4]),
                          float(r[5]), int(r[6]), int(r[7])) for r in reader if r]
    return RegretCurve(rows)


# --- config files ----------------------------------------------------------------

_LIST_KEYS = {"n_grid": int, "alphas": float, "p_values": float, "methods": str}
_SCALAR_KEYS = {"replications": int, "base_seed": int, "workers": int,
                "failure_budget": float, "out_csv": str, "out_plots": str}
_SECTIONS = {"fit": FitConfig, "loss": LossConfig, "dgp": DgpConfig, "nc": NcDgpConfig}


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _parse_list(text: str, cast) -> tuple:
    items = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        if cast is int and ":" in part:
            start, stop, step = (int(v) for v in part.split(":"))
            items.extend(range(start, stop + 1, step))
        else:
            items.append(cast(part))
    return tuple(items)


def read_key_values(path: str | Path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = value
    return out


def parse_experiment_config(values: dict[str, str],
                            base: ExperimentConfig | None = None) -> ExperimentConfig:
    kwargs: dict = {}
    sections: dict[str, dict] = {name: {} for name in _SECTIONS}
    preset = None
    for key, value in values.items():
        try:
            if key == "preset":
                preset = value
            elif key in _LIST_KEYS:
                kwargs[key] = _parse_list(value, _LIST_KEYS[key])
            elif key in _SCALAR_KEYS:
                kwargs[key] = _SCALAR_KEYS[key](value)
            elif "." in key and key.split(".", 1)[0] in _SECTIONS:
                section, name = key.split(".", 1)
                allowed = {f.name for f in fields(_SECTIONS[section])}
                if name not in allowed or name in ("n", "alpha", "seed", "p_structured"):
                    raise ConfigurationError(f"unknown key {key!r}")
                if name == "beta_true":
                    sections[section][name] = _parse_list(value, float)
                else:
                    sections[section][name] = _parse_scalar(value)
            else:
                raise ConfigurationError(f"unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"bad value for {key!r}: {value!r}") from exc
    config = base or ExperimentConfig()
    if preset:
        config = config.with_preset(preset)
    kwargs.update({k: v for k, v in sections.items() if v})
    return replace(config, **kwargs)


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    return parse_experiment_config(read_key_values(path))
