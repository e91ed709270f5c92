"""Synthetic confounded data generators with known structural quantile functions.

Three generators are provided:

* :func:`generate_iv_dataset` - two-dimensional context, scalar instrument,
  treatment score biased by the sign of ``x1`` for a structured fraction of samples.
* :func:`generate_appendix_dataset` - the one-dimensional variant with
  ``Y = X + 3XA + eps``.
* :func:`generate_nc_dataset` - negative-control exposure/outcome pair loaded on a
  latent confounder, plus a uniformly drawn augmented action ``a_prime``.

In every generator the structural error ``eps`` has its ``alpha``-quantile at zero,
so the structural quantile function is the noiseless part of the outcome.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .errors import ConfigurationError

BETA_TRUE = (1.0, 1.0, 3.0, 2.0)
APPENDIX_BETA_TRUE = (1.0, 3.0)

IV_CSV_HEADER = ("x1", "x2", "z", "a", "y")
NC_CSV_HEADER = ("x1", "x2", "e", "v", "a", "y", "a_prime")


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha < 1.0) or not math.isfinite(alpha):
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha!r}")


def _check_n(n: int) -> None:
    if int(n) != n or n < 0:
        raise ConfigurationError(f"n must be a nonnegative integer, got {n!r}")


def _check_fraction(name: str, value: float) -> None:
    if not (0.0 <= value <= 1.0):
        raise ConfigurationError(f"{name} must lie in [0, 1], got {value!r}")


def _check_rho(rho: float) -> None:
    if not (-1.0 < rho < 1.0):
        raise ConfigurationError(f"rho must lie in (-1, 1), got {rho!r}")


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the two-dimensional IV generator."""

    n: int
    alpha: float
    rho: float = 0.95
    p_structured: float = 0.7
    b_plus: float = 8.0
    b_minus: float = -5.0
    beta_true: tuple[float, ...] = BETA_TRUE
    seed: int = 0

    def validate(self) -> None:
        _check_n(self.n)
        _check_alpha(self.alpha)
        _check_rho(self.rho)
        _check_fraction("p_structured", self.p_structured)
        if len(self.beta_true) != 4:
            raise ConfigurationError("beta_true must have 4 entries")
        if self.seed < 0:
            raise ConfigurationError("seed must be unsigned")


@dataclass(frozen=True)
class AppendixConfig:
    """Parameters of the one-dimensional IV generator (``p_noise`` is the noise fraction)."""

    n: int
    alpha: float = 0.2
    p_noise: float = 0.5
    gamma: float = 8.0
    seed: int = 0
    beta_true: tuple[float, ...] = APPENDIX_BETA_TRUE
    rho: float = 0.0

    def validate(self) -> None:
        _check_n(self.n)
        _check_alpha(self.alpha)
        _check_fraction("p_noise", self.p_noise)
        if self.seed < 0:
            raise ConfigurationError("seed must be unsigned")


@dataclass(frozen=True)
class NcDgpConfig:
    """Parameters of the negative-control generator.

    ``kappa`` is the loading of the latent confounder ``U`` on the structural error;
    ``kappa = 0`` switches confounding off.
    """

    n: int
    alpha: float
    kappa: float = 1.0
    nu_scale: float = 1.0
    e_noise: float = 0.5
    v_noise: float = 0.5
    u_action: float = 1.0
    rho: float = 0.5
    beta_true: tuple[float, ...] = BETA_TRUE
    seed: int = 0

    def validate(self) -> None:
        _check_n(self.n)
        _check_alpha(self.alpha)
        _check_rho(self.rho)
        if self.nu_scale <= 0 or self.e_noise <= 0 or self.v_noise <= 0:
            raise ConfigurationError("noise scales must be positive")
        if len(self.beta_true) != 4:
            raise ConfigurationError("beta_true must have 4 entries")
        if self.seed < 0:
            raise ConfigurationError("seed must be unsigned")

    @property
    def eps_shift(self) -> float:
        """Location of ``eps`` making its marginal ``alpha``-quantile exactly zero."""
        return -norm.ppf(self.alpha) * math.hypot(self.kappa, self.nu_scale)


class IvSample(NamedTuple):
    x1: float
    x2: float
    z: float
    a: int
    y: float


class NcSample(NamedTuple):
    x1: float
    x2: float
    e: float
    v: float
    a: int
    y: float
    a_prime: int


@dataclass(frozen=True, eq=False)
class IvDataset:
    """Column-oriented IV sample.

    ``setting`` is ``"main"`` (contexts ``x1, x2``) or ``"appendix"`` (scalar context
    stored in ``x1``; ``x2`` is identically zero).
    """

    x1: np.ndarray
    x2: np.ndarray
    z: np.ndarray
    a: np.ndarray
    y: np.ndarray
    alpha: float
    meta: DgpConfig | AppendixConfig | None = None
    setting: str = "main"
    eps: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n(self) -> int:
        return len(self.y)

    def __iter__(self) -> Iterator[IvSample]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> IvSample:
        return IvSample(float(self.x1[i]), float(self.x2[i]), float(self.z[i]),
                        int(self.a[i]), float(self.y[i]))

    @property
    def samples(self) -> list[IvSample]:
        return list(self)

    def columns(self) -> dict[str, np.ndarray]:
        return {"x1": self.x1, "x2": self.x2, "z": self.z, "a": self.a, "y": self.y,
                "x": self.x1}

    def contexts(self) -> np.ndarray:
        if self.setting == "appendix":
            return self.x1[:, None]
        return np.column_stack([self.x1, self.x2])

    @classmethod
    def from_arrays(cls, x1, x2, z, a, y, alpha: float, setting: str = "main",
                    meta=None) -> "IvDataset":
        arrays = [np.asarray(v, dtype=float) for v in (x1, x2, z, y)]
        a = np.asarray(a).astype(np.int8)
        if not all(len(v) == len(a) for v in arrays):
            raise ConfigurationError("column lengths differ")
        if a.size and not np.isin(a, (0, 1)).all():
            raise ConfigurationError("actions must be binary")
        return cls(arrays[0], arrays[1], arrays[2], a, arrays[3], alpha, meta, setting)


@dataclass(frozen=True, eq=False)
class NcDataset:
    """Column-oriented negative-control sample with augmented action ``a_prime``."""

    x1: np.ndarray
    x2: np.ndarray
    e: np.ndarray
    v: np.ndarray
    a: np.ndarray
    y: np.ndarray
    a_prime: np.ndarray
    alpha: float
    meta: NcDgpConfig | None = None
    eps: np.ndarray | None = field(default=None, repr=False)
    u: np.ndarray | None = field(default=None, repr=False)
    setting: str = "main"

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n(self) -> int:
        return len(self.y)

    def __iter__(self) -> Iterator[NcSample]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> NcSample:
        return NcSample(float(self.x1[i]), float(self.x2[i]), float(self.e[i]),
                        float(self.v[i]), int(self.a[i]), float(self.y[i]),
                        int(self.a_prime[i]))

    @property
    def samples(self) -> list[NcSample]:
        return list(self)

    def columns(self) -> dict[str, np.ndarray]:
        return {"x1": self.x1, "x2": self.x2, "e": self.e, "v": self.v, "a": self.a,
                "y": self.y, "a_prime": self.a_prime}

    def contexts(self) -> np.ndarray:
        return np.column_stack([self.x1, self.x2])


def _correlated_normals(rng: np.random.Generator, n: int, k: int, rho: float) -> np.ndarray:
    corr = np.full((k, k), rho)
    np.fill_diagonal(corr, 1.0)
    chol = np.linalg.cholesky(corr)
    return rng.standard_normal((n, k)) @ chol.T


def generate_iv_dataset(config: DgpConfig) -> IvDataset:
    """Draw an offline IV dataset.

    The first ``floor(p_structured * n)`` samples use the biased treatment score;
    the rest draw the score from a standard normal.
    """
    config.validate()
    n = int(config.n)
    rng = np.random.default_rng(config.seed)
    xz = _correlated_normals(rng, n, 3, config.rho)
    x1, x2, z = xz[:, 0], xz[:, 1], xz[:, 2]
    eps = rng.standard_normal(n) - norm.ppf(config.alpha)
    score = rng.standard_normal(n)
    n_struct = math.floor(config.p_structured * n)
    s = slice(0, n_struct)
    score[s] = (x1[s] + 0.5 * x2[s] ** 2 + z[s]
                + np.where(x1[s] >= 0, config.b_plus, config.b_minus) + eps[s])
    a = (rng.random(n) < expit(score)).astype(np.int8)
    b1, b2, b3, b4 = config.beta_true
    y = b1 * x1 + b2 * x2 + a * (b3 * x1 + b4 * x2) + eps
    return IvDataset(x1, x2, z, a, y, config.alpha, config, "main", eps)


def generate_appendix_dataset(n: int, alpha: float = 0.2, p_noise: float = 0.5,
                              gamma: float = 8.0, seed: int = 0) -> IvDataset:
    """Draw the one-dimensional IV dataset with reward ``X + 3XA + eps``.

    The first ``floor(p_noise * n)`` samples draw the treatment score as pure noise.
    The context is stored in ``x1``; ``x2`` is zero.
    """
    config = AppendixConfig(n=n, alpha=alpha, p_noise=p_noise, gamma=gamma, seed=seed)
    config.validate()
    n = int(n)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    z = rng.standard_normal(n)
    eps = rng.standard_normal(n) - norm.ppf(alpha)
    t = rng.standard_normal(n)
    n_noise = math.floor(p_noise * n)
    s = slice(n_noise, n)
    t[s] = x[s] + z[s] + eps[s] + gamma * (x[s] > 0)
    a = (rng.random(n) < expit(t)).astype(np.int8)
    y = x + 3.0 * x * a + eps
    return IvDataset(x, np.zeros(n), z, a, y, alpha, config, "appendix", eps)


def generate_nc_dataset(config: NcDgpConfig) -> NcDataset:
    """Draw a negative-control dataset.

    ``eps = kappa * U + nu`` with ``nu`` Gaussian and shifted so that
    ``P(eps <= 0) = alpha``; ``E`` and ``V`` are noisy copies of ``U``; the action
    depends on ``x1`` and ``U``.
    """
    config.validate()
    n = int(config.n)
    rng = np.random.default_rng(config.seed)
    x = _correlated_normals(rng, n, 2, config.rho)
    x1, x2 = x[:, 0], x[:, 1]
    u = rng.standard_normal(n)
    nu = config.nu_scale * rng.standard_normal(n)
    eps = config.kappa * u + nu + config.eps_shift
    e = u + config.e_noise * rng.standard_normal(n)
    v = u + config.v_noise * rng.standard_normal(n)
    a = (rng.random(n) < expit(x1 + config.u_action * u)).astype(np.int8)
    a_prime = rng.integers(0, 2, size=n).astype(np.int8)
    b1, b2, b3, b4 = config.beta_true
    y = b1 * x1 + b2 * x2 + a * (b3 * x1 + b4 * x2) + eps
    return NcDataset(x1, x2, e, v, a, y, a_prime, config.alpha, config, eps, u)


def structural_quantile(a, x: Sequence[float] | np.ndarray, beta: Sequence[float]) -> float:
    """``beta1*x1 + beta2*x2 + a*(beta3*x1 + beta4*x2)``; 2-entry beta means the 1-D model."""
    beta = np.asarray(beta, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if beta.size == 2:
        return float(beta[0] * x[0] + a * beta[1] * x[0])
    return float(beta[0] * x[0] + beta[1] * x[1] + a * (beta[2] * x[0] + beta[3] * x[1]))


def oracle_policy(x: Sequence[float] | np.ndarray) -> int:
    """Optimal action of the two-dimensional model: 1 iff ``3*x1 + 2*x2 > 0``."""
    return int(3.0 * x[0] + 2.0 * x[1] > 0)


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_dataset_csv(dataset: IvDataset | NcDataset, path: str | Path) -> None:
    """Dump a dataset as CSV with 17 significant digits per float."""
    if isinstance(dataset, NcDataset):
        header, cols = NC_CSV_HEADER, [dataset.x1, dataset.x2, dataset.e, dataset.v,
                                       dataset.a, dataset.y, dataset.a_prime]
    else:
        header, cols = IV_CSV_HEADER, [dataset.x1, dataset.x2, dataset.z, dataset.a,
                                       dataset.y]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*cols):
            writer.writerow([_fmt(v) for v in row])
