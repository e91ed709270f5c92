"""Interventional value and regret of linear policies.

Under centred Gaussian contexts the value of a linear hypothesis under a linear
threshold policy has a closed form: with ``T = gate_h . x`` (the action effect) and
``T' = gate_pi . x`` (the policy score),

    E[T 1{T' > 0}] = Cov(T, T') / (sd(T') * sqrt(2 pi)).

The baseline part of the hypothesis has mean zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

GAUSSIAN = "gaussian"
UNIVARIATE = "univariate"
EMPIRICAL = "empirical"


@dataclass(frozen=True)
class LinearPolicy:
    """Deterministic threshold policy: act iff ``gate . x > 0`` (ties act 0)."""

    gate: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gate", np.atleast_1d(np.asarray(self.gate, dtype=float)))

    def act(self, x) -> np.ndarray | int:
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1 and x.size == self.gate.size:
            return int(x @ self.gate > 0)
        x = x.reshape(-1, self.gate.size)
        return (x @ self.gate > 0).astype(np.int8)

    __call__ = act


@dataclass(frozen=True)
class ContextDistribution:
    kind: str = GAUSSIAN
    rho: float = 0.95
    contexts: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, UNIVARIATE, EMPIRICAL):
            raise ConfigurationError(f"unknown context distribution {self.kind!r}")
        if not -1.0 < self.rho < 1.0:
            raise ConfigurationError("rho must lie in (-1, 1)")
        if self.kind == EMPIRICAL:
            if self.contexts is None or len(self.contexts) == 0:
                raise ConfigurationError("empirical distribution needs contexts")
            object.__setattr__(self, "contexts",
                               np.atleast_2d(np.asarray(self.contexts, dtype=float)))

    @classmethod
    def gaussian(cls, rho: float = 0.95) -> "ContextDistribution":
        return cls(GAUSSIAN, rho)

    @classmethod
    def univariate(cls) -> "ContextDistribution":
        return cls(UNIVARIATE, 0.0)

    @classmethod
    def empirical(cls, contexts) -> "ContextDistribution":
        return cls(EMPIRICAL, 0.0, contexts)

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == UNIVARIATE:
            return rng.standard_normal((m, 1))
        if self.kind == EMPIRICAL:
            return self.contexts[rng.integers(0, len(self.contexts), size=m)]
        cov = np.array([[1.0, self.rho], [self.rho, 1.0]])
        return rng.standard_normal((m, 2)) @ np.linalg.cholesky(cov).T


@dataclass(frozen=True)
class ValueEstimate:
    value: float
    std_error: float = 0.0
    method: str = "closed_form"
    m: int | None = None
    seed: int | None = None


def context_distribution_for(dataset) -> ContextDistribution:
    if dataset.setting == "appendix":
        return ContextDistribution.univariate()
    rho = getattr(dataset.meta, "rho", 0.95) if dataset.meta is not None else 0.95
    return ContextDistribution.gaussian(rho)


def value_matrix(gates_h: np.ndarray, gates_pi: np.ndarray,
                 dist: ContextDistribution) -> np.ndarray:
    """Closed-form values ``v[i, j]`` of hypothesis gate ``i`` under policy gate ``j``.

    Only the action-effect coefficients enter, since the baseline has mean zero.
    """
    gh = np.atleast_2d(np.asarray(gates_h, dtype=float))
    gp = np.atleast_2d(np.asarray(gates_pi, dtype=float))
    if dist.kind == UNIVARIATE:
        return gh[:, :1] * np.sign(gp[:, 0])[None, :] * _INV_SQRT_2PI
    if dist.kind != GAUSSIAN:
        raise ConfigurationError("closed form requires a Gaussian or univariate law")
    cov = np.array([[1.0, dist.rho], [dist.rho, 1.0]])
    sd = np.sqrt(np.einsum("ij,jk,ik->i", gp, cov, gp))
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(sd[:, None] > 0, (gp @ cov) / sd[:, None], 0.0)
    return gh @ scaled.T * _INV_SQRT_2PI


def greedy_values(gates: np.ndarray, dist: ContextDistribution) -> np.ndarray:
    """Value of each hypothesis gate under its own greedy policy (``sd(T) / sqrt(2 pi)``)."""
    g = np.atleast_2d(np.asarray(gates, dtype=float))
    if dist.kind == UNIVARIATE:
        return np.abs(g[:, 0]) * _INV_SQRT_2PI
    cov = np.array([[1.0, dist.rho], [dist.rho, 1.0]])
    return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", g, cov, g), 0.0)) * _INV_SQRT_2PI


def _gate_of(h_beta) -> np.ndarray:
    b = np.asarray(h_beta, dtype=float)
    return b[len(b) // 2:]


def value_closed_form(h_beta, policy: LinearPolicy,
                      dist: ContextDistribution = ContextDistribution()) -> ValueEstimate:
    v = value_matrix(_gate_of(h_beta)[None, :], policy.gate[None, :], dist)[0, 0]
    return ValueEstimate(float(v))


def value_monte_carlo(h_beta, policy: LinearPolicy, dist: ContextDistribution = ContextDistribution(),
                      m: int = 1_000_000, seed: int = 0) -> ValueEstimate:
    """Sample mean of ``h(pi(x), x)`` over ``m`` context draws, with its standard error."""
    if m < 1:
        raise ConfigurationError("m must be at least 1")
    rng = np.random.default_rng(seed)
    beta = np.asarray(h_beta, dtype=float)
    k = len(beta) // 2
    x = dist.sample(m, rng)[:, :k]
    a = (x @ policy.gate > 0)
    h = x @ beta[:k] + a * (x @ beta[k:])
    se = float(h.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    return ValueEstimate(float(h.mean()), se, "monte_carlo", m, seed)


def oracle_gate(beta_true) -> np.ndarray:
    return _gate_of(beta_true)


def regret(policy: LinearPolicy, dgp_config=None,
           dist: ContextDistribution | None = None, beta_true=None) -> float:
    """Oracle value minus the policy's value, both in closed form under ``beta_true``."""
    if beta_true is None:
        beta_true = dgp_config.beta_true
    if dist is None:
        rho = getattr(dgp_config, "rho", 0.95)
        dist = ContextDistribution.univariate() if len(beta_true) == 2 \
            else ContextDistribution.gaussian(rho)
    gate = oracle_gate(beta_true)
    vals = value_matrix(gate[None, :], np.vstack([gate, policy.gate]), dist)[0]
    return float(vals[0] - vals[1])
