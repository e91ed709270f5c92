"""Fenchel-dual minimax loss for quantile conditional moment restrictions.

For a residual vector ``w`` and a linear test class spanned by the columns of an
``n x d`` design matrix ``M``, the dual loss is

    sup_c  (1/n) w' M c - (1/(2n)) c' M'M c,

attained at ``c = (M'M)^{-1} M'w``. A ridge ``lam`` replaces the normal matrix by
``M'M + lam I`` when solving for ``c``; the value is still evaluated with the
unridged quadratic term. ``lam = 0`` gives ``w' P w / (2n)`` with ``P`` the
projector onto the column span of ``M``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import ConfigurationError, NumericalError, UnsupportedModeError
from .features import DesignMatrix, TestBasis, build_design_matrix, hypothesis_design

HARD = "hard"
SMOOTHED = "smoothed"

_CHUNK = 512


@dataclass(frozen=True)
class LossConfig:
    """``ridge=None`` selects ``1e-8 * trace(M'M) / d``."""

    ridge: float | None = None
    smoothing_temperature: float = 5.0
    mode: str = SMOOTHED

    def __post_init__(self):
        if self.ridge is not None and self.ridge < 0:
            raise ConfigurationError("ridge must be nonnegative")
        if not self.smoothing_temperature > 0:
            raise ConfigurationError("smoothing_temperature must be positive")
        if self.mode not in (HARD, SMOOTHED):
            raise ConfigurationError(f"unknown loss mode {self.mode!r}")


@dataclass(frozen=True)
class ResidualVector:
    w: np.ndarray
    mode: str
    temperature: float | None = None


@dataclass(frozen=True)
class InnerSolution:
    theta_coef: np.ndarray
    loss_value: float


def default_ridge(m: np.ndarray) -> float:
    d = m.shape[1]
    return 1e-8 * float(np.einsum("ij,ij->", m, m)) / d if d else 0.0


def hypothesis_matrix(dataset, actions: np.ndarray | None = None) -> np.ndarray:
    """Rows ``phi(a_i, x_i)`` so that ``h = hypothesis_matrix @ beta``."""
    a = dataset.a if actions is None else actions
    return hypothesis_design(a, dataset.contexts())


def residual_values(h: np.ndarray, y: np.ndarray, alpha: float, mode: str,
                    temperature: float = 5.0) -> np.ndarray:
    """``1{y <= h} - alpha`` or its logistic smoothing; broadcasts over columns of ``h``."""
    if y.ndim < h.ndim:
        y = y.reshape(y.shape + (1,) * (h.ndim - y.ndim))
    if mode == HARD:
        return (y <= h).astype(float) - alpha
    if mode == SMOOTHED:
        return expit(temperature * (h - y)) - alpha
    raise ConfigurationError(f"unknown loss mode {mode!r}")


def residuals(dataset, beta, alpha: float, config: LossConfig = LossConfig()) -> ResidualVector:
    phi = hypothesis_matrix(dataset)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (phi.shape[1],):
        raise ConfigurationError(f"beta must have {phi.shape[1]} entries")
    w = residual_values(phi @ beta, dataset.y, alpha, config.mode,
                        config.smoothing_temperature)
    temp = config.smoothing_temperature if config.mode == SMOOTHED else None
    return ResidualVector(w, config.mode, temp)


class QuadraticDual:
    """Closed-form inner maximiser bound to one design matrix.

    The factorisation of ``M'M + ridge I`` is computed once; ``loss`` accepts either a
    residual vector or an ``(n, k)`` block of residual columns.
    """

    def __init__(self, m: np.ndarray, ridge: float | None = None):
        self.m = np.asarray(m, dtype=float)
        self.n, self.d = self.m.shape
        if self.n == 0:
            raise ConfigurationError("empty design matrix")
        self.ridge = default_ridge(self.m) if ridge is None else float(ridge)
        self.gram = self.m.T @ self.m
        normal = self.gram + self.ridge * np.eye(self.d)
        try:
            factor = linalg.cho_factor(normal, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError(
                "normal matrix M'M is singular; use a positive ridge") from exc
        if self.ridge == 0.0 and np.linalg.cond(normal) > 1e13:
            raise NumericalError("normal matrix M'M is singular; use a positive ridge")
        self.inv = linalg.cho_solve(factor, np.eye(self.d))

    def coef(self, w: np.ndarray) -> np.ndarray:
        return self.inv @ (self.m.T @ w)

    def loss(self, w: np.ndarray) -> np.ndarray | float:
        g = self.m.T @ w
        c = self.inv @ g
        val = (np.sum(g * c, axis=0) - 0.5 * np.sum(c * (self.gram @ c), axis=0)) / self.n
        return float(val) if np.ndim(val) == 0 else val

    def loss_and_dw(self, w: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """Loss, its derivative with respect to ``w``, and the test coefficients."""
        g = self.m.T @ w
        c = self.inv @ g
        val = (g @ c - 0.5 * c @ (self.gram @ c)) / self.n
        # exact derivative of the ridged value; reduces to M c / n at ridge 0
        u = c + self.ridge * (self.inv @ c)
        return float(val), self.m @ u / self.n, c


def inner_maximize(w, dm: DesignMatrix | np.ndarray, ridge: float = 0.0) -> InnerSolution:
    """Maximise ``(1/n) w'Mc - (1/(2n)) c'M'Mc`` over test coefficients ``c``."""
    w = np.asarray(getattr(w, "w", w), dtype=float)
    m = dm.m if isinstance(dm, DesignMatrix) else np.asarray(dm, dtype=float)
    if m.shape[0] != w.shape[0]:
        raise ConfigurationError("design matrix rows must match residual length")
    dual = QuadraticDual(m, ridge)
    c = dual.coef(w)
    return InnerSolution(c, dual.loss(w))


class MinimaxLoss:
    """Empirical dual loss of one IV dataset as a function of the hypothesis coefficients."""

    def __init__(self, dataset, alpha: float, basis: TestBasis,
                 config: LossConfig = LossConfig(), design: DesignMatrix | None = None):
        if len(dataset) == 0:
            raise ConfigurationError("dataset is empty")
        self.alpha = alpha
        self.config = config
        self.phi = hypothesis_matrix(dataset)
        self.y = dataset.y
        dm = design if design is not None else build_design_matrix(dataset, basis)
        self.dual = QuadraticDual(dm.m, config.ridge)
        self.n = len(self.y)

    @property
    def dim(self) -> int:
        return self.phi.shape[1]

    def residuals(self, beta: np.ndarray) -> np.ndarray:
        return residual_values(self.phi @ beta, self.y, self.alpha, self.config.mode,
                               self.config.smoothing_temperature)

    def value(self, beta) -> float:
        return self.dual.loss(self.residuals(np.asarray(beta, dtype=float)))

    def value_and_grad(self, beta) -> tuple[float, np.ndarray]:
        if self.config.mode != SMOOTHED:
            raise UnsupportedModeError("gradient requires the smoothed loss")
        t = self.config.smoothing_temperature
        s = expit(t * (self.phi @ beta - self.y))
        val, dw, _ = self.dual.loss_and_dw(s - self.alpha)
        grad = self.phi.T @ (dw * (t * s * (1.0 - s)))
        return val, grad

    def gradient(self, beta) -> np.ndarray:
        return self.value_and_grad(np.asarray(beta, dtype=float))[1]

    def batch_values(self, betas: np.ndarray) -> np.ndarray:
        """Loss for every row of ``betas``, evaluated in column chunks."""
        betas = np.atleast_2d(betas)
        out = np.empty(len(betas))
        for start in range(0, len(betas), _CHUNK):
            block = betas[start:start + _CHUNK]
            w = residual_values(self.phi @ block.T, self.y, self.alpha, self.config.mode,
                                self.config.smoothing_temperature)
            out[start:start + _CHUNK] = self.dual.loss(w)
        return out

    def hessian(self, beta, step: float = 1e-5) -> np.ndarray:
        """Central-difference Hessian of the smoothed loss (symmetrised)."""
        beta = np.asarray(beta, dtype=float)
        k = len(beta)
        hess = np.empty((k, k))
        for j in range(k):
            e = np.zeros(k)
            e[j] = step
            hess[:, j] = (self.gradient(beta + e) - self.gradient(beta - e)) / (2 * step)
        return 0.5 * (hess + hess.T)


def empirical_loss(dataset, beta, alpha: float, basis: TestBasis,
                   config: LossConfig = LossConfig()) -> float:
    return MinimaxLoss(dataset, alpha, basis, config).value(beta)


def loss_gradient(dataset, beta, alpha: float, basis: TestBasis,
                  config: LossConfig = LossConfig()) -> np.ndarray:
    """Gradient of the smoothed dual loss in the hypothesis coefficients."""
    if config.mode != SMOOTHED:
        raise UnsupportedModeError("gradient requires the smoothed loss")
    return MinimaxLoss(dataset, alpha, basis, config).gradient(beta)


def excess_loss(dataset, beta, beta_min, alpha: float, basis: TestBasis,
                config: LossConfig = LossConfig()) -> float:
    """``L(beta) - L(beta_min)`` clamped at zero (``beta_min`` is only approximate)."""
    loss = MinimaxLoss(dataset, alpha, basis, config)
    return max(0.0, loss.value(beta) - loss.value(beta_min))


# --- negative controls -------------------------------------------------------

@dataclass(frozen=True)
class BridgeFeatures:
    """Linear bridge ``h2(v, a, x) = features(v, a, x1, x2) @ coef``."""

    fn: object = field(compare=False)
    k: int
    names: tuple[str, ...] = ()

    def __call__(self, v, a, x1, x2) -> np.ndarray:
        return np.asarray(self.fn(v, np.asarray(a, dtype=float), x1, x2), dtype=float)


def _bridge_default(v, a, x1, x2):
    return np.column_stack([np.ones_like(v), a, v, a * v])


DEFAULT_BRIDGE = BridgeFeatures(_bridge_default, 4, ("1", "a", "v", "a*v"))


def _nc_basis1(c):
    e, a, x1, x2 = c["e"], c["a"].astype(float), c["x1"], c["x2"]
    return np.column_stack([np.ones_like(e), a, e, a * e, x1, x2, a * x1, a * x2,
                            e * x1, e * x2, e ** 2, x1 ** 2, x2 ** 2, x1 * x2])


def _nc_basis2(c):
    a, x1, x2 = c["a_prime"].astype(float), c["x1"], c["x2"]
    return np.column_stack([np.ones_like(x1), a, x1, x2, a * x1, a * x2])


NC_BASIS1 = TestBasis("Custom", _nc_basis1, 14,
                      ("1", "a", "e", "a*e", "x1", "x2", "a*x1", "a*x2", "e*x1", "e*x2",
                       "e^2", "x1^2", "x2^2", "x1*x2"))
NC_BASIS2 = TestBasis("Custom", _nc_basis2, 6,
                      ("1", "a'", "x1", "x2", "a'*x1", "a'*x2"))


class NcLoss:
    """Two-part negative-control loss over joint coefficients ``(h1 beta, h2 coef)``."""

    def __init__(self, dataset, alpha: float, basis1: TestBasis = NC_BASIS1,
                 basis2: TestBasis = NC_BASIS2, bridge: BridgeFeatures = DEFAULT_BRIDGE,
                 config: LossConfig = LossConfig()):
        if len(dataset) == 0:
            raise ConfigurationError("dataset is empty")
        self.alpha = alpha
        self.config = config
        self.phi = hypothesis_matrix(dataset)
        self.y = dataset.y
        self.n = len(self.y)
        self.k1 = self.phi.shape[1]
        self.bridge_obs = bridge(dataset.v, dataset.a, dataset.x1, dataset.x2)
        self.bridge_aug = bridge(dataset.v, dataset.a_prime, dataset.x1, dataset.x2)
        self.k2 = self.bridge_obs.shape[1]
        self.dual1 = QuadraticDual(build_design_matrix(dataset, basis1).m, config.ridge)
        self.dual2 = QuadraticDual(build_design_matrix(dataset, basis2).m, config.ridge)

    @property
    def dim(self) -> int:
        return self.k1 + self.k2

    def split(self, coef):
        coef = np.asarray(coef, dtype=float)
        return coef[..., :self.k1], coef[..., self.k1:]

    def parts(self, coef) -> tuple[float, float]:
        b1, b2 = self.split(coef)
        w = residual_values(self.phi @ b1, self.y, self.alpha, self.config.mode,
                            self.config.smoothing_temperature)
        l1 = self.dual1.loss(w - self.bridge_obs @ b2)
        l2 = self.dual2.loss(self.bridge_aug @ b2)
        return l1, l2

    def value(self, coef) -> float:
        l1, l2 = self.parts(coef)
        return l1 + l2

    def value_and_grad(self, coef) -> tuple[float, np.ndarray]:
        if self.config.mode != SMOOTHED:
            raise UnsupportedModeError("gradient requires the smoothed loss")
        b1, b2 = self.split(coef)
        t = self.config.smoothing_temperature
        s = expit(t * (self.phi @ b1 - self.y))
        l1, dr1, _ = self.dual1.loss_and_dw(s - self.alpha - self.bridge_obs @ b2)
        l2, dr2, _ = self.dual2.loss_and_dw(self.bridge_aug @ b2)
        g1 = self.phi.T @ (dr1 * (t * s * (1.0 - s)))
        g2 = -self.bridge_obs.T @ dr1 + self.bridge_aug.T @ dr2
        return l1 + l2, np.concatenate([g1, g2])

    def gradient(self, coef) -> np.ndarray:
        return self.value_and_grad(coef)[1]

    def batch_values(self, coefs: np.ndarray) -> np.ndarray:
        coefs = np.atleast_2d(coefs)
        out = np.empty(len(coefs))
        for start in range(0, len(coefs), _CHUNK):
            b1, b2 = self.split(coefs[start:start + _CHUNK])
            w = residual_values(self.phi @ b1.T, self.y, self.alpha, self.config.mode,
                                self.config.smoothing_temperature)
            out[start:start + _CHUNK] = (self.dual1.loss(w - self.bridge_obs @ b2.T)
                                         + self.dual2.loss(self.bridge_aug @ b2.T))
        return out

    def hessian(self, coef, step: float = 1e-5) -> np.ndarray:
        coef = np.asarray(coef, dtype=float)
        k = len(coef)
        hess = np.empty((k, k))
        for j in range(k):
            e = np.zeros(k)
            e[j] = step
            hess[:, j] = (self.gradient(coef + e) - self.gradient(coef - e)) / (2 * step)
        return 0.5 * (hess + hess.T)


def nc_loss(nc_dataset, h1_beta, h2_beta, alpha: float, basis1: TestBasis = NC_BASIS1,
            basis2: TestBasis = NC_BASIS2, config: LossConfig = LossConfig(),
            bridge: BridgeFeatures = DEFAULT_BRIDGE) -> tuple[float, float]:
    """Return ``(l1, l2)``: dual losses of the two negative-control restrictions."""
    loss = NcLoss(nc_dataset, alpha, basis1, basis2, bridge, config)
    return loss.parts(np.concatenate([np.asarray(h1_beta, float), np.asarray(h2_beta, float)]))
