"""Linear hypothesis class and polynomial test-function bases."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigurationError, DataError

Columns = Mapping[str, np.ndarray]

MAIN13_NAMES = ("x1", "x2", "z", "x1*x2", "x1*z", "x2*z", "x1^2", "x2^2", "z^2",
                "x1^2*z", "x1*x2^2", "z^3", "x1^2*x2^2")
APPENDIX10_NAMES = ("x", "z", "x*z", "x^2", "z^2", "x*z^2", "z*x^2", "x^3", "z^3",
                    "x^2*z^2")


@dataclass(frozen=True)
class HypothesisParams:
    beta: np.ndarray
    norm_bound: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        if self.norm_bound is not None:
            if self.norm_bound <= 0:
                raise ConfigurationError("norm_bound must be positive")
            if np.linalg.norm(self.beta) > self.norm_bound:
                raise ConfigurationError(
                    f"||beta|| = {np.linalg.norm(self.beta):.4g} exceeds {self.norm_bound}")

    @property
    def gate(self) -> np.ndarray:
        """Coefficients of the action interaction: ``beta[2:]`` (2-D) or ``beta[1:]`` (1-D)."""
        return self.beta[len(self.beta) // 2:]


def hypothesis_features(a, x) -> np.ndarray:
    """Feature map of ``h(a, x; beta) = beta . phi(a, x)``.

    A scalar ``x`` (or length-1 array) selects the 1-D map ``(x, a*x)``; a length-2
    context selects ``(x1, x2, a*x1, a*x2)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.concatenate([x, a * x])


def hypothesis_design(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row-wise :func:`hypothesis_features` for an ``(n, k)`` context array."""
    a = np.asarray(a, dtype=float)[:, None]
    return np.hstack([x, a * x])


def _main13(c: Columns) -> np.ndarray:
    x1, x2, z = c["x1"], c["x2"], c["z"]
    return np.column_stack([
        x1, x2, z, x1 * x2, x1 * z, x2 * z, x1 ** 2, x2 ** 2, z ** 2,
        x1 ** 2 * z, x1 * x2 ** 2, z ** 3, x1 ** 2 * x2 ** 2,
    ])


def _appendix10(c: Columns) -> np.ndarray:
    x, z = c["x1"], c["z"]
    return np.column_stack([
        x, z, x * z, x ** 2, z ** 2, x * z ** 2, z * x ** 2, x ** 3, z ** 3, x ** 2 * z ** 2,
    ])


@dataclass(frozen=True)
class TestBasis:
    """A finite feature map spanning a linear test-function class.

    ``feature_fn`` receives the dataset columns (``x1``, ``x2``, ``z``, ``a``, ...)
    and returns an ``(n, d)`` array.
    """

    __test__ = False

    basis_id: str
    feature_fn: Callable[[Columns], np.ndarray] = field(compare=False)
    d: int
    names: tuple[str, ...] = ()

    def __call__(self, columns: Columns) -> np.ndarray:
        return self.feature_fn(columns)


MAIN13 = TestBasis("Main13", _main13, 13, MAIN13_NAMES)
APPENDIX10 = TestBasis("Appendix10", _appendix10, 10, APPENDIX10_NAMES)


def custom_basis(feature_fn: Callable[[Columns], np.ndarray], d: int,
                 names: tuple[str, ...] = ()) -> TestBasis:
    return TestBasis("Custom", feature_fn, d, names)


def default_basis(setting: str) -> TestBasis:
    return APPENDIX10 if setting == "appendix" else MAIN13


@dataclass(frozen=True)
class DesignMatrix:
    """Evaluated test features, one row per sample (``n x d``)."""

    m: np.ndarray

    @property
    def n(self) -> int:
        return self.m.shape[0]

    @property
    def d(self) -> int:
        return self.m.shape[1]


def build_design_matrix(dataset, basis: TestBasis) -> DesignMatrix:
    columns = dataset.columns() if hasattr(dataset, "columns") else dataset
    with np.errstate(invalid="ignore", over="ignore"):
        m = np.asarray(basis(columns), dtype=float)
    n = len(columns["a"]) if "a" in columns else m.shape[0]
    m = m.reshape(n, basis.d)
    if not np.isfinite(m).all():
        raise DataError(f"non-finite value in {basis.basis_id} features")
    return DesignMatrix(m)
