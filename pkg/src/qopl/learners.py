"""Offline policy learners: greedy, pessimistic (regularised, solution set,
alternating), negative-control and spectral-risk variants.

All learners share two pieces of machinery:

* :func:`descend` - constant-step descent preconditioned by the damped
  Gauss-Newton matrix of the dual loss. An iterate is accepted only if it does
  not raise the objective by more than ``1e-9``; otherwise the step is halved.
* :func:`draw_candidates` - Gaussian random search around a centre, with
  isotropic covariance ``r_scale^2 / n`` or the inverse Hessian scaled by the same
  factor. The centre is always candidate 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, OptimizationError
from .evaluation import (ContextDistribution, LinearPolicy, context_distribution_for,
                         greedy_values, value_matrix)
from .features import HypothesisParams, TestBasis, default_basis, hypothesis_design
from .loss import (DEFAULT_BRIDGE, NC_BASIS1, NC_BASIS2, SMOOTHED, BridgeFeatures,
                   LossConfig, MinimaxLoss, NcLoss)

ISOTROPIC = "isotropic"
INVERSE_HESSIAN = "inverse_hessian"
FULL_OBJECTIVE = "full_objective"
VALUE_ONLY = "value_only"
GAUSS_NEWTON = "gauss_newton"
PLAIN = "plain"

_POLICY_CHUNK = 256


@dataclass(frozen=True)
class FitConfig:
    step_size: float = 0.05
    max_iters: int = 2000
    grad_tol: float = 1e-6
    lambda_scale: float = 1.0
    n_candidates: int = 10_000
    r_scale: float = 1.0
    covariance_mode: str = INVERSE_HESSIAN
    selection_rule: str = FULL_OBJECTIVE
    e_n_scale: float = 4.0
    seed: int = 0
    descent: str = GAUSS_NEWTON
    damping: float = 1e-2
    init: str = "zero"
    max_outer: int = 20
    policy_tol: float = 0.0

    def __post_init__(self):
        for name in ("step_size", "grad_tol", "lambda_scale", "r_scale", "e_n_scale"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("max_iters", "n_candidates", "max_outer"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.covariance_mode not in (ISOTROPIC, INVERSE_HESSIAN):
            raise ConfigurationError(f"unknown covariance_mode {self.covariance_mode!r}")
        if self.selection_rule not in (FULL_OBJECTIVE, VALUE_ONLY):
            raise ConfigurationError(f"unknown selection_rule {self.selection_rule!r}")
        if self.descent not in (GAUSS_NEWTON, PLAIN):
            raise ConfigurationError(f"unknown descent {self.descent!r}")
        if self.init not in ("zero", "random"):
            raise ConfigurationError(f"unknown init {self.init!r}")
        if self.damping < 0 or self.policy_tol < 0:
            raise ConfigurationError("damping and policy_tol must be nonnegative")


@dataclass
class FitResult:
    beta: HypothesisParams
    policy: LinearPolicy
    objective_trace: list[tuple[int, float]] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def _result(beta: np.ndarray, trace=None, **diagnostics) -> FitResult:
    params = HypothesisParams(np.array(beta, dtype=float))
    return FitResult(params, LinearPolicy(params.gate), list(trace or []), diagnostics)


# --- descent ---------------------------------------------------------------------

def _gauss_newton(loss: MinimaxLoss, beta: np.ndarray) -> np.ndarray:
    t = loss.config.smoothing_temperature
    s = expit(t * (loss.phi @ beta - loss.y))
    mj = loss.dual.m.T @ (loss.phi * (t * s * (1.0 - s))[:, None])
    return mj.T @ loss.dual.inv @ mj / loss.n


def _gauss_newton_nc(loss: NcLoss, coef: np.ndarray) -> np.ndarray:
    b1, _ = loss.split(coef)
    t = loss.config.smoothing_temperature
    s = expit(t * (loss.phi @ b1 - loss.y))
    j1 = np.hstack([loss.phi * (t * s * (1.0 - s))[:, None], -loss.bridge_obs])
    j2 = np.hstack([np.zeros((loss.n, loss.k1)), loss.bridge_aug])
    m1 = loss.dual1.m.T @ j1
    m2 = loss.dual2.m.T @ j2
    return (m1.T @ loss.dual1.inv @ m1 + m2.T @ loss.dual2.inv @ m2) / loss.n


def descend(value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
            x0: np.ndarray, config: FitConfig,
            curvature: Callable[[np.ndarray], np.ndarray] | None = None,
            project: Callable[[np.ndarray], np.ndarray] | None = None):
    """Minimise with constant nominal step ``config.step_size``.

    With ``config.descent == "gauss_newton"`` and a ``curvature`` callable the
    gradient is preconditioned by ``(C + mu I)^{-1}``, ``mu = damping * trace(C) / k``.
    Returns ``(x, value, trace, converged)``.
    """
    x = np.array(x0, dtype=float)
    k = len(x)
    val, grad = value_and_grad(x)
    if not np.isfinite(val):
        raise OptimizationError("objective is not finite at the initial point", 0)
    trace = [(0, float(val))]
    converged = False
    use_gn = config.descent == GAUSS_NEWTON and curvature is not None
    for it in range(1, int(config.max_iters) + 1):
        if np.linalg.norm(grad) < config.grad_tol:
            converged = True
            break
        direction = grad
        if use_gn:
            c = curvature(x)
            mu = config.damping * np.trace(c) / k + 1e-12
            direction = np.linalg.solve(c + mu * np.eye(k), grad)
        step = config.step_size
        for _ in range(50):
            cand = x - step * direction
            if project is not None:
                cand = project(cand)
            new_val, new_grad = value_and_grad(cand)
            if not (np.isfinite(new_val) and np.all(np.isfinite(new_grad))):
                raise OptimizationError(f"objective diverged at iteration {it}", it)
            if new_val <= val + 1e-9:
                break
            step *= 0.5
        else:
            converged = True  # no descent direction left at floating-point resolution
            break
        x, val, grad = cand, new_val, new_grad
        trace.append((it, float(val)))
    else:
        converged = np.linalg.norm(grad) < config.grad_tol
    return x, float(val), trace, bool(converged)


def _initial_point(k: int, config: FitConfig) -> np.ndarray:
    if config.init == "random":
        return np.random.default_rng(config.seed).standard_normal(k)
    return np.zeros(k)


def _smoothed(config: LossConfig) -> LossConfig:
    if config.mode != SMOOTHED:
        raise ConfigurationError("descent requires the smoothed loss mode")
    return config


def _check_dataset(dataset) -> None:
    if dataset is None or len(dataset) == 0:
        raise ConfigurationError("dataset is empty")


def fit_greedy(dataset, alpha: float | None = None, basis: TestBasis | None = None,
               fit_config: FitConfig = FitConfig(),
               loss_config: LossConfig = LossConfig(),
               loss: MinimaxLoss | None = None) -> FitResult:
    """Approximate minimiser of the smoothed dual loss and its greedy policy."""
    _check_dataset(dataset)
    alpha = dataset.alpha if alpha is None else alpha
    if loss is None:
        basis = basis or default_basis(dataset.setting)
        loss = MinimaxLoss(dataset, alpha, basis, _smoothed(loss_config))
    beta, val, trace, converged = descend(
        loss.value_and_grad, _initial_point(loss.dim, fit_config), fit_config,
        curvature=lambda b: _gauss_newton(loss, b))
    return _result(beta, trace, loss_at_optimum=val, converged=converged,
                   iterations=trace[-1][0])


# --- random search ---------------------------------------------------------------

@dataclass
class CandidateSet:
    """Sampled hypotheses with their losses and own-greedy values."""

    betas: np.ndarray
    losses: np.ndarray
    values: np.ndarray
    center: np.ndarray
    covariance_fallback: bool
    lambda_n: float


def _sqrt_covariance(k: int, n: int, config: FitConfig,
                     hessian: Callable[[], np.ndarray] | None) -> tuple[np.ndarray, bool]:
    scale = config.r_scale / math.sqrt(n)
    if config.covariance_mode == INVERSE_HESSIAN and hessian is not None:
        h = hessian()
        eig, vec = np.linalg.eigh(h)
        if np.all(np.isfinite(eig)) and eig.min() > 0:
            return vec / np.sqrt(eig) * scale, False
        return np.eye(k) * scale, True
    return np.eye(k) * scale, False


def draw_candidates(center: np.ndarray, n: int, config: FitConfig,
                    hessian: Callable[[], np.ndarray] | None = None) -> tuple[np.ndarray, bool]:
    """``config.n_candidates`` Gaussian draws around ``center`` (row 0 is the centre)."""
    center = np.asarray(center, dtype=float)
    k = len(center)
    root, fallback = _sqrt_covariance(k, n, config, hessian)
    rng = np.random.default_rng(config.seed)
    noise = rng.standard_normal((int(config.n_candidates) - 1, k))
    return np.vstack([center, center + noise @ root.T]), fallback


def candidate_search(dataset, alpha: float | None = None, basis: TestBasis | None = None,
                     fit_config: FitConfig = FitConfig(),
                     loss_config: LossConfig = LossConfig(),
                     greedy: FitResult | None = None,
                     dist: ContextDistribution | None = None) -> CandidateSet:
    """Sample candidates around the greedy fit and score their loss and value."""
    _check_dataset(dataset)
    alpha = dataset.alpha if alpha is None else alpha
    basis = basis or default_basis(dataset.setting)
    dist = dist or context_distribution_for(dataset)
    loss = MinimaxLoss(dataset, alpha, basis, _smoothed(loss_config))
    if greedy is None:
        greedy = fit_greedy(dataset, alpha, basis, fit_config, loss_config, loss=loss)
    center = greedy.beta.beta
    betas, fallback = draw_candidates(center, loss.n, fit_config,
                                      lambda: loss.hessian(center))
    losses = loss.batch_values(betas)
    values = greedy_values(betas[:, loss.dim // 2:], dist)
    lam = fit_config.lambda_scale * math.sqrt(loss.n)
    return CandidateSet(betas, losses, values, center, fallback, lam)


def _select(scores: np.ndarray) -> int:
    # np.argmin returns the first minimiser, so ties resolve by candidate index
    return int(np.argmin(scores))


def fit_pessimistic_regularized(dataset, alpha: float | None = None,
                                basis: TestBasis | None = None,
                                fit_config: FitConfig = FitConfig(),
                                loss_config: LossConfig = LossConfig(),
                                greedy: FitResult | None = None,
                                dist: ContextDistribution | None = None,
                                candidates: CandidateSet | None = None) -> FitResult:
    """Random-search approximation of ``inf_h V(h) + lambda_n L_n(h)``.

    ``V(h)`` is the value of ``h`` under its own greedy policy. With
    ``selection_rule="value_only"`` the loss term is dropped.
    """
    cs = candidates or candidate_search(dataset, alpha, basis, fit_config, loss_config,
                                        greedy, dist)
    if fit_config.selection_rule == FULL_OBJECTIVE:
        scores = cs.values + cs.lambda_n * cs.losses
    else:
        scores = cs.values.copy()
    best = _select(scores)
    trace = greedy.objective_trace if greedy is not None else []
    return _result(cs.betas[best], trace, candidate_index=best, score=float(scores[best]),
                   center_score=float(scores[0]), loss_at_optimum=float(cs.losses[best]),
                   lambda_n=cs.lambda_n, n_candidates=len(cs.betas),
                   covariance_fallback=cs.covariance_fallback,
                   greedy_beta=cs.center.copy())


def solution_set_mask(losses: np.ndarray, e_n: float) -> np.ndarray:
    """Candidates whose loss is within ``e_n`` of the smallest sampled loss."""
    return losses <= losses.min() + e_n


def fit_solution_set(dataset, alpha: float | None = None, basis: TestBasis | None = None,
                     fit_config: FitConfig = FitConfig(),
                     loss_config: LossConfig = LossConfig(),
                     greedy: FitResult | None = None,
                     dist: ContextDistribution | None = None,
                     candidates: CandidateSet | None = None,
                     e_n: float | None = None) -> FitResult:
    """Max-min policy over sampled candidates restricted to the loss sublevel set.

    Candidate policies are the greedy policies of all sampled hypotheses; both the
    inner minimum (over the solution set) and the outer maximum are exact over
    the finite samples.
    """
    _check_dataset(dataset)
    dist = dist or context_distribution_for(dataset)
    cs = candidates or candidate_search(dataset, alpha, basis, fit_config, loss_config,
                                        greedy, dist)
    n = len(dataset)
    if e_n is None:
        e_n = fit_config.e_n_scale * math.log(n) / n
    mask = solution_set_mask(cs.losses, e_n)
    k = cs.betas.shape[1] // 2
    members = cs.betas[mask, k:]
    gates = cs.betas[:, k:]
    worst = np.empty(len(gates))
    for start in range(0, len(gates), _POLICY_CHUNK):
        block = gates[start:start + _POLICY_CHUNK]
        worst[start:start + _POLICY_CHUNK] = value_matrix(members, block, dist).min(axis=0)
    best = int(np.argmax(worst))
    trace = greedy.objective_trace if greedy is not None else []
    return _result(cs.betas[best], trace, candidate_index=best,
                   worst_case_value=float(worst[best]), solution_set_size=int(mask.sum()),
                   e_n=float(e_n), n_candidates=len(cs.betas),
                   covariance_fallback=cs.covariance_fallback)


# --- alternating -----------------------------------------------------------------

def fit_alternating(dataset, alpha: float | None = None, basis: TestBasis | None = None,
                    fit_config: FitConfig = FitConfig(),
                    loss_config: LossConfig = LossConfig(),
                    policy_init: LinearPolicy | None = None,
                    lambda_scale: float = 1.6,
                    norm_bound: float | None = None) -> FitResult:
    """Alternate between the pessimistic hypothesis for a fixed policy and the
    greedy policy of that hypothesis.

    The policy is an action per offline context (the empirical context law). For a
    fixed policy the hypothesis minimises ``v(beta, pi) + lambda_n L_n(beta)`` by
    projected descent onto ``||beta|| <= norm_bound`` (default ``2 ||beta_greedy|| + 1``;
    the objective is unbounded below otherwise, because ``L_n`` saturates).
    The loop stops when the share of contexts whose action changes is at most
    ``fit_config.policy_tol``.
    """
    _check_dataset(dataset)
    alpha = dataset.alpha if alpha is None else alpha
    basis = basis or default_basis(dataset.setting)
    loss = MinimaxLoss(dataset, alpha, basis, _smoothed(loss_config))
    x = dataset.contexts()
    k = x.shape[1]
    lam = lambda_scale * math.sqrt(loss.n)
    greedy = fit_greedy(dataset, alpha, basis, fit_config, loss_config, loss=loss)
    if norm_bound is None:
        norm_bound = 2.0 * float(np.linalg.norm(greedy.beta.beta)) + 1.0

    def project(b):
        norm = np.linalg.norm(b)
        return b if norm <= norm_bound else b * (norm_bound / norm)

    if policy_init is None:
        actions = np.random.default_rng(fit_config.seed).integers(0, 2, size=loss.n)
    else:
        actions = np.asarray(policy_init.act(x)).reshape(-1)
    actions = actions.astype(np.int8)

    beta = _initial_point(loss.dim, fit_config)
    trace: list[tuple[int, float]] = []
    history = []
    converged = False
    changes = []
    for outer in range(int(fit_config.max_outer)):
        v_grad = hypothesis_design(actions, x).mean(axis=0)

        def objective(b, v_grad=v_grad):
            val, grad = loss.value_and_grad(b)
            return float(v_grad @ b) + lam * val, v_grad + lam * grad

        beta, val, _, _ = descend(objective, beta, fit_config,
                                  curvature=lambda b: lam * _gauss_newton(loss, b),
                                  project=project)
        trace.append((outer, val))
        history.append((val, beta.copy()))
        new_actions = (x @ beta[k:] > 0).astype(np.int8)
        changed = float(np.mean(new_actions != actions))
        changes.append(changed)
        actions = new_actions
        if changed <= fit_config.policy_tol:
            converged = True
            break
    if converged:
        chosen = beta
    else:
        # sup over visited policies of the inner infimum
        chosen = max(history, key=lambda item: item[0])[1]
    return _result(chosen, trace, converged=converged, outer_iterations=len(history),
                   policy_changes=changes, lambda_n=lam, norm_bound=norm_bound,
                   greedy_beta=greedy.beta.beta.copy())


# --- negative controls -----------------------------------------------------------

def fit_nc_regularized(nc_dataset, alpha: float | None = None,
                       basis1: TestBasis = NC_BASIS1, basis2: TestBasis = NC_BASIS2,
                       h2_features: BridgeFeatures = DEFAULT_BRIDGE,
                       fit_config: FitConfig = FitConfig(),
                       loss_config: LossConfig = LossConfig(),
                       dist: ContextDistribution | None = None,
                       zero_bridge: bool = False) -> FitResult:
    """Regularised pessimistic learner for negative-control data.

    The greedy centre minimises ``l1 + l2`` jointly over ``(h1, h2)``; candidates are
    joint coefficient vectors scored by ``V(h1) + lambda_n (l1 + l2)``.
    ``zero_bridge`` pins the bridge block to zero in every candidate.
    """
    _check_dataset(nc_dataset)
    alpha = nc_dataset.alpha if alpha is None else alpha
    if dist is None:
        rho = getattr(nc_dataset.meta, "rho", 0.95) if nc_dataset.meta is not None else 0.95
        dist = ContextDistribution.gaussian(rho)
    loss = NcLoss(nc_dataset, alpha, basis1, basis2, h2_features, _smoothed(loss_config))
    k1 = loss.k1
    mask = np.ones(loss.dim, dtype=bool)
    if zero_bridge:
        mask[k1:] = False
    sub = np.flatnonzero(mask)

    def embed(c):
        full = np.zeros(loss.dim)
        full[sub] = c
        return full

    def objective(c):
        val, grad = loss.value_and_grad(embed(c))
        return val, grad[sub]

    start = _initial_point(len(sub), fit_config)
    center, center_val, trace, converged = descend(
        objective, start, fit_config,
        curvature=lambda c: _gauss_newton_nc(loss, embed(c))[np.ix_(sub, sub)])
    sampled, fallback = draw_candidates(
        center, loss.n, fit_config,
        lambda: loss.hessian(embed(center))[np.ix_(sub, sub)])
    coefs = np.zeros((len(sampled), loss.dim))
    coefs[:, sub] = sampled
    losses = loss.batch_values(coefs)
    values = greedy_values(coefs[:, k1 // 2:k1], dist)
    lam = fit_config.lambda_scale * math.sqrt(loss.n)
    scores = values + lam * losses if fit_config.selection_rule == FULL_OBJECTIVE else values
    best = _select(scores)
    return _result(coefs[best, :k1], trace, candidate_index=best,
                   score=float(scores[best]), center_score=float(scores[0]),
                   h2_coef=coefs[best, k1:].copy(), loss_at_optimum=float(losses[best]),
                   center_loss=center_val, converged=converged, lambda_n=lam,
                   covariance_fallback=fallback, n_candidates=len(coefs))


# --- spectral risk ---------------------------------------------------------------

def fit_spectral_risk(dataset, alphas: Sequence[float], weights: Sequence[float],
                      basis: TestBasis | None = None,
                      fit_config: FitConfig = FitConfig(),
                      loss_config: LossConfig = LossConfig(),
                      dist: ContextDistribution | None = None) -> FitResult:
    """Pessimistic learner for a weighted sum of quantile functions.

    One greedy fit per level gives the centre of a joint random search over the
    stacked coefficients. A candidate scores the value of the weighted aggregate
    hypothesis under its own greedy policy plus ``lambda_n`` times the summed losses.
    """
    alphas = [float(a) for a in alphas]
    weights = np.asarray(weights, dtype=float)
    if len(alphas) == 0 or len(alphas) != len(weights):
        raise ConfigurationError("alphas and weights must be nonempty and of equal length")
    if any(not 0.0 < a < 1.0 for a in alphas):
        raise ConfigurationError("every alpha must lie in (0, 1)")
    _check_dataset(dataset)
    basis = basis or default_basis(dataset.setting)
    dist = dist or context_distribution_for(dataset)
    losses = [MinimaxLoss(dataset, a, basis, _smoothed(loss_config)) for a in alphas]
    k = losses[0].dim
    greedy = [fit_greedy(dataset, a, basis, fit_config, loss_config, loss=lo)
              for a, lo in zip(alphas, losses)]
    center = np.concatenate([g.beta.beta for g in greedy])

    def block_hessian():
        h = np.zeros((k * len(alphas),) * 2)
        for i, (lo, g) in enumerate(zip(losses, greedy)):
            h[i * k:(i + 1) * k, i * k:(i + 1) * k] = lo.hessian(g.beta.beta)
        return h

    stacked, fallback = draw_candidates(center, losses[0].n, fit_config, block_hessian)
    blocks = stacked.reshape(len(stacked), len(alphas), k)
    total_loss = sum(lo.batch_values(blocks[:, i]) for i, lo in enumerate(losses))
    aggregate = np.einsum("i,sik->sk", weights, blocks)
    values = greedy_values(aggregate[:, k // 2:], dist)
    lam = fit_config.lambda_scale * math.sqrt(losses[0].n)
    scores = values + lam * total_loss if fit_config.selection_rule == FULL_OBJECTIVE \
        else values
    best = _select(scores)
    return _result(aggregate[best], greedy[0].objective_trace, candidate_index=best,
                   score=float(scores[best]), center_score=float(scores[0]),
                   stacked_betas=blocks[best].copy(), alphas=alphas,
                   weights=weights.tolist(), lambda_n=lam, covariance_fallback=fallback,
                   greedy_betas=[g.beta.beta.copy() for g in greedy])


def with_seed(config: FitConfig, seed: int) -> FitConfig:
    return replace(config, seed=int(seed))
