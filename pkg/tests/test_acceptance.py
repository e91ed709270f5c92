"""Acceptance suite: one PASS/FAIL line per criterion, printed as each finishes.

The desk-preset experiment is run twice (1 worker and 8 workers) and shared by the
headline-ordering and determinism criteria.
"""

import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from qopl import (MAIN13, ContextDistribution, DgpConfig, ExperimentConfig, LinearPolicy,
                  LossConfig, MinimaxLoss, NcDgpConfig, fit_greedy, fit_nc_regularized,
                  fit_solution_set, generate_iv_dataset, generate_nc_dataset, inner_maximize,
                  plot_curves, regret, run_experiment, value_closed_form, value_monte_carlo,
                  write_csv)
from qopl.evaluation import value_matrix
from qopl.learners import FitConfig, candidate_search, solution_set_mask
from qopl.loss import NcLoss

BETA_TRUE = np.array([1.0, 1.0, 3.0, 2.0])
DGP = DgpConfig(n=1, alpha=0.2)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail, elapsed, budget=None):
        timing = f"{elapsed:.1f}s" + (f" (budget {budget:.0f}s)" if budget else "")
        with capsys.disabled():
            print(f"\nCRITERION {number:>2}: {'PASS' if ok else 'FAIL'} | {detail} | {timing}")
        assert ok, detail
    return emit


def _coordinate_ascent(w, m, sweeps=20_000):
    n, d = m.shape
    g, gram = m.T @ w, m.T @ m
    c = np.zeros(d)
    for _ in range(sweeps):
        prev = c.copy()
        for j in range(d):
            c[j] = (g[j] - gram[j] @ c + gram[j, j] * c[j]) / gram[j, j]
        if np.max(np.abs(c - prev)) < 1e-15:
            break
    return (w @ m @ c - 0.5 * np.sum((m @ c) ** 2)) / n


def test_criterion_01_inner_maximization(report):
    t = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n, d = int(rng.integers(4, 21)), int(rng.integers(1, 4))
        m = rng.standard_normal((n, d))
        w = rng.uniform(-0.5, 0.8, n)
        worst = max(worst, abs(inner_maximize(w, m).loss_value - _coordinate_ascent(w, m)))
    elapsed = time.perf_counter() - t
    report(1, worst < 1e-6 and elapsed < 10, f"max |closed form - numeric| = {worst:.2e}",
           elapsed, 10)


def test_criterion_02_gradient(report):
    t = time.perf_counter()
    rng = np.random.default_rng(99)
    worst = 0.0
    for i in range(20):
        d = generate_iv_dataset(DgpConfig(n=200, alpha=float(rng.uniform(0.1, 0.9)), seed=i))
        beta = rng.standard_normal(4) * 2
        loss = MinimaxLoss(d, d.alpha, MAIN13)
        fd = np.array([(loss.value(beta + e) - loss.value(beta - e)) / 2e-5
                       for e in np.eye(4) * 1e-5])
        rel = np.linalg.norm(loss.gradient(beta) - fd) / max(np.linalg.norm(fd), 1e-300)
        worst = max(worst, rel)
    elapsed = time.perf_counter() - t
    report(2, worst < 1e-4 and elapsed < 10, f"max relative error = {worst:.2e}", elapsed, 10)


def test_criterion_03_loss_at_truth_scaling(report):
    t = time.perf_counter()
    means = {}
    for n in (250, 4000):
        vals = [MinimaxLoss(generate_iv_dataset(DgpConfig(n=n, alpha=0.2, seed=r)), 0.2, MAIN13,
                            LossConfig(mode="hard")).value(BETA_TRUE) for r in range(50)]
        means[n] = float(np.mean(vals))
    ratio = means[4000] / means[250]
    elapsed = time.perf_counter() - t
    report(3, ratio <= 0.25 and elapsed < 120,
           f"mean L(4000)/mean L(250) = {ratio:.4f} (theory ~ 0.0625)", elapsed, 120)


def test_criterion_04_value_closed_form(report):
    t = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(20):
        beta, gate = rng.standard_normal(4) * 2, rng.standard_normal(2)
        dist = ContextDistribution.gaussian(float(rng.uniform(-0.9, 0.95)))
        cf = value_closed_form(beta, LinearPolicy(gate), dist).value
        mc = value_monte_carlo(beta, LinearPolicy(gate), dist, m=1_000_000, seed=i)
        worst = max(worst, abs(cf - mc.value) / mc.std_error)
    v_star = value_closed_form(BETA_TRUE, LinearPolicy(BETA_TRUE[2:])).value
    elapsed = time.perf_counter() - t
    ok = worst <= 4 and abs(v_star - 1.9706) <= 0.01 and elapsed < 60
    report(4, ok, f"max |cf - mc| / se = {worst:.2f}; v* = {v_star:.5f}", elapsed, 60)


def test_criterion_05_oracle_regret(report):
    t = time.perf_counter()
    oracle = regret(LinearPolicy(BETA_TRUE[2:]), DGP)
    rng = np.random.default_rng(5)
    lowest = min(regret(LinearPolicy(g), DGP) for g in rng.standard_normal((1000, 2)))
    elapsed = time.perf_counter() - t
    report(5, oracle == 0.0 and lowest >= -1e-12 and elapsed < 5,
           f"regret(oracle) = {oracle!r}; min over 1000 gates = {lowest:.3e}", elapsed, 5)


# --- desk-scale experiment, shared by criteria 6, 7 and 10 ---------------------------

@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    out = {}
    for workers in (1, 8):
        root = tmp_path_factory.mktemp(f"desk_w{workers}")
        cfg = replace(ExperimentConfig().with_preset("desk"), workers=workers, base_seed=0)
        t = time.perf_counter()
        curve = run_experiment(cfg)
        write_csv(curve, root / "regret.csv")
        plot_curves(curve, root / "plots")
        out[workers] = (curve, root, time.perf_counter() - t)
    return out


def test_criterion_06_pessimism_beats_greedy(report, desk_runs):
    curve, _, elapsed = desk_runs[8]
    g = curve.get("greedy", 3000, 0.15, 0.7).mean_regret
    p = curve.get("pessimistic", 3000, 0.15, 0.7).mean_regret
    report(6, p < g and elapsed < 900,
           f"alpha=0.15 p=0.7 n=3000: pessimistic {p:.4f} < greedy {g:.4f}", elapsed, 900)


def test_criterion_07_greedy_competitive_at_high_alpha(report, desk_runs):
    curve, _, elapsed = desk_runs[8]
    g = curve.get("greedy", 3000, 0.25, 0.8).mean_regret
    p = curve.get("pessimistic", 3000, 0.25, 0.8).mean_regret
    ref = curve.get("greedy", 3000, 0.15, 0.7).mean_regret
    ok = g <= p + 0.05 and max(g, p) < ref
    report(7, ok, f"alpha=0.25 p=0.8 n=3000: greedy {g:.4f}, pessimistic {p:.4f}; "
                  f"alpha=0.15 p=0.7 greedy {ref:.4f}", elapsed)


def test_criterion_08_unconfounded_recovery(report):
    t = time.perf_counter()
    betas = [fit_greedy(generate_iv_dataset(
        DgpConfig(n=5000, alpha=0.2, p_structured=0.0, seed=s))).beta.beta for s in range(10)]
    dev = np.abs(np.mean(betas, axis=0) - BETA_TRUE)
    elapsed = time.perf_counter() - t
    report(8, bool(np.all(dev < 0.3)) and elapsed < 120,
           f"mean beta over 10 seeds = {np.round(np.mean(betas, axis=0), 3).tolist()}, "
           f"max deviation {dev.max():.3f}", elapsed, 120)


def test_criterion_09_negative_controls(report):
    t = time.perf_counter()
    worst, l2_zero = 0.0, True
    for s in range(10):
        d = generate_nc_dataset(NcDgpConfig(n=5000, alpha=0.2, kappa=0.0, seed=s))
        beta = fit_nc_regularized(d).beta.beta
        worst = max(worst, float(np.abs(beta - BETA_TRUE).max()))
        _, l2 = NcLoss(d, 0.2).parts(np.concatenate([beta, np.zeros(4)]))
        l2_zero &= l2 == 0.0
    elapsed = time.perf_counter() - t
    report(9, worst < 0.5 and l2_zero and elapsed < 180,
           f"max per-coordinate h1 error over 10 seeds = {worst:.3f}; "
           f"L2(h2 = 0) == 0: {l2_zero}", elapsed, 180)


def test_criterion_10_determinism(report, desk_runs):
    _, root1, t1 = desk_runs[1]
    _, root8, t8 = desk_runs[8]
    files = ["regret.csv"] + [f"plots/{p.name}" for p in sorted((root1 / "plots").iterdir())]
    same = all((root1 / f).read_bytes() == (root8 / f).read_bytes() for f in files)
    same &= sorted(p.name for p in (root8 / "plots").iterdir()) == \
        sorted(p.name for p in (root1 / "plots").iterdir())
    report(10, same, f"{len(files)} files byte-identical for 1 vs 8 workers", t1 + t8)


def test_criterion_11_solution_set(report):
    t = time.perf_counter()
    d = generate_iv_dataset(DgpConfig(n=1000, alpha=0.15, seed=21))
    cfg = FitConfig(n_candidates=5000)
    cs = candidate_search(d, fit_config=cfg)
    thresholds = np.sort(np.concatenate([[0.0], np.geomspace(1e-7, 1.0, 40)]))
    masks = [solution_set_mask(cs.losses, e) for e in thresholds]
    nested = all(np.all(b[a]) for a, b in zip(masks, masks[1:]))
    contains_min = all(m[int(np.argmin(cs.losses))] for m in masks)
    fit = fit_solution_set(d, fit_config=cfg, candidates=cs, e_n=0.0)
    best = cs.betas[int(np.argmin(cs.losses))][2:]
    dist = ContextDistribution.gaussian(0.95)
    reduces = math.isclose(value_matrix(best[None], fit.policy.gate[None], dist)[0, 0],
                           value_matrix(best[None], best[None], dist)[0, 0], abs_tol=1e-12)
    elapsed = time.perf_counter() - t
    report(11, nested and contains_min and reduces and elapsed < 30,
           f"nested: {nested}; minimiser in S: {contains_min}; "
           f"e_n = 0 gives greedy policy of minimiser: {reduces}", elapsed, 30)
