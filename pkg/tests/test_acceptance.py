"""Acceptance gate: one test per primary criterion, each recording a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v``; the lines are printed in the
terminal summary. ``python tests/test_acceptance.py`` prints them directly.
"""

import time

import numpy as np
import pytest

from oracles import as_rows, epsilon_loop, random_matrix, weyl_heisenberg_bases
from timebin_mub.cascade import DeviceSpec, cascade_matrix, eom_matrix, fbg_matrix
from timebin_mub.chipscan import chip_sweep
from timebin_mub.mub import TransferSet, epsilon_mse, evaluate_solution, mub_overlap
from timebin_mub.optimize import OptimizerConfig, SolutionSet, gradient_check, leakage, optimize
from timebin_mub.qkd import PerturbationConfig, monte_carlo, qber_from_tables, skf, skf_threshold

RESULTS = {}

# best published values at S=128, N=2
REFERENCE_MSE = {2: 1.05e-7, 3: 1.50e-4, 4: 1.60e-4}
SIGMAS = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5]


def record(key, title, passed, detail):
    RESULTS[key] = f"[PRIMARY] {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    print(RESULTS[key])
    return passed


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


# ---------------------------------------------------------------- solutions


@pytest.fixture(scope="module")
def d2_full():
    """Desk-scale search with every restart run to completion."""
    spec = DeviceSpec(S=32, N=2, d=2)
    cfg = OptimizerConfig(restarts=20, max_iterations=5000, rng_seed=0, fbg_init="smooth")
    return timed(optimize, spec, cfg)


@pytest.fixture(scope="module")
def d2_reference():
    """Same search, stopped once the reported d=2 optimum is matched."""
    spec = DeviceSpec(S=32, N=2, d=2)
    cfg = OptimizerConfig(restarts=20, max_iterations=20000, tolerance=REFERENCE_MSE[2], rng_seed=0,
                          fbg_init="smooth")
    return optimize(spec, cfg)


@pytest.fixture(scope="module")
def higher_d():
    out = {}
    for d in (3, 4):
        spec = DeviceSpec(S=32, N=2, d=d)
        out[d] = optimize(spec, OptimizerConfig(restarts=12, max_iterations=5000, rng_seed=0))
    return out


# ---------------------------------------------------------------- criteria


def test_unitarity_suite():
    rng = np.random.default_rng(2024)
    sizes, cells = (4, 8, 16, 32, 128), (1, 2, 3)
    start = time.perf_counter()
    worst = 0.0
    for i in range(1000):
        S, N = sizes[i % 5], cells[(i // 5) % 3]
        kind = (i // 15) % 3
        if kind == 0:
            M = fbg_matrix(rng.uniform(0, 2 * np.pi, S))
        elif kind == 1:
            M = eom_matrix(rng.uniform(0, 2 * np.pi, S))
        else:
            spec = DeviceSpec(S=S, N=N, d=2, enforce_min_size=False)
            sol = SolutionSet(spec, rng.uniform(0, 2 * np.pi, (N, S)),
                              rng.uniform(0, 2 * np.pi, (N, 3, S)), 0.0)
            M = cascade_matrix(spec, sol, int(rng.integers(0, 3)))
        worst = max(worst, float(np.max(np.abs(M.conj().T @ M - np.eye(S)))))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and elapsed < 30
    record("unitarity", "unitarity suite (1000 constructions)", ok,
           f"max|M^H M - I| = {worst:.2e} (< 1e-10), {elapsed:.1f} s (< 30 s)")
    assert ok


def test_weyl_heisenberg_oracle():
    start = time.perf_counter()
    eps, dev = {}, {}
    for d in (2, 3):
        V = as_rows(weyl_heisenberg_bases(d))
        eps[d] = epsilon_mse(V)
        dev[d] = max(float(np.max(np.abs(mub_overlap(V[a], V[b]) - 1 / d)))
                     for a in range(d + 1) for b in range(a + 1, d + 1))
    elapsed = time.perf_counter() - start
    ok = max(eps.values()) < 1e-14 and max(dev.values()) < 1e-12 and elapsed < 1
    record("wh", "analytic MUB oracle (d=2,3)", ok,
           f"eps = {eps[2]:.1e}/{eps[3]:.1e} (< 1e-14), off-diagonal dev "
           f"{max(dev.values()):.1e} (< 1e-12), {elapsed * 1e3:.1f} ms")
    assert ok


def test_identity_set_value():
    exact = epsilon_mse([np.eye(2)] * 3)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        V = [random_matrix(rng, 2) for _ in range(3)]
        worst = max(worst, abs(epsilon_mse(V) - epsilon_loop(V)))
    ok = exact == 0.25 and worst < 1e-12
    record("identity", "identity-set value and loop oracle", ok,
           f"eps(I,I,I) = {exact!r} (== 0.25), max |eps - loop| = {worst:.1e} over 20 triples")
    assert ok


def test_optimization_reproduction(d2_full):
    sol, elapsed = d2_full
    leak = leakage(TransferSet.from_solution(sol.spec, sol))
    ok = sol.achieved_mse <= 1e-5 and elapsed < 600
    record("repro", "d=2 S=32 N=2 reproduction (20 restarts)", ok,
           f"eps = {sol.achieved_mse:.2e} (<= 1e-5), {elapsed:.0f} s (< 600 s), "
           f"leakage {leak:.1e}, restart eps range "
           f"{min(sol.metadata['restart_mse']):.1e}..{max(sol.metadata['restart_mse']):.1e}")
    assert ok


def _table_checks(sol):
    _, _, tables = evaluate_solution(sol.spec, sol)
    d = sol.spec.d
    nb = d + 1
    matched = min(tables.postselected[m, m, n, n] for m in range(nb) for n in range(d))
    mismatch = max(float(np.max(np.abs(tables.postselected[p, m] - 1 / d)))
                   for p in range(nb) for m in range(nb) if p != m)
    return matched, mismatch, float(tables.detection.min()), float(tables.detection.max())


def test_probability_tables(d2_full, d2_reference, higher_d):
    lines, ok = [], True
    for label, sol in (("d=2 full", d2_full[0]), ("d=2 reference-grade", d2_reference)):
        matched, mismatch, dmin, _ = _table_checks(sol)
        good = (sol.achieved_mse <= 1e-4 and matched >= 0.95 and mismatch <= 0.05
                and dmin > 0.999)
        ok &= good
        lines.append(f"{label}: matched >= {matched:.4f}, |P - 1/d| <= {mismatch:.1e}, "
                     f"D >= {dmin:.5f}")
    for d, sol in higher_d.items():
        reference_grade = sol.achieved_mse <= 10 * REFERENCE_MSE[d]
        matched, mismatch, dmin, dmax = _table_checks(sol)
        good = reference_grade and dmin >= 0.96
        ok &= good
        lines.append(f"d={d} (eps {sol.achieved_mse:.2e}): D in [{dmin:.4f}, {dmax:.4f}] "
                     f"(needs >= 0.96)")
    record("tables", "probability-table properties", ok, "; ".join(lines))
    assert ok


def test_skf_endpoints():
    exact = all(skf(0.0, d) == np.log2(d) for d in (2, 3, 4))
    thresholds = [skf_threshold(d) for d in (2, 3, 4)]
    increasing = thresholds[0] < thresholds[1] < thresholds[2]
    ok = exact and increasing
    record("skf", "SKF endpoints and thresholds", ok,
           f"skf(0,d) == log2 d: {exact}; thresholds "
           + " < ".join(f"{t:.4f}" for t in thresholds))
    assert ok


def test_monte_carlo(d2_reference):
    sol = d2_reference
    cfg = PerturbationConfig(trials=1000, rng_seed=11)
    report, elapsed = timed(monte_carlo, sol, SIGMAS, cfg)
    again = monte_carlo(sol, SIGMAS, cfg)
    same = report.to_csv() == again.to_csv() and report.to_json(True) == again.to_json(True)
    zero = report.per_sigma[0]
    q0 = qber_from_tables(evaluate_solution(sol.spec, sol)[2])
    degenerate = zero.qber_std == 0 and zero.skf_std == 0 and abs(zero.qber_mean - q0) < 1e-12
    ok = same and degenerate and elapsed < 300
    curve = ", ".join(f"{s.sigma:g}:{s.skf_mean:.3f}" for s in report.per_sigma)
    record("mc", "Monte-Carlo determinism and degeneracy", ok,
           f"identical bytes: {same}; sigma=0 std {zero.qber_std} and |Q - Q0| = "
           f"{abs(zero.qber_mean - q0):.1e}; {len(SIGMAS)}x1000 trials in {elapsed:.0f} s "
           f"(< 300 s); skf by sigma {curve}")
    assert ok


def test_chip_sweep(d2_reference, d2_full):
    res = chip_sweep(d2_reference)
    tail = [abs(e - res.full_mse) / res.full_mse
            for k, e in zip(res.chip_counts, res.mse) if k >= 21]
    exact_end = res.mse[-1] == res.full_mse
    ident = chip_sweep(SolutionSet.identity(DeviceSpec(S=32, N=2, d=2)))
    flat = float(np.ptp(ident.mse))
    ok = max(tail) < 0.1 and exact_end and flat < 1e-14
    deep = chip_sweep(d2_full[0])
    deep_tail = max(abs(e - deep.full_mse) / deep.full_mse
                    for k, e in zip(deep.chip_counts, deep.mse) if k >= 21)
    record("chips", "chip sweep floor by K=21", ok,
           f"reference-grade optimum (eps {res.full_mse:.2e}): max rel. dev for K >= 21 "
           f"{max(tail):.3f} (< 0.1), eps(S) == full: {exact_end}, identity spread {flat:.1e}; "
           f"[info] fully converged optimum (eps {deep.full_mse:.1e}): {deep_tail:.2g}")
    assert ok


def test_gradient_correctness():
    spec = DeviceSpec(S=8, N=2, d=2)
    rng = np.random.default_rng(99)
    devs = [gradient_check(spec, rng.uniform(0, 2 * np.pi, spec.n_params)) for _ in range(10)]
    ok = max(devs) < 1e-6
    record("grad", "analytic gradient vs central differences", ok,
           f"max deviation {max(devs):.1e} over 10 points (< 1e-6)")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
