import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timebin_mub.cascade import DeviceSpec, fbg_impulse_response, fbg_matrix
from timebin_mub.mub import ProbabilityTables, TransferSet, evaluate_solution
from timebin_mub.optimize import OptimizerConfig, SolutionSet, optimize
from timebin_mub.qkd import (
    PerturbationConfig,
    UndefinedConditionalError,
    monte_carlo,
    perturb,
    qber_from_tables,
    skf,
    skf_threshold,
)

SPEC = DeviceSpec(S=8, N=2, d=2)


@pytest.fixture(scope="module")
def solved():
    return optimize(SPEC, OptimizerConfig(restarts=2, max_iterations=400, rng_seed=1))


def tables_with(d, matched, other=None):
    nb = d + 1
    P = np.full((nb, nb, d, d), 1.0 / d if other is None else other)
    for m in range(nb):
        P[m, m] = matched * np.eye(d) + (1 - matched) / (d - 1) * (1 - np.eye(d))
    return ProbabilityTables(np.ones((nb, nb, d)), P, np.zeros((nb, nb, d), dtype=bool))


def sheridan_scarani(q, d):
    # independent transcription: log2 d minus the entropy of the Bell-diagonal weights
    x = (d + 1) * q / d
    weights = [1 - x] + [q / (d * (d - 1))] * (d * d - 1)
    h = -sum(w * np.log2(w) for w in weights if w > 0)
    return max(0.0, np.log2(d) - h)


class TestSkf:
    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_zero_error(self, d):
        assert skf(0.0, d) == np.log2(d)

    def test_anchor_values(self):
        assert skf(0.0, 4) == 2.0
        assert skf(0.0, 2) == 1.0

    @pytest.mark.parametrize("d", [2, 3, 4, 5])
    @pytest.mark.parametrize("q", [1e-6, 0.01, 0.05, 0.1, 0.15, 0.2])
    def test_matches_entropy_form(self, d, q):
        assert skf(q, d) == pytest.approx(sheridan_scarani(q, d), abs=1e-12)

    def test_six_state_threshold(self):
        assert skf_threshold(2) == pytest.approx(0.1262, abs=1e-4)

    def test_thresholds_increase(self):
        t = [skf_threshold(d) for d in (2, 3, 4, 5)]
        assert all(a < b for a, b in zip(t, t[1:]))
        for d, q in zip((2, 3, 4, 5), t):
            assert skf(q * 0.999, d) > 0
            assert skf(q * 1.001, d) == 0

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 6), st.floats(0, 1), st.floats(0, 1))
    def test_monotone_and_bounded(self, d, a, b):
        lo, hi = min(a, b), max(a, b)
        assert 0 <= skf(hi, d) <= skf(lo, d) + 1e-12 <= np.log2(d) + 2e-12

    @pytest.mark.parametrize("q,d", [(-0.1, 2), (1.1, 2), (0.1, 1), (0.1, 2.0)])
    def test_rejects(self, q, d):
        with pytest.raises(ValueError):
            skf(q, d)


class TestQber:
    def test_ideal(self):
        assert qber_from_tables(tables_with(3, 1.0)) == 0.0

    def test_uniform_limit(self):
        d = 3
        t = ProbabilityTables(np.ones((4, 4, 3)), np.full((4, 4, 3, 3), 1 / 3),
                              np.zeros((4, 4, 3), dtype=bool))
        assert qber_from_tables(t) == pytest.approx(1 - 1 / d, abs=1e-15)

    def test_direct_average(self):
        assert qber_from_tables(tables_with(2, 0.99)) == pytest.approx(0.01, abs=1e-15)

    def test_weighting(self):
        t = tables_with(2, 1.0)
        P = t.postselected.copy()
        P[0, 0] = [[0.5, 0.5], [0.5, 0.5]]
        D = t.detection.copy()
        D[0, 0] = 0.25
        t = ProbabilityTables(D, P, t.undefined)
        assert qber_from_tables(t) == pytest.approx(0.5 * 2 / 6)
        assert qber_from_tables(t, weight_by_detection=True) == pytest.approx(2 * 0.25 * 0.5 / 4.5)

    def test_undefined_raises(self):
        t = tables_with(2, 1.0)
        und = t.undefined.copy()
        und[1, 1, 0] = True
        with pytest.raises(UndefinedConditionalError):
            qber_from_tables(ProbabilityTables(t.detection, t.postselected, und))

    def test_undefined_mismatched_is_ignored(self):
        t = tables_with(2, 1.0)
        und = t.undefined.copy()
        und[0, 1, 0] = True
        assert qber_from_tables(ProbabilityTables(t.detection, t.postselected, und)) == 0.0


class TestPerturb:
    def test_sigma_zero_identity(self, solved):
        ideal = TransferSet.from_solution(SPEC, solved)
        pert = perturb(solved, 0.0, np.random.default_rng(0))
        for a, b in zip(ideal.W, pert.W):
            assert np.max(np.abs(a - b)) < 1e-12

    def test_chip_power_preserved(self):
        theta = np.random.default_rng(2).uniform(0, 2 * np.pi, 16)
        c = fbg_impulse_response(theta)
        noisy = c * np.exp(1j * np.random.default_rng(3).normal(0, 0.1, 16))
        assert abs(np.sum(np.abs(noisy) ** 2) - 1) < 1e-12

    def test_not_unitary_but_bounded(self, solved):
        pert = perturb(solved, 0.1, np.random.default_rng(4))
        W = pert.W[0]
        assert np.max(np.abs(W.conj().T @ W - np.eye(SPEC.S))) > 1e-6

    def test_draw_order(self, solved):
        rng = np.random.default_rng(9)
        pert = perturb(solved, 0.2, rng)
        ref = np.random.default_rng(9)
        eom = solved.eom + ref.normal(0, 0.2, solved.eom.shape)
        C = []
        for theta in solved.fbg:
            c = fbg_impulse_response(theta) * np.exp(1j * ref.normal(0, 0.2, SPEC.S))
            C.append(np.array([[c[(l - k) % SPEC.S] for k in range(SPEC.S)]
                               for l in range(SPEC.S)]))
        for m in range(3):
            W = C[1] @ np.diag(np.exp(1j * eom[1, m])) @ C[0] @ np.diag(np.exp(1j * eom[0, m]))
            np.testing.assert_allclose(pert.W[m], W, atol=1e-12)

    def test_sigma_zero_chip_rebuild(self):
        theta = np.random.default_rng(5).uniform(0, 2 * np.pi, 16)
        spec = DeviceSpec(S=16, N=1, d=2)
        sol = SolutionSet(spec, theta[None], np.zeros((1, 3, 16)), 0.0)
        W = perturb(sol, 0.0, np.random.default_rng(0)).W[0]
        assert np.max(np.abs(W - fbg_matrix(theta))) < 1e-12


class TestMonteCarlo:
    def test_sigma_zero(self, solved):
        _, _, tables = evaluate_solution(SPEC, solved)
        q0 = qber_from_tables(tables)
        rep = monte_carlo(solved, [0.0], PerturbationConfig(trials=5))
        s = rep.per_sigma[0]
        assert s.qber_std == 0.0 and s.skf_std == 0.0
        assert abs(s.qber_mean - q0) < 1e-12
        assert s.skf_mean == pytest.approx(skf(q0, 2), abs=1e-12)
        assert s.trials == 5 and s.failed_trials == 0

    def test_deterministic_bytes(self, solved):
        cfg = PerturbationConfig(trials=20, rng_seed=77)
        a = monte_carlo(solved, [0.0, 0.1, 0.3], cfg)
        b = monte_carlo(solved, [0.0, 0.1, 0.3], cfg)
        assert a.to_csv() == b.to_csv()
        assert a.to_json(per_trial=True) == b.to_json(per_trial=True)

    def test_workers_equivalent(self, solved):
        cfg = PerturbationConfig(trials=12, rng_seed=3)
        a = monte_carlo(solved, [0.1, 0.2], cfg, workers=1)
        b = monte_carlo(solved, [0.1, 0.2], cfg, workers=3)
        assert a.to_csv() == b.to_csv()

    def test_seed_matters(self, solved):
        a = monte_carlo(solved, [0.2], PerturbationConfig(trials=10, rng_seed=1))
        b = monte_carlo(solved, [0.2], PerturbationConfig(trials=10, rng_seed=2))
        assert a.to_csv() != b.to_csv()

    def test_qber_grows_with_sigma(self, solved):
        rep = monte_carlo(solved, [0.0, 0.05, 0.15, 0.4], PerturbationConfig(trials=200))
        for lo, hi in zip(rep.per_sigma, rep.per_sigma[1:]):
            se = np.hypot(lo.qber_std, hi.qber_std) / np.sqrt(200)
            assert hi.qber_mean >= lo.qber_mean - 2 * se
        assert rep.per_sigma[-1].skf_mean < rep.per_sigma[0].skf_mean
        for s in rep.per_sigma:
            assert 0 <= s.qber_mean <= 1
            assert s.skf_mean <= 1 + 1e-12

    def test_report_formats(self, solved):
        rep = monte_carlo(solved, [0.0, 0.1], PerturbationConfig(trials=4), source="x.json")
        rows = list(csv.reader(io.StringIO(rep.to_csv())))
        assert rows[0] == ["sigma", "qber_mean", "qber_std", "skf_mean", "skf_std", "trials",
                           "failed_trials"]
        assert len(rows) == 3 and all(len(r) == 7 for r in rows)
        doc = json.loads(rep.to_json(per_trial=True))
        assert doc["source_solution"] == "x.json" and doc["d"] == 2
        assert len(doc["per_sigma"][1]["qber"]) == 4
        assert "qber" not in json.loads(rep.to_json())["per_sigma"][0]
        assert not rep.unusable

    def test_failed_trials_counted(self, solved, monkeypatch):
        # a healthy solution never loses a matched state, so inject the failure
        import timebin_mub.qkd as qkd
        real = qkd.qber_from_tables
        calls = {"n": 0}

        def flaky(tables, weighted=False):
            calls["n"] += 1
            if calls["n"] % 2 == 0:
                raise UndefinedConditionalError("injected")
            return real(tables, weighted)

        monkeypatch.setattr(qkd, "qber_from_tables", flaky)
        rep = monte_carlo(solved, [0.1], PerturbationConfig(trials=6))
        s = rep.per_sigma[0]
        assert s.failed_trials == 3 and len(s.qber_values) == 3
        assert rep.unusable

    @pytest.mark.parametrize("kwargs", [dict(sigma=-0.1), dict(trials=0), dict(rng_seed=-1)])
    def test_config_rejects(self, kwargs):
        with pytest.raises(ValueError):
            PerturbationConfig(**kwargs)
