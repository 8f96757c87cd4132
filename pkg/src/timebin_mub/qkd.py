"""
Phase-noise robustness of a solution in (d+1)-basis prepare-and-measure QKD.

The sender keeps preparing the ideal states of the unperturbed solution. On the
receiver side every modulator phase and every grating chip phase is jittered by
an independent Gaussian error; chip amplitudes are kept, so each grating is
rebuilt as a circulant from its perturbed chips (and is then only approximately
unitary). The symbol error rate of the resulting probability tables is mapped to
an asymptotic secret key fraction.

Key fraction bound: for the (d+1)-basis protocol with one basis reserved for the
key and symmetric errors ``Q`` in all bases, the Bell-diagonal coefficients of
the shared state are ``1 - (d+1) Q / d`` (once) and ``Q / (d (d-1))`` (``d^2 - 1``
times), and

    r(Q) = log2(d) + (1 - (d+1)Q/d) log2(1 - (d+1)Q/d) + ((d+1)Q/d) log2(Q / (d(d-1)))

(Sheridan & Scarani, Phys. Rev. A 82, 030301(R) (2010)). For ``d = 2`` this is
the six-state bound with its 12.6 % threshold.
"""

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import xlogy

from .cascade import circulant_from_chips, compose_cascade, fbg_impulse_response
from .mub import ProbabilityTables, TransferSet, basis_states, probability_tables

logger = logging.getLogger(__name__)

#: Fraction of failed trials at any sigma above which a solution is unusable.
MAX_FAILED_FRACTION = 0.01


class UndefinedConditionalError(ValueError):
    """A matched-basis outcome distribution is undefined (zero detection)."""


@dataclass(frozen=True)
class PerturbationConfig:
    sigma: float = 0.0
    trials: int = 1000
    rng_seed: int = 0
    weight_by_detection: bool = False

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if self.trials < 1:
            raise ValueError(f"trials must be positive, got {self.trials}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")


@dataclass
class SigmaStats:
    sigma: float
    qber_mean: float
    qber_std: float
    skf_mean: float
    skf_std: float
    trials: int
    failed_trials: int
    qber_values: list = field(default_factory=list, repr=False)
    skf_values: list = field(default_factory=list, repr=False)


@dataclass
class QkdReport:
    per_sigma: list
    d: int
    source_solution: str = ""
    rng_seed: int = 0

    @property
    def unusable(self) -> bool:
        return any(s.failed_trials > MAX_FAILED_FRACTION * s.trials for s in self.per_sigma)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["sigma", "qber_mean", "qber_std", "skf_mean", "skf_std", "trials", "failed_trials"]
        )
        for s in self.per_sigma:
            writer.writerow([
                repr(float(s.sigma)), repr(float(s.qber_mean)), repr(float(s.qber_std)),
                repr(float(s.skf_mean)), repr(float(s.skf_std)), s.trials, s.failed_trials,
            ])
        return buf.getvalue()

    def to_json(self, per_trial: bool = False) -> str:
        rows = []
        for s in self.per_sigma:
            row = {
                "sigma": s.sigma, "qber_mean": s.qber_mean, "qber_std": s.qber_std,
                "skf_mean": s.skf_mean, "skf_std": s.skf_std,
                "trials": s.trials, "failed_trials": s.failed_trials,
            }
            if per_trial:
                row["qber"] = list(s.qber_values)
                row["skf"] = list(s.skf_values)
            rows.append(row)
        doc = {
            "d": self.d,
            "source_solution": self.source_solution,
            "rng_seed": self.rng_seed,
            "unusable": self.unusable,
            "per_sigma": rows,
        }
        return json.dumps(doc, indent=1) + "\n"


def perturb(solution, sigma: float, rng: np.random.Generator) -> TransferSet:
    """Receiver-side transfer set with Gaussian phase errors of std ``sigma``.

    Draw order (fixed, for reproducibility): all modulator errors in
    ``eom`` array order, then one error per chip for each grating in cell order.
    """
    if not sigma >= 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    spec = solution.spec
    eom = solution.eom + rng.normal(0.0, sigma, solution.eom.shape)
    gratings = []
    for theta in solution.fbg:
        chips = fbg_impulse_response(theta)
        chips = chips * np.exp(1j * rng.normal(0.0, sigma, spec.S))
        gratings.append(circulant_from_chips(chips))
    W = [compose_cascade(gratings, eom[:, m, :]) for m in range(spec.n_bases)]
    return TransferSet.from_matrices(spec, W)


def qber_from_tables(tables: ProbabilityTables, weight_by_detection: bool = False) -> float:
    """Matched-basis symbol error rate.

    By default the plain average of ``1 - P_mm[n|n]`` over all ``d(d+1)``
    prepared states. With ``weight_by_detection`` each state is weighted by its
    detection probability ``D_mm[n]``.
    """
    nb, _, d = tables.detection.shape
    idx_m = np.repeat(np.arange(nb), d)
    idx_n = np.tile(np.arange(d), nb)
    if np.any(tables.undefined[idx_m, idx_m, idx_n]):
        raise UndefinedConditionalError("matched-basis conditional distribution undefined")
    correct = tables.postselected[idx_m, idx_m, idx_n, idx_n]
    if weight_by_detection:
        w = tables.detection[idx_m, idx_m, idx_n]
        q = 1.0 - np.sum(w * correct) / np.sum(w)
    else:
        q = 1.0 - np.mean(correct)
    return float(min(max(q, 0.0), 1.0))


def skf(qber: float, d: int) -> float:
    """Asymptotic secret bits per sifted symbol, clamped at zero."""
    if isinstance(d, bool) or not isinstance(d, (int, np.integer)) or d < 2:
        raise ValueError(f"d must be an integer >= 2, got {d!r}")
    if not 0.0 <= qber <= 1.0:
        raise ValueError(f"qber must lie in [0, 1], got {qber}")
    x = (d + 1) * qber / d
    if x >= 1.0:
        return 0.0
    rate = np.log2(d) + (xlogy(1.0 - x, 1.0 - x) + xlogy(x, qber / (d * (d - 1)))) / np.log(2)
    return float(max(rate, 0.0))


def skf_threshold(d: int) -> float:
    """Largest QBER with a positive key fraction."""
    def rate(q):
        x = (d + 1) * q / d
        return np.log2(d) + (xlogy(1.0 - x, 1.0 - x) + xlogy(x, q / (d * (d - 1)))) / np.log(2)
    return float(brentq(rate, 1e-12, (d - 1) / d, xtol=1e-15))


def _trial_block(solution, states, sigma, sigma_index, trial_indices, seed, weighted):
    qbers, skfs, failed = [], [], 0
    for t in trial_indices:
        rng = np.random.default_rng([seed, sigma_index, t])
        transfer = perturb(solution, sigma, rng)
        try:
            q = qber_from_tables(probability_tables(transfer, states), weighted)
        except UndefinedConditionalError:
            failed += 1
            continue
        qbers.append(q)
        skfs.append(skf(q, solution.spec.d))
    return qbers, skfs, failed


def _stats(values):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return float("nan"), float("nan")
    # shift by the first value so identical samples give exactly zero spread
    dev = values - values[0]
    std = float(np.std(dev, ddof=1)) if values.size > 1 else 0.0
    return float(values[0] + np.mean(dev)), std


def monte_carlo(solution, sigmas=None, config: PerturbationConfig | None = None,
                workers: int = 1, source: str = "") -> QkdReport:
    """QBER and key-fraction statistics over ``config.trials`` perturbations per sigma.

    Trial ``t`` at ``sigmas[i]`` uses its own generator seeded with
    ``(rng_seed, i, t)``; statistics are accumulated in trial order, so the
    report is identical for any ``workers``.
    """
    config = config or PerturbationConfig()
    if sigmas is None:
        sigmas = [config.sigma]
    sigmas = [float(s) for s in sigmas]
    if any(not s >= 0 for s in sigmas):
        raise ValueError("sigmas must be nonnegative")
    states = basis_states(TransferSet.from_solution(solution.spec, solution))
    trials = range(config.trials)

    jobs = [(s, i) for i, s in enumerate(sigmas)]
    if workers > 1:
        chunks = np.array_split(np.arange(config.trials), workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                (i, c): pool.submit(_trial_block, solution, states, s, i, list(chunk),
                                    config.rng_seed, config.weight_by_detection)
                for s, i in jobs for c, chunk in enumerate(chunks)
            }
            blocks = {}
            for (i, c), fut in futures.items():
                blocks[(i, c)] = fut.result()
        results = []
        for s, i in jobs:
            q, k, f = [], [], 0
            for c in range(len(chunks)):
                bq, bk, bf = blocks[(i, c)]
                q += bq
                k += bk
                f += bf
            results.append((q, k, f))
    else:
        results = [
            _trial_block(solution, states, s, i, trials, config.rng_seed,
                         config.weight_by_detection)
            for s, i in jobs
        ]

    per_sigma = []
    for s, (q, k, f) in zip(sigmas, results):
        qm, qs = _stats(q)
        km, ks = _stats(k)
        logger.info("sigma=%.4g qber=%.4g+-%.2g skf=%.4g failed=%d", s, qm, qs, km, f)
        per_sigma.append(SigmaStats(s, qm, qs, km, ks, config.trials, f, q, k))
    return QkdReport(per_sigma, solution.spec.d, source, config.rng_seed)
