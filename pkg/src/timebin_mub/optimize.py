"""
Multi-start phase search minimizing the mubness error.

Free parameters are packed into one flat vector with the fixed layout::

    [ fbg cell 1 (S) | ... | fbg cell N (S)
    | eom cell 1 basis 0 (S) | ... | eom cell 1 basis d (S)
    | ...
    | eom cell N basis 0 (S) | ... | eom cell N basis d (S) ]

i.e. ``params[:N*S].reshape(N, S)`` are the grating spectral phases (shared
by every basis) and ``params[N*S:].reshape(N, d+1, S)`` the modulator phases.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize

from .cascade import TWO_PI, DeviceSpec, canonical_phases, cascade_columns
from .mub import CONVENTIONS, TransferSet, epsilon_mse

logger = logging.getLogger(__name__)

GRADIENT_MODES = ("analytic", "finite-difference")
FBG_INITS = ("uniform", "smooth")


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings of :func:`optimize`.

    ``fbg_init`` picks how grating spectral phases start. ``"uniform"`` draws
    each phase i.i.d. on [0, 2pi), so every grating starts as a code spread
    over the whole truncated space. ``"smooth"`` draws a random low-order
    Fourier profile (``fbg_init_order`` harmonics, Gaussian amplitudes of std
    ``fbg_init_amplitude``, uniform offsets), so every grating starts as a short
    code; descents from there tend to keep the chips near delay 0. Modulator
    phases are always drawn i.i.d. uniform on [0, 2pi).
    """

    restarts: int = 20
    max_iterations: int = 5000
    gradient_mode: str = "analytic"
    fd_step: float = 1e-5
    tolerance: float = 0.0
    rng_seed: int = 0
    convention: str = "rows"
    fbg_init: str = "uniform"
    fbg_init_order: int = 3
    fbg_init_amplitude: float = 1.0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError(f"restarts must be positive, got {self.restarts}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be positive, got {self.max_iterations}")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")
        if not 0.0 < self.fd_step <= 1e-2:
            raise ValueError(f"fd_step must lie in (0, 1e-2], got {self.fd_step}")
        if not self.tolerance >= 0.0:
            raise ValueError(f"tolerance must be nonnegative, got {self.tolerance}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be an unsigned 64-bit integer")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}")
        if self.fbg_init not in FBG_INITS:
            raise ValueError(f"fbg_init must be one of {FBG_INITS}")
        if self.fbg_init_order < 1:
            raise ValueError("fbg_init_order must be positive")
        if not self.fbg_init_amplitude >= 0:
            raise ValueError("fbg_init_amplitude must be nonnegative")


@dataclass
class SolutionSet:
    """All phases of one device configuration.

    Attributes:
        spec: Device geometry.
        fbg: (N, S) grating spectral phases, shared across bases.
        eom: (N, d+1, S) modulator phases, one pattern per cell and basis.
        achieved_mse: Mubness error of these phases.
        metadata: Seed, restart statistics, iteration counts, wall time.
        convention: Overlap form ``achieved_mse`` was computed with.
    """

    spec: DeviceSpec
    fbg: NDArray[np.float64]
    eom: NDArray[np.float64]
    achieved_mse: float
    metadata: dict = field(default_factory=dict)
    convention: str = "rows"

    def __post_init__(self):
        self.fbg = np.asarray(self.fbg, dtype=float)
        self.eom = np.asarray(self.eom, dtype=float)
        spec = self.spec
        if self.fbg.shape != (spec.N, spec.S):
            raise ValueError(f"fbg has shape {self.fbg.shape}, expected {(spec.N, spec.S)}")
        if self.eom.shape != (spec.N, spec.n_bases, spec.S):
            raise ValueError(
                f"eom has shape {self.eom.shape}, expected {(spec.N, spec.n_bases, spec.S)}"
            )
        if not (np.all(np.isfinite(self.fbg)) and np.all(np.isfinite(self.eom))):
            raise ValueError("phases must be finite")

    @property
    def params(self) -> NDArray[np.float64]:
        return pack_params(self.fbg, self.eom)

    @classmethod
    def from_params(cls, spec: DeviceSpec, params, metadata=None,
                    convention: str = "rows") -> "SolutionSet":
        """Build a solution from a flat vector; phases are wrapped into [0, 2pi)."""
        fbg, eom = unpack_params(spec, canonical_phases(params))
        sol = cls(spec, fbg, eom, 0.0, dict(metadata or {}), convention)
        sol.recompute_mse()
        return sol

    @classmethod
    def identity(cls, spec: DeviceSpec) -> "SolutionSet":
        """All phases zero: every basis is the identity map."""
        return cls.from_params(spec, np.zeros(spec.n_params))

    def recompute_mse(self) -> float:
        self.achieved_mse = epsilon_mse(
            TransferSet.from_solution(self.spec, self).V, self.convention
        )
        return self.achieved_mse


def pack_params(fbg, eom) -> NDArray[np.float64]:
    return np.concatenate([np.ravel(fbg), np.ravel(eom)]).astype(float)


def unpack_params(spec: DeviceSpec, params):
    params = np.asarray(params, dtype=float)
    if params.shape != (spec.n_params,):
        raise ValueError(f"expected {spec.n_params} parameters, got shape {params.shape}")
    split = spec.N * spec.S
    return (
        params[:split].reshape(spec.N, spec.S),
        params[split:].reshape(spec.N, spec.n_bases, spec.S),
    )


def _dagger(A):
    return np.conj(np.swapaxes(A, -1, -2))


def _mse_from_windows(V, d):
    # column form on the stacked windows; callers pass V^H for the row form
    nb = V.shape[0]
    G = np.einsum("alk,blj->abkj", V.conj(), V)
    R = np.abs(G) ** 2 - 1.0 / d
    upper = np.triu(np.ones((nb, nb), dtype=bool), k=1)
    scale = 2.0 / (d * (d + 1)) / d**2
    return scale * np.sum(R[upper] ** 2), G, R, upper, scale


def objective(spec: DeviceSpec, params, convention: str = "rows") -> float:
    """Mubness error of the d+1 cascades encoded by ``params``."""
    fbg, eom = unpack_params(spec, params)
    o = spec.output_offset
    V = cascade_columns(spec, fbg, eom)[:, o:o + spec.d, :]
    if convention == "rows":
        V = _dagger(V)
    elif convention != "columns":
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    return float(_mse_from_windows(V, spec.d)[0])


def objective_and_gradient(spec: DeviceSpec, params, convention: str = "rows"):
    """Objective value and its exact gradient by reverse-mode differentiation."""
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    fbg, eom = unpack_params(spec, params)
    d, o = spec.d, spec.output_offset

    # forward pass, keeping the fields on both sides of every phase mask
    X = np.zeros((spec.n_bases, spec.S, d), dtype=complex)
    X[:, np.arange(d), np.arange(d)] = 1.0
    after_eom, after_fbg = [], []
    for theta, phi in zip(fbg, eom):
        Y = np.exp(1j * phi)[:, :, None] * X
        Zp = np.exp(1j * theta)[None, :, None] * np.fft.fft(Y, axis=1, norm="ortho")
        X = np.fft.ifft(Zp, axis=1, norm="ortho")
        after_eom.append(Y)
        after_fbg.append(Zp)
    V = X[:, o:o + d, :]
    rows = convention == "rows"
    U = _dagger(V) if rows else V

    value, G, R, upper, scale = _mse_from_windows(U, d)

    # Wirtinger gradient w.r.t. conj(G) for each pair m < p
    Gamma = np.where(upper[:, :, None, None], 2.0 * scale * R * G, 0.0)
    gU = np.einsum("mlk,mpkj->plj", U, Gamma) + np.einsum("plj,mpkj->mlk", U, Gamma.conj())
    gV = _dagger(gU) if rows else gU

    gX = np.zeros_like(X)
    gX[:, o:o + d, :] = gV
    g_fbg = np.empty_like(fbg)
    g_eom = np.empty_like(eom)
    for n in reversed(range(spec.N)):
        Y, Zp = after_eom[n], after_fbg[n]
        gZp = np.fft.fft(gX, axis=1, norm="ortho")
        g_fbg[n] = 2.0 * np.sum(np.imag(gZp * Zp.conj()), axis=(0, 2))
        gY = np.fft.ifft(np.exp(-1j * fbg[n])[None, :, None] * gZp, axis=1, norm="ortho")
        g_eom[n] = 2.0 * np.sum(np.imag(gY * Y.conj()), axis=2)
        gX = np.exp(-1j * eom[n])[:, :, None] * gY
    return float(value), pack_params(g_fbg, g_eom)


def fd_gradient(spec: DeviceSpec, params, step: float = 1e-5,
                convention: str = "rows") -> NDArray[np.float64]:
    """Central finite-difference gradient of :func:`objective`."""
    params = np.asarray(params, dtype=float)
    grad = np.empty_like(params)
    shifted = params.copy()
    for i in range(params.size):
        shifted[i] = params[i] + step
        up = objective(spec, shifted, convention)
        shifted[i] = params[i] - step
        down = objective(spec, shifted, convention)
        shifted[i] = params[i]
        grad[i] = (up - down) / (2.0 * step)
    return grad


def gradient_check(spec: DeviceSpec, params, fd_step: float = 1e-5,
                   convention: str = "rows") -> float:
    """Max absolute deviation between analytic and central-difference gradients."""
    _, analytic = objective_and_gradient(spec, params, convention)
    return float(np.max(np.abs(analytic - fd_gradient(spec, params, fd_step, convention))))


def initial_params(spec: DeviceSpec, config: OptimizerConfig, index: int) -> NDArray[np.float64]:
    """Starting point of restart ``index``, from the stream ``(rng_seed, index)``."""
    rng = np.random.default_rng([config.rng_seed, index])
    if config.fbg_init == "uniform":
        return rng.uniform(0.0, TWO_PI, spec.n_params)
    freq = TWO_PI * np.arange(spec.S) / spec.S
    harmonics = np.arange(1, config.fbg_init_order + 1)
    amps = rng.normal(0.0, config.fbg_init_amplitude, (spec.N, harmonics.size))
    offsets = rng.uniform(0.0, TWO_PI, (spec.N, harmonics.size))
    fbg = np.einsum(
        "nj,njs->ns", amps,
        np.cos(harmonics[None, :, None] * freq[None, None, :] + offsets[:, :, None]),
    )
    eom = rng.uniform(0.0, TWO_PI, (spec.N, spec.n_bases, spec.S))
    return pack_params(fbg, eom)


def _run_restart(spec: DeviceSpec, config: OptimizerConfig, index: int):
    x0 = initial_params(spec, config, index)

    conv = config.convention
    if config.gradient_mode == "analytic":
        def fun(x):
            return objective_and_gradient(spec, x, conv)
    else:
        def fun(x):
            return objective(spec, x, conv), fd_gradient(spec, x, config.fd_step, conv)

    iterations = 0

    def callback(intermediate_result):
        nonlocal iterations
        iterations += 1
        if intermediate_result.fun <= config.tolerance:
            raise StopIteration

    res = minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": config.max_iterations, "maxfun": 20 * config.max_iterations,
                 "ftol": 1e-16, "gtol": 1e-12, "maxcor": 30},
    )
    x = canonical_phases(res.x)
    return {
        "index": index,
        "params": x,
        "mse": objective(spec, x, conv),
        "iterations": iterations,
        "converged": bool(res.success),
        "message": str(res.message),
    }


def optimize(spec: DeviceSpec, config: OptimizerConfig | None = None,
             workers: int = 1) -> SolutionSet:
    """Best solution over ``config.restarts`` quasi-Newton descents.

    Each restart draws its starting phases (see :func:`initial_params`) from a
    private stream seeded by ``(rng_seed, restart_index)`` and is refined by
    L-BFGS.
    Restarts stop early once one reaches ``config.tolerance``. Ties go to the
    lowest restart index, so the result does not depend on ``workers``.
    """
    config = config or OptimizerConfig()
    start = time.perf_counter()
    results = []
    if workers > 1 and config.restarts > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_restart, spec, config, i) for i in range(config.restarts)]
            all_results = [f.result() for f in futures]
        for r in all_results:
            results.append(r)
            if r["mse"] <= config.tolerance:
                break
    else:
        for i in range(config.restarts):
            r = _run_restart(spec, config, i)
            logger.info("restart %d: mse=%.3e after %d iterations", i, r["mse"], r["iterations"])
            results.append(r)
            if r["mse"] <= config.tolerance:
                break

    best = min(results, key=lambda r: (r["mse"], r["index"]))
    metadata = {
        "seed": int(config.rng_seed),
        "max_iterations": config.max_iterations,
        "gradient_mode": config.gradient_mode,
        "fbg_init": config.fbg_init,
        "tolerance": config.tolerance,
        "restarts_run": len(results),
        "best_restart": best["index"],
        "iterations": best["iterations"],
        "converged": best["converged"],
        "restart_mse": [r["mse"] for r in results],
        "restart_iterations": [r["iterations"] for r in results],
    }
    solution = SolutionSet.from_params(spec, best["params"], metadata, config.convention)
    solution.metadata["wall_time"] = time.perf_counter() - start
    return solution


def _guard_band(spec: DeviceSpec, width: int) -> NDArray[np.int_]:
    # bins circularly nearest the point opposite the output window's center
    center = spec.output_offset + (spec.d - 1) / 2.0 + spec.S / 2.0
    bins = np.arange(spec.S)
    dist = np.abs((bins - center + spec.S / 2.0) % spec.S - spec.S / 2.0)
    return np.sort(np.argsort(dist, kind="stable")[:width])


def leakage(transfer: TransferSet, guard: int | None = None) -> float:
    """Largest power fraction any input bin sends into the wrap-around seam.

    The seam is the band of ``guard`` bins (default ``S // 8``, at least 1)
    diametrically opposite the output window on the circular bin axis. Power
    there means the solution relies on the artificial periodicity of the
    truncated space.
    """
    spec = transfer.spec
    width = max(1, spec.S // 8) if guard is None else guard
    band = _guard_band(spec, width)
    worst = 0.0
    for W in transfer.W:
        weight = np.sum(np.abs(W[band, :spec.d]) ** 2, axis=0)
        worst = max(worst, float(np.max(weight)))
    return worst


def eom_pattern_distance(solution: SolutionSet, power_floor: float = 1e-6) -> NDArray[np.float64]:
    """Per cell, the largest difference between two bases' modulator patterns.

    Only time bins where light actually reaches the modulator in both bases
    (intensity above ``power_floor`` times the peak) are compared, and the
    constant offset between patterns is removed since it is a global phase. A
    value near zero means the cell could use one fixed pattern for all bases.
    """
    spec = solution.spec
    d = spec.d
    X = np.zeros((spec.n_bases, spec.S, d), dtype=complex)
    X[:, np.arange(d), np.arange(d)] = 1.0
    out = np.zeros(spec.N)
    for n in range(spec.N):
        intensity = np.sum(np.abs(X) ** 2, axis=2)
        lit = intensity > power_floor * intensity.max(axis=1, keepdims=True)
        worst = 0.0
        for a in range(spec.n_bases):
            for b in range(a + 1, spec.n_bases):
                mask = lit[a] & lit[b]
                if not mask.any():
                    continue
                delta = np.angle(np.exp(1j * (solution.eom[n, a, mask] - solution.eom[n, b, mask])))
                offset = np.angle(np.mean(np.exp(1j * delta)))
                worst = max(worst, float(np.max(np.abs(np.angle(np.exp(1j * (delta - offset)))))))
        out[n] = worst
        X = np.exp(1j * solution.eom[n])[:, :, None] * X
        X = np.fft.ifft(
            np.exp(1j * solution.fbg[n])[None, :, None] * np.fft.fft(X, axis=1, norm="ortho"),
            axis=1, norm="ortho",
        )
    return out
