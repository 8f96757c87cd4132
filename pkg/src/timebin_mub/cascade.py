"""
Transfer matrices of a truncated EOM/FBG cascade.

A cascade of ``N`` unit cells acts on ``S`` time-bin modes. Each cell is an
electro-optic phase modulator (a diagonal unitary, one phase per time bin)
followed by a coded fiber Bragg grating (a circulant unitary, parameterized by
one spectral phase per DFT frequency). The overall map for basis ``m`` is

    W = C_N D_N ... C_1 D_1

with ``D_1`` acting first on the input. The truncated space is circular, so
negative FBG delays wrap around to the highest bin indices.

The DFT convention used throughout is the unitary one,
``F[l, s] = exp(-2j*pi*l*s/S) / sqrt(S)``, so that ``F @ x`` equals
``numpy.fft.fft(x, norm="ortho")``.
"""

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class DeviceSpec:
    """Static geometry of the cascade.

    Attributes:
        S: Number of retained time-bin modes.
        N: Number of EOM/FBG unit cells.
        d: Qudit dimension. The device realizes ``d + 1`` bases.
        output_offset: Index of the first bin of the d-dimensional output window.
        enforce_min_size: Require ``S >= 4 d`` to keep truncation artifacts away.
    """

    S: int
    N: int
    d: int
    output_offset: int = 0
    enforce_min_size: bool = True

    def __post_init__(self):
        for name in ("S", "N", "d", "output_offset"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ValueError(f"{name} must be an integer, got {value!r}")
        if self.S < 1:
            raise ValueError(f"S must be positive, got {self.S}")
        if self.N < 1:
            raise ValueError(f"N must be positive, got {self.N}")
        if self.d < 2:
            raise ValueError(f"d must be at least 2, got {self.d}")
        if self.d > self.S:
            raise ValueError(f"d={self.d} does not fit in S={self.S} modes")
        if self.enforce_min_size and self.S < 4 * self.d:
            raise ValueError(
                f"S={self.S} is below 4*d={4 * self.d}; pass enforce_min_size=False to allow it"
            )
        if not 0 <= self.output_offset <= self.S - self.d:
            raise ValueError(
                f"output_offset must lie in [0, {self.S - self.d}], got {self.output_offset}"
            )

    @property
    def n_bases(self) -> int:
        return self.d + 1

    @property
    def n_params(self) -> int:
        """Free phases: N*S spectral plus N*(d+1)*S temporal."""
        return self.S * self.N * (self.d + 2)

    def to_dict(self) -> dict:
        return {
            "S": int(self.S),
            "N": int(self.N),
            "d": int(self.d),
            "output_offset": int(self.output_offset),
            "enforce_min_size": bool(self.enforce_min_size),
        }


def _phase_vector(phases, S: int | None = None) -> NDArray[np.float64]:
    phases = np.asarray(phases, dtype=float)
    if phases.ndim != 1:
        raise ValueError(f"phase pattern must be one-dimensional, got shape {phases.shape}")
    if S is not None and phases.shape[0] != S:
        raise ValueError(f"phase pattern has length {phases.shape[0]}, expected {S}")
    if not np.all(np.isfinite(phases)):
        raise ValueError("phase pattern contains non-finite entries")
    return phases


def canonical_phases(phases) -> NDArray[np.float64]:
    """Wrap phases into ``[0, 2*pi)``."""
    wrapped = np.mod(np.asarray(phases, dtype=float), TWO_PI)
    # np.mod can round tiny negative inputs up to exactly 2*pi
    wrapped[wrapped >= TWO_PI] = 0.0
    return wrapped


def dft_matrix(S: int) -> NDArray[np.complex128]:
    """Unitary S-point DFT matrix, ``F[l, s] = exp(-2j*pi*l*s/S) / sqrt(S)``."""
    if isinstance(S, bool) or not isinstance(S, (int, np.integer)) or S < 1:
        raise ValueError(f"S must be a positive integer, got {S!r}")
    idx = np.arange(S)
    # reduce l*s mod S before scaling so large S keeps full accuracy
    return np.exp(-2j * np.pi * (np.outer(idx, idx) % S) / S) / np.sqrt(S)


def fbg_matrix(phases) -> NDArray[np.complex128]:
    """Circulant unitary ``F^H diag(exp(i*phases)) F`` of one grating."""
    phases = _phase_vector(phases)
    F = dft_matrix(phases.shape[0])
    return F.conj().T @ (np.exp(1j * phases)[:, None] * F)


def fbg_impulse_response(phases) -> NDArray[np.complex128]:
    """Chip sequence ``c[l] = (1/S) sum_s exp(i*phases[s]) exp(2j*pi*s*l/S)``.

    Index ``l`` is read modulo ``S``: chip ``-1`` sits in bin ``S - 1``. The
    result is the first column of :func:`fbg_matrix`.
    """
    phases = _phase_vector(phases)
    return np.fft.ifft(np.exp(1j * phases))


def circulant_from_chips(chips) -> NDArray[np.complex128]:
    """Circulant matrix with ``C[l, k] = chips[(l - k) mod S]``."""
    chips = np.asarray(chips, dtype=complex)
    if chips.ndim != 1:
        raise ValueError(f"chips must be one-dimensional, got shape {chips.shape}")
    S = chips.shape[0]
    idx = np.arange(S)
    return chips[(idx[:, None] - idx[None, :]) % S]


def eom_matrix(phases) -> NDArray[np.complex128]:
    """Diagonal unitary with entries ``exp(i*phases[l])``."""
    phases = _phase_vector(phases)
    return np.diag(np.exp(1j * phases))


def _check_solution_shapes(spec: DeviceSpec, fbg, eom):
    fbg = np.asarray(fbg, dtype=float)
    eom = np.asarray(eom, dtype=float)
    if fbg.shape != (spec.N, spec.S):
        raise ValueError(f"fbg phases have shape {fbg.shape}, expected {(spec.N, spec.S)}")
    if eom.shape != (spec.N, spec.n_bases, spec.S):
        raise ValueError(
            f"eom phases have shape {eom.shape}, expected {(spec.N, spec.n_bases, spec.S)}"
        )
    return fbg, eom


def compose_cascade(fbg_matrices, eom_phases) -> NDArray[np.complex128]:
    """Multiply out ``C_N D_N ... C_1 D_1`` from explicit grating matrices.

    Args:
        fbg_matrices: Sequence of N (S, S) grating matrices, cell 1 first.
        eom_phases: (N, S) modulator phases for one basis, cell 1 first.
    """
    eom_phases = np.asarray(eom_phases, dtype=float)
    S = eom_phases.shape[1]
    W = np.eye(S, dtype=complex)
    for C, phi in zip(fbg_matrices, eom_phases):
        W = C @ (np.exp(1j * phi)[:, None] * W)
    return W


def cascade_matrix(spec: DeviceSpec, solution, m: int) -> NDArray[np.complex128]:
    """Full S x S transfer matrix ``W^(m)`` of basis ``m``.

    ``solution`` is anything exposing ``fbg`` with shape (N, S) and ``eom`` with
    shape (N, d+1, S), e.g. :class:`timebin_mub.optimize.SolutionSet`.
    """
    if not 0 <= m <= spec.d:
        raise ValueError(f"basis index must lie in [0, {spec.d}], got {m}")
    fbg, eom = _check_solution_shapes(spec, solution.fbg, solution.eom)
    return compose_cascade([fbg_matrix(theta) for theta in fbg], eom[:, m, :])


def project_subspace(W, spec: DeviceSpec) -> NDArray[np.complex128]:
    """d x d block ``V[l, k] = W[output_offset + l, k]``."""
    W = np.asarray(W)
    if W.shape != (spec.S, spec.S):
        raise ValueError(f"W has shape {W.shape}, expected {(spec.S, spec.S)}")
    o = spec.output_offset
    return W[o:o + spec.d, :spec.d].copy()


def cascade_columns(spec: DeviceSpec, fbg, eom) -> NDArray[np.complex128]:
    """First d columns of every ``W^(m)``, stacked with shape (d+1, S, d).

    FFT-based; agrees with :func:`cascade_matrix` to rounding.
    """
    fbg, eom = _check_solution_shapes(spec, fbg, eom)
    X = np.zeros((spec.n_bases, spec.S, spec.d), dtype=complex)
    X[:, np.arange(spec.d), np.arange(spec.d)] = 1.0
    for theta, phi in zip(fbg, eom):
        X = np.exp(1j * phi)[:, :, None] * X
        X = np.fft.ifft(
            np.exp(1j * theta)[None, :, None] * np.fft.fft(X, axis=1, norm="ortho"),
            axis=1,
            norm="ortho",
        )
    return X
