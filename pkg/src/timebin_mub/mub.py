"""
Mutual-unbiasedness metrics, basis states, and probability tables.

Each basis ``m`` is represented by the d x d projection ``V^(m)`` of its
cascade onto the input bins ``0..d-1`` and the output window. State ``n`` of
basis ``m`` is the conjugated row ``n`` of ``V^(m)``, so measuring it in basis
``p`` yields amplitudes ``(V^(p) V^(m)H)[q, n]``. The overlaps therefore default
to the row form ``|V^(m) V^(p)H|^2``. The column form ``|V^(m)H V^(p)|^2`` is
available through ``convention="columns"``; for unitary sets the two are not
equivalent (``{I, H, [[1, 1], [i, -i]]/sqrt(2)}`` is unbiased by columns but
``H`` and the third matrix share rows up to phase).
"""

import csv
import io
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .cascade import DeviceSpec, cascade_matrix, project_subspace

#: Row norms and detection probabilities below this are treated as zero.
DEGENERATE_TOL = 1e-12


class DegenerateStateError(ValueError):
    """A projected basis row has (numerically) zero norm."""


@dataclass(frozen=True)
class TransferSet:
    """The ``d + 1`` full transfer matrices and their d x d projections."""

    spec: DeviceSpec
    W: tuple
    V: tuple

    def __post_init__(self):
        nb = self.spec.n_bases
        if len(self.W) != nb or len(self.V) != nb:
            raise ValueError(f"expected {nb} matrices, got W={len(self.W)}, V={len(self.V)}")

    @classmethod
    def from_matrices(cls, spec: DeviceSpec, W) -> "TransferSet":
        W = tuple(np.asarray(w, dtype=complex) for w in W)
        return cls(spec, W, tuple(project_subspace(w, spec) for w in W))

    @classmethod
    def from_solution(cls, spec: DeviceSpec, solution) -> "TransferSet":
        return cls.from_matrices(
            spec, [cascade_matrix(spec, solution, m) for m in range(spec.n_bases)]
        )


@dataclass(frozen=True)
class BasisState:
    """State ``n`` of basis ``m`` as prepared by the sender.

    ``norm_factor`` keeps the norm of the projected row before normalization;
    it is 1 only when ``V^(m)`` is exactly unitary.
    """

    m: int
    n: int
    amplitudes: NDArray[np.complex128]
    norm_factor: float


@dataclass(frozen=True)
class ProbabilityTables:
    """Detection and post-selected outcome probabilities.

    Attributes:
        detection: ``detection[p, m, n]``, probability that state ``n`` of basis
            ``m`` measured in basis ``p`` lands in the output window.
        postselected: ``postselected[p, m, q, n]``, probability of output bin
            ``q`` conditioned on landing in the window. NaN where undefined.
        undefined: ``undefined[p, m, n]`` flags conditionals whose detection
            probability fell below ``DEGENERATE_TOL``.
    """

    detection: NDArray[np.float64]
    postselected: NDArray[np.float64]
    undefined: NDArray[np.bool_]

    @property
    def d(self) -> int:
        return self.detection.shape[2]

    def to_csv(self) -> str:
        """Flat CSV with columns ``p, m, n, q, D, P``, one row per (p, m, q, n)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["p", "m", "n", "q", "D", "P"])
        nb, _, d = self.detection.shape
        for p in range(nb):
            for m in range(nb):
                for n in range(d):
                    D = repr(float(self.detection[p, m, n]))
                    for q in range(d):
                        writer.writerow(
                            [p, m, n, q, D, repr(float(self.postselected[p, m, q, n]))]
                        )
        return buf.getvalue()


def _square(V, name="matrix") -> NDArray[np.complex128]:
    V = np.asarray(V, dtype=complex)
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise ValueError(f"{name} must be square, got shape {V.shape}")
    return V


CONVENTIONS = ("rows", "columns")


def mub_overlap(Va, Vb, convention: str = "rows") -> NDArray[np.float64]:
    """Element-wise squared overlaps between the basis vectors of two matrices.

    With ``convention="rows"`` entry ``[l, k]`` is ``|<row l of Va, row k of Vb>|^2``,
    i.e. ``|Va Vb^H|^2``. With ``"columns"`` it is ``|Va^H Vb|^2``.
    """
    Va = _square(Va, "Va")
    Vb = _square(Vb, "Vb")
    if Va.shape != Vb.shape:
        raise ValueError(f"shape mismatch: {Va.shape} vs {Vb.shape}")
    if convention == "rows":
        return np.abs(Va @ Vb.conj().T) ** 2
    if convention == "columns":
        return np.abs(Va.conj().T @ Vb) ** 2
    raise ValueError(f"convention must be one of {CONVENTIONS}, got {convention!r}")


def epsilon_mse(V, convention: str = "rows") -> float:
    """Mean-squared deviation of all pairwise overlaps from ``1/d``.

    Averages ``(overlap_lk - 1/d)^2`` over the d^2 entries of each unordered
    pair ``m < p`` and over the ``d(d+1)/2`` pairs. Zero exactly for a
    mutually unbiased family.
    """
    V = [_square(v) for v in V]
    d = V[0].shape[0]
    if len(V) != d + 1:
        raise ValueError(f"expected {d + 1} matrices for d={d}, got {len(V)}")
    if any(v.shape != (d, d) for v in V):
        raise ValueError("all matrices must be d x d")
    total = 0.0
    for m in range(d + 1):
        for p in range(m + 1, d + 1):
            total += np.sum((mub_overlap(V[m], V[p], convention) - 1.0 / d) ** 2) / d**2
    return float(2.0 / (d * (d + 1)) * total)


def basis_states(transfer: TransferSet) -> list[BasisState]:
    """The ``d(d+1)`` prepared states, ``|nu_m[n]> ~ sum_k conj(V^(m)[n, k]) |k>``."""
    states = []
    for m, V in enumerate(transfer.V):
        for n in range(V.shape[0]):
            row = V[n]
            norm = float(np.sqrt(np.sum(np.abs(row) ** 2)))
            if norm < DEGENERATE_TOL:
                raise DegenerateStateError(f"row {n} of basis {m} has norm {norm:.3e}")
            states.append(BasisState(m, n, row.conj() / norm, norm))
    return states


def probability_tables(transfer: TransferSet, states) -> ProbabilityTables:
    """Send every state through every full cascade and read the output window."""
    spec = transfer.spec
    d, nb, o = spec.d, spec.n_bases, spec.output_offset
    if len(states) != d * nb:
        raise ValueError(f"expected {d * nb} states, got {len(states)}")
    amps = np.array([np.asarray(st.amplitudes, dtype=complex) for st in states])
    if amps.shape != (d * nb, d):
        raise ValueError(f"state amplitudes must have length {d}")
    ms = np.array([st.m for st in states])
    ns = np.array([st.n for st in states])

    window = np.zeros((nb, nb, d, d))
    for p, W in enumerate(transfer.W):
        # inputs occupy bins 0..d-1 only; one output column per state
        out = W[:, :d] @ amps.T
        window[p, ms, :, ns] = (np.abs(out[o:o + d]) ** 2).T
    detection = window.sum(axis=2)
    undefined = detection < DEGENERATE_TOL
    with np.errstate(invalid="ignore", divide="ignore"):
        postselected = window / detection[:, :, None, :]
    postselected[np.broadcast_to(undefined[:, :, None, :], postselected.shape)] = np.nan
    return ProbabilityTables(detection, postselected, undefined)


def evaluate_solution(spec: DeviceSpec, solution):
    """Convenience: transfer set, states and tables of a stored solution."""
    transfer = TransferSet.from_solution(spec, solution)
    states = basis_states(transfer)
    return transfer, states, probability_tables(transfer, states)


def states_to_csv(states) -> str:
    """Per-state listing of ``|amplitude|^2`` and ``arg(amplitude)`` per time bin."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["m", "n", "k", "probability", "phase", "norm_factor"])
    for s in states:
        for k, a in enumerate(s.amplitudes):
            writer.writerow(
                [s.m, s.n, k, repr(float(abs(a) ** 2)), repr(float(np.angle(a))),
                 repr(float(s.norm_factor))]
            )
    return buf.getvalue()
