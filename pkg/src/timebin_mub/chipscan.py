"""Mubness error when each grating keeps only its central chips.

Chips are kept symmetrically around delay 0 (index 0, then -1 and +1, ...),
with negative delays at the high end of the circular bin axis. Dropped chips
are not compensated, so lost reflectivity shows up as lost detection
probability and a higher error.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

from .cascade import circulant_from_chips, compose_cascade, fbg_impulse_response, fbg_matrix
from .mub import TransferSet, epsilon_mse


@dataclass
class ChipSweepResult:
    chip_counts: list
    mse: list
    full_mse: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# full_mse={float(self.full_mse)!r}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["K", "epsilon_mse"])
        for k, e in zip(self.chip_counts, self.mse):
            writer.writerow([k, repr(float(e))])
        return buf.getvalue()


def retained_chips(S: int, K: int) -> np.ndarray:
    """Bin indices of the ``K`` chips nearest delay 0 (all of them for ``K == S``)."""
    if isinstance(K, bool) or not isinstance(K, (int, np.integer)):
        raise ValueError(f"K must be an integer, got {K!r}")
    if not 1 <= K <= S:
        raise ValueError(f"K must lie in [1, {S}], got {K}")
    if K == S:
        return np.arange(S)
    if K % 2 == 0:
        raise ValueError(f"K must be odd (or equal to S), got {K}")
    half = (K - 1) // 2
    return np.sort(np.arange(-half, half + 1) % S)


def truncated_gratings(solution, K: int) -> list:
    keep = retained_chips(solution.spec.S, K)
    if K == solution.spec.S:
        # nothing dropped: reuse the exact gratings so the end point is bit-identical
        return [fbg_matrix(theta) for theta in solution.fbg]
    gratings = []
    for theta in solution.fbg:
        chips = fbg_impulse_response(theta)
        kept = np.zeros_like(chips)
        kept[keep] = chips[keep]
        gratings.append(circulant_from_chips(kept))
    return gratings


def truncate_chips(solution, K: int) -> TransferSet:
    """Transfer set after zeroing all but the ``K`` central chips of every grating."""
    gratings = truncated_gratings(solution, K)
    spec = solution.spec
    W = [compose_cascade(gratings, solution.eom[:, m, :]) for m in range(spec.n_bases)]
    return TransferSet.from_matrices(spec, W)


def chip_grid(S: int) -> list:
    """K = 1, 3, 5, ... below S, then S itself (all chips)."""
    grid = list(range(1, S, 2))
    grid.append(S)
    return grid


def chip_sweep(solution, convention: str | None = None) -> ChipSweepResult:
    """Error versus kept-chip count over :func:`chip_grid`."""
    convention = convention or getattr(solution, "convention", "rows")
    spec = solution.spec
    full = epsilon_mse(TransferSet.from_solution(spec, solution).V, convention)
    grid = chip_grid(spec.S)
    mse = [epsilon_mse(truncate_chips(solution, K).V, convention) for K in grid]
    return ChipSweepResult(grid, mse, full)
