"""
Building blocks of a time-bin cascade
=====================================

A grating applies a phase to each frequency bin, which in the time-bin basis
is a circulant matrix. A modulator applies a phase to each time bin. Chaining
them gives the transfer matrix of one basis.
"""

import numpy as np

from timebin_mub.cascade import (
    DeviceSpec,
    cascade_matrix,
    fbg_impulse_response,
    fbg_matrix,
    project_subspace,
)
from timebin_mub.optimize import SolutionSet

np.set_printoptions(precision=3, suppress=True, linewidth=110)
rng = np.random.default_rng(1)

# A linear spectral ramp is a pure delay. With 8 bins and a ramp of 3 cycles
# the single nonzero chip sits at delay -3, which wraps to bin 5.
S = 8
ramp = 2 * np.pi * 3 * np.arange(S) / S
print("chips of a 3-cycle ramp:", np.abs(fbg_impulse_response(ramp)).round(12))

# Random spectral phases spread the chips out but keep total power at 1.
theta = rng.uniform(0, 2 * np.pi, S)
chips = fbg_impulse_response(theta)
print("chip powers:", np.abs(chips) ** 2)
print("total chip power:", np.sum(np.abs(chips) ** 2))

# Every column of the grating matrix is a cyclic shift of the chip sequence.
C = fbg_matrix(theta)
print("column 3 == chips rolled by 3:", np.allclose(C[:, 3], np.roll(chips, 3)))

# Two cells, three bases (d=2). The gratings are shared, the modulators are not.
spec = DeviceSpec(S=16, N=2, d=2)
solution = SolutionSet.from_params(spec, rng.uniform(0, 2 * np.pi, spec.n_params))
for m in range(spec.n_bases):
    W = cascade_matrix(spec, solution, m)
    V = project_subspace(W, spec)
    print(f"basis {m}: |W^H W - I| = {np.max(np.abs(W.conj().T @ W - np.eye(16))):.1e}")
    print("  window V =\n", V)

# A random point is nowhere near unbiased; the optimizer's job is to fix that.
print("mubness error of the random point:", solution.achieved_mse)
