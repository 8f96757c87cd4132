"""
How much phase noise can a key survive?
=======================================

Jitter every modulator value and grating chip of a designed device, measure the
resulting symbol error rate, and convert it to a secret key fraction.
Run 02_design_qubit_mubs.py first, or let this script design a device itself.
"""

from pathlib import Path

import numpy as np

from timebin_mub.cascade import DeviceSpec
from timebin_mub.optimize import OptimizerConfig, optimize
from timebin_mub.qkd import PerturbationConfig, monte_carlo, skf, skf_threshold
from timebin_mub.solution_io import load_solution

path = Path("qubit_solution.json")
if path.exists():
    solution = load_solution(path)
else:
    solution = optimize(DeviceSpec(S=32, N=2, d=2),
                        OptimizerConfig(restarts=20, max_iterations=20000, tolerance=1.05e-7,
                                        fbg_init="smooth"))

# The key fraction bound alone: higher dimensions tolerate more errors.
for d in (2, 3, 4):
    print(f"d={d}: skf(0)={skf(0.0, d):.3f} bits, key vanishes above QBER {skf_threshold(d):.4f}")
for q in (0.0, 0.02, 0.05, 0.1):
    print(f"  QBER {q:.2f}:", "  ".join(f"d={d} {skf(q, d):.3f}" for d in (2, 3, 4)))

# 1000 noisy devices per sigma.
sigmas = [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5]
report = monte_carlo(solution, sigmas, PerturbationConfig(trials=1000, rng_seed=7))
print("\n sigma   QBER (mean +- std)      SKF (mean +- std)")
for s in report.per_sigma:
    print(f" {s.sigma:5.2f}   {s.qber_mean:.4f} +- {s.qber_std:.4f}     "
          f"{s.skf_mean:.4f} +- {s.skf_std:.4f}")

# Sigma at which the mean key fraction drops below half a bit.
means = np.array([s.skf_mean for s in report.per_sigma])
print("\nfirst sigma with SKF < 0.5:", sigmas[int(np.argmax(means < 0.5))] if (means < 0.5).any()
      else "none in grid")
Path("qkd_report.csv").write_text(report.to_csv())
