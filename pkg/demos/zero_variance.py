"""
Zero-variance controls
======================

With the optimal IS density of each target used as its own control and the
exact expectation as coefficient, the control-variate estimate is exact for
any sampling density. This script checks that on the Gaussian moments.
"""
import numpy as np

from aiscv.applications import moments_problem
from aiscv.densities import normal
from aiscv.estimators import cv_estimate, is_estimate

prob = moments_problem(6)
f = prob.densities[0]
g = normal(0.5, 2.0)  # deliberately poor sampling density
x = g.sample(1000, np.random.default_rng(0))
phi = prob.evaluate(x)

print(f"{'j':>2} {'I_j':>10} {'IS':>14} {'CV with g*':>14}")
for j, ref in enumerate(prob.references):
    control = phi[:, j] * f.pdf(x) / ref
    plain = is_estimate(phi[:, j], f.pdf(x), g.pdf(x))
    exact = cv_estimate(phi[:, j], f.pdf(x), control, g.pdf(x), ref)
    print(f"{j + 1:>2} {ref:>10.0f} {plain.value:>14.6g} {exact.value:>14.10g}")
