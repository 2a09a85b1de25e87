"""Hypergradient estimators on the one-dimensional model.

``phi(x) = (1 - tau) x + tau theta y`` with loss ``(x - xbar)^2 / 2`` has a
closed form for every estimator, which makes it a convenient sanity check.
Run with ``python notebooks/scalar_oracle.py``.
"""

# %%
import numpy as np

from retune.bounds_lab import theorem2_report
from retune.hypergrad import StateLoss, compare
from retune.scheme import SchemeSpec, scalar_model

spec = SchemeSpec(scalar_model(y=1.0, tau=0.5), K=2, T=2)
theta, loss, x0 = np.array([2.0]), StateLoss(np.zeros(1)), np.zeros(1)

# %% every estimator side by side
rep = compare(spec, theta, loss, x0, P=1)
for name, g, glog in rep.rows():
    print(f"{name:<10} theta-space {g[0]: .6f}   log-space {glog[0]: .6f}")
print(f"JFB error {rep.err_jfb:.6f} <= bound {rep.bound_lemma1:.6f}")

# %% the ReTune/JFB gap shrinks like delta_K^T
print(f"{'T':>3} {'gap':>12} {'err':>10} {'bound':>10}")
for r in theorem2_report(spec, theta, loss, x0, range(1, 9)):
    print(f"{r.T:>3} {r.gap_jfb_retune:12.4e} {r.err_retune:10.6f} {r.bound:10.6f}")
