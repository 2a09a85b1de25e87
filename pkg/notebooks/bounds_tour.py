"""Certified bounds on a small wavelet-denoising instance.

Builds one 8x8 instance, checks the JFB bound for several block depths,
then prints the ReTune report (error, asserted bound, measured remainder)
against the number of restarts.
"""

# %%
import math

from retune.bounds_lab import check_lemma1, retune_gap_rate, theorem2_report, wavelet_instance

# %% JFB error and bound against the block depth K
for K in (1, 2, 4, 8):
    inst = wavelet_instance(seed=3, K=K)
    err, bound = check_lemma1(inst.spec, inst.theta, inst.loss)
    print(f"K={K}: delta_K={inst.omega ** K:.3e}  err={err:.3e}  bound={bound:.3e}")

# %% ReTune error against the restart count T at K = 2
inst = wavelet_instance(seed=3, K=2)
rows = theorem2_report(inst.spec, inst.theta, inst.loss, inst.x0, range(1, 11))
print(f"{'T':>3} {'err':>10} {'bound':>10} {'remainder':>10} local holds")
for r in rows:
    print(f"{r.T:>3} {r.err_retune:10.4e} {r.bound:10.4e} {r.term4:10.2e} {r.local!s:>5} {r.holds}")
slope, r2 = retune_gap_rate(rows)
print(f"gap rate {slope:.4f} vs log delta_K {math.log(rows[0].delta_K):.4f} (r2 {r2:.4f})")
