"""Estimated log-MGF of a walk in a fixed environment against its closed form.

With one atom the environment is deterministic and the walk is a biased coin,
so the cycle estimator can be checked directly.  Run: python3 demos/coin_lmgf.py
"""
import math

from rwre_ldp import classify_theta, deterministic_law, estimate_lmgf, harvest_cycles, kernel_d1

law = deterministic_law(kernel_d1(0.6))
ens = harvest_cycles(law, None, 50_000, seed=1, runs=4)
print(f"{ens.n_cycles} cycles, mean duration {ens.durations.mean():.3f}")

print(f"{'tilt':>6} {'estimate':>10} {'se':>9} {'exact':>10}  label")
for t in (-0.5, -0.1, 0.25, 0.5, 1.0):
    label = classify_theta(ens, t)
    exact = math.log(0.6 * math.exp(t) + 0.4 * math.exp(-t))
    if not label.interior:
        # too few effective cycles: the library refuses instead of guessing
        print(f"{t:6.2f} {'refused':>10} {'':>9} {exact:10.5f}  {label}")
        continue
    est = estimate_lmgf(ens, t)
    print(f"{t:6.2f} {est.lam:10.5f} {est.lam_se:9.2e} {exact:10.5f}  {label}")
