"""Large-deviation rate curve of the biased coin walk, built by Legendre inversion.

Prints estimated rates beside the exact one-step entropy formula and the gap
to a grid-based lower bound.  Run: python3 demos/rate_curve.py
"""
from rwre_ldp import cramer_closed_form, deterministic_law, harvest_cycles, kernel_d1, lln_velocity, rate_curve

law = deterministic_law(kernel_d1(0.6))
ens = harvest_cycles(law, None, 100_000, seed=2, runs=4)
exact = cramer_closed_form(kernel_d1(0.6), 0.0).rate_fn
v = lln_velocity(ens)
print(f"velocity {v.xi[0]:.4f} +/- {v.std_error[0]:.4f} (exact 0.2)")

grid = [0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 0.9, 1.2]
for row in rate_curve(law, None, grid, ensemble=ens, workers=4):
    x = row.xi[0]
    if row.point is None:
        print(f"{x:4.2f}  {row.status}")
    else:
        p = row.point
        print(f"{x:4.2f}  rate {p.rate:.5f} +/- {p.rate_se:.1e}  exact {exact(x):.5f}  gap {p.fenchel_gap:.1e}")
