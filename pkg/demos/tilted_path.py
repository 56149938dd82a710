"""What does a walk look like when forced to move fast?

The tilted cycle measure answers through cylinder functions.  At zero tilt it
must agree with plain time averages along one long path.
Run: python3 demos/tilted_path.py
"""
import math

from rwre_ldp import (
    CylinderFunction, deterministic_law, empirical_process_se, harvest_cycles,
    indicator_first_step, kernel_d1, lambda_hat, sample_walk, tilted_cylinder,
)

law = deterministic_law(kernel_d1(0.6))
ens = harvest_cycles(law, None, 100_000, seed=3, runs=4)
up = indicator_first_step(1, "+x")
twice = CylinderFunction.from_mapping({"+x+x": 1.0}, 1, default=0.0)

for t in (0.0, 0.5, 1.0):
    lam = lambda_hat(ens, t).lam
    a = tilted_cylinder(ens, t, lam, up)
    b = tilted_cylinder(ens, t, lam, twice)
    q = 0.6 * math.exp(t) / (0.6 * math.exp(t) + 0.4 * math.exp(-t))
    print(f"tilt {t}: P(up) {a.value:.4f} (exact {q:.4f}), P(up,up) {b.value:.4f} (exact {q * q:.4f})")

path = sample_walk(law, 99, 10**6)
v, se = empirical_process_se(path, twice)
print(f"long path frequency of up,up: {v:.4f} +/- {se:.4f}")
