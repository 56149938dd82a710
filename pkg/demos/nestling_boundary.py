"""A nestling law: local drifts point both ways, yet the walk is transient to the right.

Tilts at or below zero leave the region where the cycle identity has a root.
Near the boundary the gradient creeps toward the exact velocity slowly,
because cycle durations have heavy tails.  Run: python3 demos/nestling_boundary.py
"""
from rwre_ldp import classify_nestling, harvest_cycles, kernel_d1, make_law, nestling_boundary_probe, solomon_velocity

law = make_law(1, [kernel_d1(0.85), kernel_d1(0.4)], [0.5, 0.5])
print("nestling:", classify_nestling(law).nestling)
print("exact velocity:", round(solomon_velocity(law), 5))

ens = harvest_cycles(law, [1.0], 100_000, seed=4, runs=4)
print("longest cycle:", int(ens.durations.max()), "steps")
for p in nestling_boundary_probe(law, [1.0], [0.2, 0.1, 0.05, 0.02, 0.0], ensemble=ens):
    grad = "n/a" if p.grad is None else f"{p.grad[0]:.4f}"
    print(f"tilt {p.theta[0]:5.2f}  {str(p.label):36s} gradient {grad}")
