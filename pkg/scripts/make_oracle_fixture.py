"""Regenerate tests/fixtures/oracle_values.csv from exact enumeration."""

from pathlib import Path

from rwre_ldp.environment import deterministic_law, kernel_d1, make_law
from rwre_ldp.oracle import write_oracle_fixture

two_atom = make_law(1, [kernel_d1(0.3), kernel_d1(0.7)], [0.5, 0.5])
classical = deterministic_law(kernel_d1(0.6))
planar = make_law(2, [[0.4, 0.2, 0.25, 0.15], [0.1, 0.3, 0.3, 0.3]], [0.5, 0.5])

rows = [(two_atom, 1.0, 2), (two_atom, 0.0, 12)]
rows += [(two_atom, 0.5, n) for n in (8, 10, 12, 14, 16)]
rows += [(classical, 0.5, n) for n in (8, 10, 12, 14, 16)]
rows += [(planar, [0.3, -0.2], n) for n in (4, 6, 8)]

out = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "oracle_values.csv"
write_oracle_fixture(out, rows)
print(f"wrote {len(rows)} rows to {out}")
