"""Annealed walk simulation, regeneration detection and cycle harvesting.

Each walk owns a Philox stream keyed by ``(seed, run, attempt)`` and a private
site cache: the first visit to a site draws its kernel from the law, later
visits reuse it.  Uniforms are drawn in fixed blocks of ``CHUNK`` so a walk of
length ``n`` is a prefix of the same walk of length ``m > n``.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numba as nb
import numpy as np
from numba import types
from numba.typed import Dict

from .environment import (
    EnvironmentLaw,
    classify_nestling,
    make_law,
    parse_step,
    step_vectors,
    steps_to_string,
    string_to_steps,
)
from .errors import RegenerationStarvation, RWREError

logger = logging.getLogger(__name__)

CHUNK = 1 << 16
LEVEL_EPS = 1e-9
FORMAT_VERSION = 1

# kernel status codes
_OK, _TARGET, _STARVED, _OUT_OF_BOX, _STACK_FULL = 0, 1, 2, 3, 4


def walk_generator(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the stream identified by ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _encoding(d: int) -> tuple[int, int]:
    bits = 62 // d
    return bits, 1 << (bits - 1)


@nb.njit(cache=True, inline="always")
def _draw(pos, env, atom_cum, kern_cum, bits, off, us, ut):
    key = 0
    for k in range(pos.size):
        c = pos[k] + off
        if c <= 0 or c >= 2 * off:
            return -1, -1
        key |= c << (bits * k)
    if key in env:
        a = env[key]
    else:
        a = 0
        while atom_cum[a] <= us:
            a += 1
        env[key] = a
    s = 0
    while kern_cum[a, s] <= ut:
        s += 1
    if s % 2 == 0:
        pos[s // 2] += 1
    else:
        pos[s // 2] -= 1
    return a, s


@nb.njit(cache=True, nogil=True)
def _simulate(pos, env, atom_cum, kern_cum, bits, off, u_site, u_step, out_steps, out_atoms):
    for t in range(u_step.size):
        a, s = _draw(pos, env, atom_cum, kern_cum, bits, off, u_site[t], u_step[t])
        if a < 0:
            return t
        out_steps[t] = s
        out_atoms[t] = a
    return u_step.size


@nb.njit(cache=True, nogil=True)
def _simulate_regen(pos, env, atom_cum, kern_cum, bits, off, u_site, u_step, out_steps,
                    t0, direction, stack_t, stack_l, ptrs, fstate, committed,
                    lookahead, eps, cycle_cap, target):
    """Advance the walk while tracking regeneration candidates online.

    Candidates (strict new maxima of the level that have not been undershot)
    live in a ring buffer ``stack_*[base:top]`` with increasing levels.  A dip
    pops candidates from the top; a candidate is committed once the running
    maximum exceeds its level by ``lookahead``.  ``ptrs`` holds
    ``[base, top, n_committed, last_commit_time, late_invalidations]`` and
    ``fstate`` holds ``[running_max, last_committed_level]``.
    """
    cap = stack_t.size
    d = pos.size
    for t in range(u_step.size):
        a, s = _draw(pos, env, atom_cum, kern_cum, bits, off, u_site[t], u_step[t])
        if a < 0:
            return t, _OUT_OF_BOX
        out_steps[t] = s
        time = t0 + t + 1
        level = 0.0
        for k in range(d):
            level += pos[k] * direction[k]
        if ptrs[2] > 0 and level < fstate[1] - eps:
            ptrs[4] += 1
            fstate[1] = -np.inf
        while ptrs[1] > ptrs[0] and stack_l[(ptrs[1] - 1) % cap] > level + eps:
            ptrs[1] -= 1
        if level > fstate[0] + eps:
            fstate[0] = level
            if ptrs[1] - ptrs[0] >= cap:
                return t + 1, _STACK_FULL
            stack_t[ptrs[1] % cap] = time
            stack_l[ptrs[1] % cap] = level
            ptrs[1] += 1
        while ptrs[1] > ptrs[0] and stack_l[ptrs[0] % cap] <= fstate[0] - lookahead + eps:
            committed[ptrs[2]] = stack_t[ptrs[0] % cap]
            fstate[1] = stack_l[ptrs[0] % cap]
            ptrs[3] = stack_t[ptrs[0] % cap]
            ptrs[0] += 1
            ptrs[2] += 1
            if ptrs[2] >= target:
                return t + 1, _TARGET
        if time - ptrs[3] > cycle_cap:
            return t + 1, _STARVED
    return u_step.size, _OK


def _law_tables(law: EnvironmentLaw):
    atom_cum = np.cumsum(law.weights)
    atom_cum[-1] = 1.0 + 1e-12  # u < 1 always lands on a valid index
    kern_cum = np.cumsum(law.kernels, axis=1)
    kern_cum[:, -1] = 1.0 + 1e-12
    return atom_cum, np.ascontiguousarray(kern_cum)


def _new_env():
    return Dict.empty(key_type=types.int64, value_type=types.int64)


@dataclass(frozen=True)
class Path:
    """A finite walk ``X_0 = 0, ..., X_n`` stored through its step indices."""

    steps: np.ndarray
    d: int
    atoms: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.steps.size

    @property
    def positions(self) -> np.ndarray:
        pos = np.zeros((self.steps.size + 1, self.d), dtype=np.int64)
        np.cumsum(step_vectors(self.d)[self.steps], axis=0, out=pos[1:])
        return pos

    def levels(self, direction) -> np.ndarray:
        return self.positions @ np.asarray(direction, dtype=float)


def make_path(steps, d: int) -> Path:
    """Build a path from step labels, unit vectors or (d=1) signed unit steps."""
    return Path(np.array([parse_step(s, d) for s in steps], dtype=np.int8), d)


def sample_walk(law: EnvironmentLaw, seed: int, max_steps: int, *, walk_index: int = 0) -> Path:
    """Simulate ``max_steps`` steps of the annealed walk from the origin.

    The returned path carries, for every step, the index of the atom that was
    in force at the departure site, so site-cache reuse can be audited.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    gen = walk_generator(seed, walk_index)
    atom_cum, kern_cum = _law_tables(law)
    bits, off = _encoding(law.d)
    pos = np.zeros(law.d, dtype=np.int64)
    env = _new_env()
    steps = np.empty(max_steps, dtype=np.int8)
    atoms = np.empty(max_steps, dtype=np.int32)
    done = 0
    while done < max_steps:
        u = gen.random((2, CHUNK))
        m = min(CHUNK, max_steps - done)
        n = _simulate(pos, env, atom_cum, kern_cum, bits, off, u[0, :m], u[1, :m],
                      steps[done:done + m], atoms[done:done + m])
        if n < m:
            raise RWREError(f"walk left the encodable box (|x| >= {off}) in d={law.d}")
        done += m
    return Path(steps, law.d, atoms)


@dataclass(frozen=True)
class Regenerations:
    confirmed: np.ndarray
    provisional: int | None


def find_regenerations(path: Path, direction) -> Regenerations:
    """Offline scan for regeneration times within the observed window.

    A time ``j >= 1`` qualifies when its level strictly exceeds every earlier
    level and no later observed level is below it.  The last qualifying time
    has an unobserved future and is returned as provisional.
    """
    lv = path.levels(direction)
    if lv.size < 2:
        return Regenerations(np.empty(0, dtype=np.int64), None)
    past_max = np.maximum.accumulate(lv)[:-1]
    future_min = np.empty(lv.size - 1)
    future_min[:-1] = np.minimum.accumulate(lv[:0:-1])[::-1][1:]
    future_min[-1] = np.inf
    cur = lv[1:]
    ok = (cur > past_max + LEVEL_EPS) & (cur <= future_min + LEVEL_EPS)
    times = np.flatnonzero(ok) + 1
    if times.size == 0:
        return Regenerations(times, None)
    return Regenerations(times[:-1], int(times[-1]))


@dataclass(frozen=True)
class RegenerationCycle:
    duration: int
    displacement: np.ndarray
    steps: np.ndarray
    is_first: bool = False

    def check(self, direction) -> bool:
        """Re-verify the cycle invariants from its steps."""
        d = self.displacement.size
        if self.steps.size != self.duration:
            return False
        pos = np.cumsum(step_vectors(d)[self.steps], axis=0)
        if not np.array_equal(pos[-1], self.displacement):
            return False
        lv = pos @ np.asarray(direction, dtype=float)
        end = lv[-1]
        return bool(end > LEVEL_EPS and np.all(lv >= -LEVEL_EPS) and np.all(lv[:-1] < end - LEVEL_EPS))


@dataclass(frozen=True)
class CycleEnsemble:
    """Inter-regeneration blocks, grouped into temporally ordered runs."""

    law: EnvironmentLaw
    direction: np.ndarray
    durations: np.ndarray
    displacements: np.ndarray
    steps: np.ndarray
    offsets: np.ndarray
    run_ids: np.ndarray
    seed: int | None = None
    cycle_cap: int | None = None
    lookahead: float | None = None
    n_starved: int = 0
    late_invalidations: int = 0
    steps_simulated: int = 0

    @property
    def d(self) -> int:
        return self.law.d

    @property
    def n_cycles(self) -> int:
        return self.durations.size

    @property
    def law_fingerprint(self) -> str:
        return self.law.fingerprint()

    def __len__(self) -> int:
        return self.n_cycles

    @cached_property
    def distinct_pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Distinct ``(duration, displacement)`` pairs and their multiplicities."""
        keys = np.column_stack([self.durations, self.displacements])
        uniq, counts = np.unique(keys, axis=0, return_counts=True)
        return uniq[:, 0].astype(float), uniq[:, 1:].astype(float), counts.astype(float)

    def cycle(self, i: int) -> RegenerationCycle:
        return RegenerationCycle(
            int(self.durations[i]),
            self.displacements[i],
            self.steps[self.offsets[i]:self.offsets[i + 1]],
        )

    @property
    def cycles(self) -> list[RegenerationCycle]:
        return [self.cycle(i) for i in range(self.n_cycles)]

    def runs(self) -> list[np.ndarray]:
        """Cycle indices of each consecutive run, in temporal order."""
        if self.n_cycles == 0:
            return []
        cuts = np.flatnonzero(np.diff(self.run_ids)) + 1
        return np.split(np.arange(self.n_cycles), cuts)

    def run_steps(self, cycle_idx: np.ndarray) -> np.ndarray:
        return self.steps[self.offsets[cycle_idx[0]]:self.offsets[cycle_idx[-1] + 1]]

    def summary(self) -> dict:
        return {
            "n_cycles": self.n_cycles,
            "runs": len(self.runs()),
            "seed": self.seed,
            "cycle_cap": self.cycle_cap,
            "lookahead": self.lookahead,
            "n_starved": self.n_starved,
            "late_invalidations": self.late_invalidations,
            "steps_simulated": self.steps_simulated,
            "mean_duration": float(self.durations.mean()) if self.n_cycles else float("nan"),
            "max_duration": int(self.durations.max()) if self.n_cycles else 0,
        }


def _run_walk(law, direction, quota, seed, run, attempt, cycle_cap, lookahead):
    gen = walk_generator(seed, run, attempt)
    atom_cum, kern_cum = _law_tables(law)
    bits, off = _encoding(law.d)
    pos = np.zeros(law.d, dtype=np.int64)
    env = _new_env()
    cap = 1024
    stack_t = np.zeros(cap, dtype=np.int64)
    stack_l = np.zeros(cap)
    ptrs = np.zeros(5, dtype=np.int64)
    fstate = np.array([0.0, -np.inf])
    committed = np.zeros(quota + 1, dtype=np.int64)
    chunks = []
    t0 = 0
    while True:
        u = gen.random((2, CHUNK))
        buf = np.empty(CHUNK, dtype=np.int8)
        start = 0
        while True:
            n, status = _simulate_regen(
                pos, env, atom_cum, kern_cum, bits, off, u[0, start:], u[1, start:],
                buf[start:], t0 + start, direction, stack_t, stack_l, ptrs, fstate,
                committed, float(lookahead), LEVEL_EPS, int(cycle_cap), quota + 1)
            start += n
            if status != _STACK_FULL:
                break
            live = np.arange(ptrs[0], ptrs[1]) % cap
            new_t = np.zeros(2 * cap, dtype=np.int64)
            new_l = np.zeros(2 * cap)
            new_t[:live.size] = stack_t[live]
            new_l[:live.size] = stack_l[live]
            stack_t, stack_l, cap = new_t, new_l, 2 * cap
            ptrs[1] -= ptrs[0]
            ptrs[0] = 0
        chunks.append(buf[:start])
        t0 += start
        if status == _OUT_OF_BOX:
            raise RWREError(f"walk left the encodable box (|x| >= {off}) in d={law.d}")
        if status == _STARVED:
            return None, t0, int(ptrs[2])
        if status == _TARGET:
            steps = np.concatenate(chunks)
            return (committed, steps, int(ptrs[4])), t0, int(ptrs[2])


def _harvest_run(law, direction, quota, seed, run, cycle_cap, lookahead, max_starvations):
    vecs = step_vectors(law.d)
    starved = 0
    simulated = 0
    attempt = 0
    while True:
        out, n_steps, n_comm = _run_walk(law, direction, quota, seed, run, attempt,
                                         cycle_cap, lookahead)
        simulated += n_steps
        if out is not None:
            break
        starved += 1
        logger.info("run %d attempt %d starved after %d steps (%d regenerations)",
                    run, attempt, n_steps, n_comm)
        if starved > max_starvations:
            raise RegenerationStarvation(
                f"run {run}: {starved} walks exceeded cycle_cap={cycle_cap} steps "
                f"without a new regeneration",
                starved=starved, cycles_collected=0, steps_simulated=simulated)
        attempt += 1
    times, steps, late = out
    cyc_steps = steps[times[0]:times[-1]]
    durations = np.diff(times)
    cum = np.zeros((cyc_steps.size + 1, law.d), dtype=np.int64)
    np.cumsum(vecs[cyc_steps], axis=0, out=cum[1:])
    rel = times - times[0]
    displacements = np.diff(cum[rel], axis=0)
    return durations, displacements, cyc_steps, starved, late, simulated


def resolve_direction(law: EnvironmentLaw, direction=None) -> np.ndarray:
    """Return a unit direction; ``None``/``"auto"`` uses the non-nestling witness."""
    label = classify_nestling(law)
    if direction is None or (isinstance(direction, str) and direction == "auto"):
        if label.nestling:
            raise ValueError("nestling law: the direction must be given explicitly")
        return label.direction
    u = np.asarray(direction, dtype=float).reshape(-1)
    if u.size != law.d or not np.isfinite(u).all() or np.linalg.norm(u) == 0:
        raise ValueError(f"bad direction {direction!r}")
    return u / np.linalg.norm(u)


def harvest_cycles(
    law: EnvironmentLaw,
    direction=None,
    n_cycles: int = 10_000,
    seed: int = 0,
    cycle_cap: int = 10**6,
    runs: int = 1,
    *,
    workers: int = 1,
    lookahead: float = 50.0,
    max_starvations: int = 10,
) -> CycleEnsemble:
    """Collect ``n_cycles`` regeneration cycles distributed as the conditioned cycle law.

    Each run simulates one walk, drops everything up to its first committed
    regeneration and the unfinished tail, and keeps the blocks in between.  A
    regeneration is committed once the walk has climbed ``lookahead`` levels
    past it.  A walk that goes ``cycle_cap`` steps without committing is
    discarded and counted; more than ``max_starvations`` discards in one run
    raise :class:`RegenerationStarvation`.

    The result depends only on the arguments other than ``workers``.
    """
    if n_cycles < 1 or runs < 1:
        raise ValueError("n_cycles and runs must be positive")
    u = resolve_direction(law, direction)
    quotas = [n_cycles // runs + (r < n_cycles % runs) for r in range(runs)]
    jobs = [(law, u, q, seed, r, cycle_cap, lookahead, max_starvations)
            for r, q in enumerate(quotas) if q > 0]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda a: _harvest_run(*a), jobs))
    else:
        results = [_harvest_run(*a) for a in jobs]
    return _assemble(law, u, results, seed=seed, cycle_cap=cycle_cap, lookahead=lookahead)


def _assemble(law, u, results, *, seed, cycle_cap, lookahead, run_offset=0):
    durations = np.concatenate([r[0] for r in results])
    displacements = np.concatenate([r[1] for r in results])
    steps = np.concatenate([r[2] for r in results])
    offsets = np.zeros(durations.size + 1, dtype=np.int64)
    np.cumsum(durations, out=offsets[1:])
    run_ids = np.concatenate([np.full(r[0].size, i + run_offset) for i, r in enumerate(results)])
    return CycleEnsemble(
        law=law, direction=u, durations=durations.astype(np.int64),
        displacements=displacements.astype(np.int64), steps=steps.astype(np.int8),
        offsets=offsets, run_ids=run_ids.astype(np.int64), seed=seed, cycle_cap=cycle_cap,
        lookahead=lookahead, n_starved=sum(r[3] for r in results),
        late_invalidations=sum(r[4] for r in results),
        steps_simulated=sum(r[5] for r in results),
    )


def merge_ensembles(*ensembles: CycleEnsemble) -> CycleEnsemble:
    """Pool ensembles of the same law and direction; runs keep their identity."""
    first = ensembles[0]
    for e in ensembles[1:]:
        if e.law_fingerprint != first.law_fingerprint or not np.allclose(e.direction, first.direction):
            raise ValueError("cannot merge ensembles of different laws or directions")
    results = []
    for e in ensembles:
        for idx in e.runs():
            results.append((e.durations[idx], e.displacements[idx], e.run_steps(idx), 0, 0, 0))
    merged = _assemble(first.law, first.direction, results, seed=None,
                       cycle_cap=first.cycle_cap, lookahead=first.lookahead)
    return CycleEnsemble(**{**merged.__dict__,
                            "n_starved": sum(e.n_starved for e in ensembles),
                            "late_invalidations": sum(e.late_invalidations for e in ensembles),
                            "steps_simulated": sum(e.steps_simulated for e in ensembles)})


def save_ensemble(ens: CycleEnsemble, path) -> None:
    """Binary cycle log (``.npz``)."""
    meta = {"format_version": FORMAT_VERSION, "law": ens.law.to_dict(), **ens.summary()}
    np.savez_compressed(
        path, meta=np.array(json.dumps(meta)), direction=ens.direction,
        durations=ens.durations, displacements=ens.displacements, steps=ens.steps,
        run_ids=ens.run_ids,
    )


def load_ensemble(path) -> CycleEnsemble:
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported cycle log version {meta.get('format_version')}")
        law_cfg = meta["law"]
        law = make_law(law_cfg["dimension"], law_cfg["atoms"], law_cfg["weights"])
        durations = z["durations"]
        offsets = np.zeros(durations.size + 1, dtype=np.int64)
        np.cumsum(durations, out=offsets[1:])
        return CycleEnsemble(
            law=law, direction=z["direction"], durations=durations,
            displacements=z["displacements"], steps=z["steps"], offsets=offsets,
            run_ids=z["run_ids"], seed=meta.get("seed"), cycle_cap=meta.get("cycle_cap"),
            lookahead=meta.get("lookahead"), n_starved=meta.get("n_starved", 0),
            late_invalidations=meta.get("late_invalidations", 0),
            steps_simulated=meta.get("steps_simulated", 0),
        )


def write_cycle_csv(ens: CycleEnsemble, path) -> None:
    """Text cycle log: one row per cycle with its step string."""
    d = ens.d
    with open(path, "w", newline="") as fh:
        fh.write(f"# rwre-cycle-log v{FORMAT_VERSION}\n")
        fh.write(f"# law {json.dumps(ens.law.to_dict(), sort_keys=True)}\n")
        fh.write(f"# direction {json.dumps([float(x) for x in ens.direction])}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "duration", *[f"disp_{k + 1}" for k in range(d)], "steps"])
        for i in range(ens.n_cycles):
            w.writerow([int(ens.run_ids[i]), int(ens.durations[i]),
                        *[int(x) for x in ens.displacements[i]],
                        steps_to_string(ens.steps[ens.offsets[i]:ens.offsets[i + 1]], d)])


def read_cycle_csv(path) -> CycleEnsemble:
    with open(path) as fh:
        header = [next(fh) for _ in range(3)]
        if header[0].strip() != f"# rwre-cycle-log v{FORMAT_VERSION}":
            raise ValueError(f"unsupported cycle log header {header[0]!r}")
        law_cfg = json.loads(header[1].split(" ", 2)[2])
        direction = np.array(json.loads(header[2].split(" ", 2)[2]))
        law = make_law(law_cfg["dimension"], law_cfg["atoms"], law_cfg["weights"])
        rows = list(csv.DictReader(fh))
    d = law.d
    results = {}
    for row in rows:
        steps = string_to_steps(row["steps"], d)
        disp = [int(row[f"disp_{k + 1}"]) for k in range(d)]
        results.setdefault(int(row["run"]), []).append((int(row["duration"]), disp, steps))
    packed = []
    for run in sorted(results):
        items = results[run]
        packed.append((np.array([i[0] for i in items], dtype=np.int64),
                       np.array([i[1] for i in items], dtype=np.int64).reshape(-1, d),
                       np.concatenate([i[2] for i in items]), 0, 0, 0))
    return _assemble(law, direction, packed, seed=None, cycle_cap=None, lookahead=None)
