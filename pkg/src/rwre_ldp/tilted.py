"""Cylinder integrals of the exponentially tilted cycle measure.

A cylinder function of depth ``K`` is stored as a dense table over the
``(2d)^K`` step words.  Word codes are base-``2d`` integers with the first
step most significant.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path as FsPath
from typing import Callable, Mapping

import numpy as np

from .environment import (
    EnvironmentLaw,
    TransitionKernel,
    counts_array,
    make_kernel,
    step_label,
    step_vectors,
    string_to_steps,
)
from .errors import InsufficientRunLength, PathTooShort
from .lmgf import _check_finite, _log_weights, as_theta
from .walk_sim import CycleEnsemble, Path


@dataclass(frozen=True)
class CylinderFunction:
    d: int
    depth: int
    table: np.ndarray

    @property
    def bound(self) -> float:
        return float(np.abs(self.table).max())

    def __call__(self, steps) -> float:
        """Evaluate on a step-index sequence; only the first ``depth`` entries are read."""
        s = np.asarray(steps, dtype=np.int64)[: self.depth]
        if s.size < self.depth:
            raise PathTooShort(f"need {self.depth} steps, got {s.size}")
        return float(self.table[_word_code(s, 2 * self.d)])

    def __add__(self, other: "CylinderFunction") -> "CylinderFunction":
        a, b = _common_depth(self, other)
        return CylinderFunction(self.d, a.depth, a.table + b.table)

    def __mul__(self, c: float) -> "CylinderFunction":
        return CylinderFunction(self.d, self.depth, float(c) * self.table)

    __rmul__ = __mul__

    def extended(self, depth: int) -> "CylinderFunction":
        """Same function viewed as depending on ``depth >= self.depth`` steps."""
        if depth < self.depth:
            raise ValueError("cannot shrink a cylinder function")
        extra = (2 * self.d) ** (depth - self.depth)
        return CylinderFunction(self.d, depth, np.repeat(self.table, extra))

    @classmethod
    def constant(cls, d: int, value: float = 1.0, depth: int = 1) -> "CylinderFunction":
        return cls(d, depth, np.full((2 * d) ** depth, float(value)))

    @classmethod
    def from_callable(cls, fn: Callable[[np.ndarray], float], d: int, depth: int):
        """Tabulate ``fn`` over all words; ``fn`` receives a ``(depth, d)`` array of steps."""
        vecs = step_vectors(d)
        words = itertools.product(range(2 * d), repeat=depth)
        table = np.array([float(fn(vecs[list(w)])) for w in words])
        return cls(d, depth, table)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, float], d: int, *, default: float | None = None):
        """Build from ``{"+x-x": 1.0, ...}``; words missing from the mapping take ``default``."""
        depths = {len(string_to_steps(k, d)) for k in mapping}
        if len(depths) != 1:
            raise ValueError(f"step words of mixed lengths: {sorted(depths)}")
        depth = depths.pop()
        if depth < 1:
            raise ValueError("empty step word")
        size = (2 * d) ** depth
        table = np.full(size, np.nan if default is None else float(default))
        for key, val in mapping.items():
            table[_word_code(string_to_steps(key, d), 2 * d)] = float(val)
        if np.isnan(table).any():
            missing = int(np.isnan(table).sum())
            raise ValueError(f"{missing} of {size} step words have no value and no default")
        return cls(d, depth, table)

    @classmethod
    def load(cls, path, d: int, *, default: float | None = None) -> "CylinderFunction":
        """Read a two-column CSV table ``steps,value``."""
        with open(path, newline="") as fh:
            rows = [r for r in csv.DictReader(fh)]
        return cls.from_mapping({r["steps"]: float(r["value"]) for r in rows}, d, default=default)

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["steps", "value"])
            for code, word in enumerate(itertools.product(range(2 * self.d), repeat=self.depth)):
                w.writerow(["".join(step_label(s, self.d) for s in word), repr(float(self.table[code]))])


def _common_depth(f: CylinderFunction, g: CylinderFunction):
    if f.d != g.d:
        raise ValueError("dimension mismatch")
    k = max(f.depth, g.depth)
    return f.extended(k), g.extended(k)


def _word_code(steps: np.ndarray, base: int) -> int:
    code = 0
    for s in steps:
        code = code * base + int(s)
    return code


def indicator_first_step(d: int, step) -> CylinderFunction:
    """Depth-1 indicator of the first step being ``step``."""
    from .environment import parse_step

    target = parse_step(step, d)
    table = np.zeros(2 * d)
    table[target] = 1.0
    return CylinderFunction(d, 1, table)


def coordinate_function(d: int, axis: int) -> CylinderFunction:
    """Depth-1 function returning coordinate ``axis`` of the first step."""
    return CylinderFunction(d, 1, step_vectors(d)[:, axis].astype(float))


def _window_codes(steps: np.ndarray, depth: int, base: int) -> np.ndarray:
    """Codes of every length-``depth`` window; entry ``j`` starts at ``steps[j]``."""
    n = steps.size - depth + 1
    if n <= 0:
        return np.zeros(0, dtype=np.int64)
    s = steps.astype(np.int64)
    code = np.zeros(n, dtype=np.int64)
    for i in range(depth):
        code = code * base + s[i:i + n]
    return code


def annealed_kernel_q(law: EnvironmentLaw, visit_counts) -> TransitionKernel:
    """Next-step law at a site already left ``visit_counts[z]`` times by step ``z``.

    Bayes' rule over the atoms: each atom is reweighted by its likelihood of
    the recorded departures.
    """
    c = counts_array(visit_counts, law.d)
    like = law.weights * np.prod(law.kernels ** c, axis=1)
    q = like @ law.kernels / like.sum()
    return make_kernel(q / q.sum(), law.d)


@dataclass(frozen=True)
class TiltedEstimate:
    value: float
    std_error: float
    K_used: int
    n_blocks: int
    overlapping: bool = False


def _block_terms(ens, theta, lam, f, K, overlapping):
    """Per-block numerator and denominator terms, in temporal order."""
    base = 2 * ens.d
    lw = _log_weights(ens, theta, lam)
    _check_finite(lw)
    codes = _window_codes(ens.steps, f.depth, base)
    # prefix sums of f over window start positions
    fv = np.concatenate([[0.0], np.cumsum(f.table[codes])])
    tau = ens.durations.astype(float)
    nums, dens = [], []
    for idx in ens.runs():
        m = idx.size
        if m < K:
            continue
        starts = np.arange(0, m - K + 1, 1 if overlapping else K)
        # log weight of a K-block is the sum of its cycles' log weights
        clw = np.concatenate([[0.0], np.cumsum(lw[idx])])
        w_blk = np.exp(clw[starts + K] - clw[starts])
        first = idx[starts]
        o = ens.offsets[first]
        fsum = fv[o + ens.durations[first]] - fv[o]
        nums.append(fsum * w_blk)
        dens.append(tau[first] * w_blk)
    if not nums:
        raise InsufficientRunLength(f"no run holds {K} consecutive cycles")
    return np.concatenate(nums), np.concatenate(dens)


def _ratio_se(a: np.ndarray, b: np.ndarray, value: float) -> float:
    n = a.size
    if n < 2:
        return float("inf")
    infl = (a - value * b) / b.mean()
    return float(infl.std(ddof=1) / np.sqrt(n))


def tilted_cylinder(
    ens: CycleEnsemble,
    theta,
    lam: float,
    f: CylinderFunction,
    K: int | None = None,
    *,
    overlapping: bool = False,
    n_batches: int = 50,
) -> TiltedEstimate:
    """Integral of ``f`` under the tilted cycle measure, from blocks of ``K`` cycles.

    Each block contributes ``sum_{j < tau_1} f(window_j) * W`` to the
    numerator and ``tau_1 * W`` to the denominator, where ``W`` is the tilt
    weight of the whole block.  Using the same block weight in both places
    makes ``f = 1`` integrate to exactly one.

    With ``overlapping=True`` a block starts at every cycle; consecutive
    blocks are then dependent and the standard error comes from
    ``n_batches`` contiguous batch sums.
    """
    if f.d != ens.d:
        raise ValueError("cylinder dimension does not match the ensemble")
    K = f.depth if K is None else int(K)
    if K < f.depth:
        raise ValueError(f"K={K} is below the cylinder depth {f.depth}")
    th = as_theta(theta, ens.d)
    a, b = _block_terms(ens, th, lam, f, K, overlapping)
    value = float(a.sum() / b.sum())
    if overlapping:
        nb = max(2, min(n_batches, a.size))
        cuts = np.linspace(0, a.size, nb + 1).astype(int)
        se = _ratio_se(np.add.reduceat(a, cuts[:-1]), np.add.reduceat(b, cuts[:-1]), value)
    else:
        se = _ratio_se(a, b, value)
    return TiltedEstimate(value, se, K, a.size, overlapping)


def mean_drift_tilted(ens: CycleEnsemble, theta, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean step under the tilted measure, coordinate by coordinate; returns ``(value, se)``."""
    ests = [tilted_cylinder(ens, theta, lam, coordinate_function(ens.d, k)) for k in range(ens.d)]
    return np.array([e.value for e in ests]), np.array([e.std_error for e in ests])


def k_consistency_check(ens: CycleEnsemble, theta, lam: float, f: CylinderFunction,
                        K_max: int, *, overlapping: bool = False) -> list[TiltedEstimate]:
    if K_max < f.depth:
        raise ValueError("K_max must be at least the cylinder depth")
    return [tilted_cylinder(ens, theta, lam, f, K, overlapping=overlapping)
            for K in range(f.depth, K_max + 1)]


def _path_steps(path) -> np.ndarray:
    return path.steps if isinstance(path, Path) else np.asarray(path, dtype=np.int64)


def _window_values(path, f: CylinderFunction) -> np.ndarray:
    steps = _path_steps(path)
    n = steps.size
    if n <= f.depth:
        raise PathTooShort(f"path of length {n} needs more than {f.depth} steps")
    # windows j = 0 .. n-K-1; the last full window is dropped by convention
    return f.table[_window_codes(steps[: n - 1], f.depth, 2 * f.d)]


def empirical_process(path, f: CylinderFunction) -> float:
    """Sliding-window average of ``f`` along one path, over ``n - K`` windows."""
    return float(_window_values(path, f).mean())


def empirical_process_se(path, f: CylinderFunction, n_batches: int = 50) -> tuple[float, float]:
    """Window average with a batch-means standard error."""
    v = _window_values(path, f)
    nb = max(2, min(n_batches, v.size))
    means = np.array([c.mean() for c in np.array_split(v, nb)])
    return float(v.mean()), float(means.std(ddof=1) / np.sqrt(nb))


def write_estimates_csv(path, rows: list[tuple[str, TiltedEstimate]]) -> None:
    FsPath(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "value", "std_error", "K_used", "n_blocks", "overlapping"])
        for name, e in rows:
            w.writerow([name, repr(e.value), repr(e.std_error), e.K_used, e.n_blocks, int(e.overlapping)])
