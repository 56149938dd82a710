"""Finite-support i.i.d. environment laws for nearest-neighbour walks on Z^d.

Steps are stored as integer indices into the unit-step set ``U``: index
``2k`` is ``+e_k`` and index ``2k + 1`` is ``-e_k``.  Every per-step array in
the package (kernel probabilities, visit counts, simulated step sequences)
uses this ordering.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateDrift, EllipticityViolated, NotAProbability

PROB_TOL = 1e-12
_AXES = "xyz"
_LABEL_RE = re.compile(r"([+-])(x|y|z|e\d+)")


@lru_cache(maxsize=None)
def _step_vectors(d: int) -> np.ndarray:
    vecs = np.zeros((2 * d, d), dtype=np.int64)
    for k in range(d):
        vecs[2 * k, k] = 1
        vecs[2 * k + 1, k] = -1
    vecs.setflags(write=False)
    return vecs


def step_vectors(d: int) -> np.ndarray:
    """Return the ``(2d, d)`` integer array of unit steps in canonical order."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return _step_vectors(d)


def step_label(index: int, d: int) -> str:
    axis, neg = divmod(index, 2)
    if not 0 <= axis < d:
        raise ValueError(f"step index {index} out of range for d={d}")
    name = _AXES[axis] if d <= 3 else f"e{axis + 1}"
    return ("-" if neg else "+") + name


def parse_step(step, d: int) -> int:
    """Convert a step given as label, integer vector or (d=1) signed int to its index.

    Labels are ``+x``/``-x``/``+y``/... for ``d <= 3`` and ``+e1``/``-e4``/...
    in any dimension.
    """
    if isinstance(step, str):
        m = _LABEL_RE.fullmatch(step.strip())
        if m is None:
            raise ValueError(f"cannot parse step label {step!r}")
        sign, name = m.groups()
        axis = _AXES.index(name) if name in _AXES else int(name[1:]) - 1
        if not 0 <= axis < d:
            raise ValueError(f"step {step!r} has no axis in dimension {d}")
        return 2 * axis + (sign == "-")
    if isinstance(step, (int, np.integer)) and d == 1:
        if step not in (1, -1):
            raise ValueError(f"{step} is not a unit step")
        return 0 if step == 1 else 1
    vec = np.asarray(step, dtype=np.int64).reshape(-1)
    if vec.size != d or np.abs(vec).sum() != 1:
        raise ValueError(f"{step!r} is not a unit step of Z^{d}")
    axis = int(np.flatnonzero(vec)[0])
    return 2 * axis + (vec[axis] < 0)


def steps_to_string(steps: Sequence[int], d: int) -> str:
    return "".join(step_label(int(s), d) for s in steps)


def string_to_steps(text: str, d: int) -> np.ndarray:
    """Inverse of :func:`steps_to_string`; ``""`` maps to an empty array."""
    tokens = _LABEL_RE.findall(text.replace(" ", ""))
    if "".join(s + n for s, n in tokens) != text.replace(" ", ""):
        raise ValueError(f"cannot parse step string {text!r}")
    return np.array([parse_step(s + n, d) for s, n in tokens], dtype=np.int8)


@dataclass(frozen=True)
class TransitionKernel:
    """Jump law of one site over the ``2d`` unit steps."""

    probs: np.ndarray

    @property
    def d(self) -> int:
        return self.probs.size // 2

    def __getitem__(self, step) -> float:
        return float(self.probs[parse_step(step, self.d)])

    def as_dict(self) -> dict[str, float]:
        return {step_label(i, self.d): float(p) for i, p in enumerate(self.probs)}


def make_kernel(probs, d: int | None = None) -> TransitionKernel:
    """Validate and renormalise one kernel.

    ``probs`` may be an array in canonical step order, a mapping from step
    (label, vector or signed int) to probability, or an existing kernel.
    Steps missing from a mapping get probability zero.
    """
    if isinstance(probs, TransitionKernel):
        if d is not None and probs.d != d:
            raise NotAProbability(f"kernel has {probs.probs.size} entries; need {2 * d}")
        return probs
    if isinstance(probs, Mapping):
        if d is None:
            raise ValueError("dimension required for mapping kernels")
        arr = np.zeros(2 * d)
        for step, p in probs.items():
            arr[parse_step(step, d)] += float(p)
    else:
        arr = np.asarray(probs, dtype=float).reshape(-1).copy()
    if arr.size % 2 or arr.size == 0:
        raise NotAProbability(f"kernel has {arr.size} entries; need 2d")
    if d is not None and arr.size != 2 * d:
        raise NotAProbability(f"kernel has {arr.size} entries; need {2 * d}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise NotAProbability(f"kernel entries must be finite and non-negative: {arr}")
    total = arr.sum()
    if abs(total - 1.0) > PROB_TOL:
        raise NotAProbability(f"kernel sums to {total!r}, not 1")
    if np.any(arr <= 0):
        raise EllipticityViolated(f"kernel has a zero entry: {arr}")
    arr = arr / total
    arr.setflags(write=False)
    return TransitionKernel(arr)


def kernel_d1(p_right: float) -> TransitionKernel:
    """One-dimensional kernel with ``P(+1) = p_right``."""
    return make_kernel([p_right, 1.0 - p_right])


@dataclass(frozen=True)
class EnvironmentLaw:
    """I.i.d. product law whose one-site marginal is a finite mixture of kernels."""

    d: int
    atoms: tuple[TransitionKernel, ...]
    weights: np.ndarray
    kappa: float
    kernels: np.ndarray = field(repr=False)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def mean_kernel(self) -> np.ndarray:
        return self.weights @ self.kernels

    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "d": self.d,
                "atoms": [[float.hex(float(p)) for p in a.probs] for a in self.atoms],
                "weights": [float.hex(float(w)) for w in self.weights],
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "dimension": self.d,
            "atoms": [a.as_dict() for a in self.atoms],
            "weights": [float(w) for w in self.weights],
        }


def make_law(d: int, atoms, weights=None) -> EnvironmentLaw:
    """Build a validated environment law.

    Parameters
    ----------
    d : int
        Lattice dimension.
    atoms : sequence
        Site kernels, each accepted by :func:`make_kernel`.
    weights : sequence of float, optional
        Mixture weights; uniform when omitted.

    Raises
    ------
    NotAProbability
        A kernel or the weight vector does not sum to one within 1e-12.
    EllipticityViolated
        Some kernel entry is zero.
    """
    if int(d) != d or d < 1:
        raise ValueError("dimension must be a positive integer")
    d = int(d)
    atoms = list(atoms)
    if not atoms:
        raise ValueError("at least one atom is required")
    kernels = tuple(make_kernel(a, d) for a in atoms)
    if weights is None:
        w = np.full(len(kernels), 1.0 / len(kernels))
    else:
        w = np.asarray(weights, dtype=float).reshape(-1).copy()
        if w.size != len(kernels):
            raise ValueError("weights and atoms differ in length")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise NotAProbability(f"weights must be non-negative: {w}")
        if abs(w.sum() - 1.0) > PROB_TOL:
            raise NotAProbability(f"weights sum to {w.sum()!r}, not 1")
        w = w / w.sum()
    w.setflags(write=False)
    mat = np.vstack([k.probs for k in kernels])
    mat.setflags(write=False)
    return EnvironmentLaw(d, kernels, w, float(mat.min()), mat)


def deterministic_law(kernel) -> EnvironmentLaw:
    """Single-atom law, i.e. a classical random walk."""
    k = make_kernel(kernel)
    return make_law(k.d, [k], [1.0])


def local_drift(kernel) -> np.ndarray:
    """Mean step ``sum_z p(z) z`` of a kernel."""
    probs = kernel.probs if isinstance(kernel, TransitionKernel) else np.asarray(kernel, float)
    return probs @ step_vectors(probs.size // 2)


def atom_drifts(law: EnvironmentLaw) -> np.ndarray:
    return law.kernels @ step_vectors(law.d)


@dataclass(frozen=True)
class NestlingLabel:
    nestling: bool
    direction: np.ndarray | None = None
    margin: float = 0.0  # min over atoms of <drift, direction>

    def __repr__(self) -> str:
        if self.nestling:
            return "Nestling"
        return f"NonNestling(direction={np.round(self.direction, 6).tolist()})"


def _min_norm_hull_point(points: np.ndarray) -> np.ndarray:
    """Closest point to the origin in the convex hull of ``points`` (rows)."""
    n = len(points)
    if n == 1:
        return points[0].copy()
    gram = points @ points.T
    res = minimize(
        lambda w: w @ gram @ w,
        np.full(n, 1.0 / n),
        jac=lambda w: 2.0 * gram @ w,
        bounds=[(0.0, 1.0)] * n,
        constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1.0, "jac": lambda w: np.ones(n)}],
        method="SLSQP",
        options={"ftol": 1e-16, "maxiter": 500},
    )
    w = np.clip(res.x, 0.0, None)
    return (w / w.sum()) @ points


def classify_nestling(law: EnvironmentLaw, margin_tol: float = 1e-9) -> NestlingLabel:
    """Decide whether the law is non-nestling and, if so, return a witness direction.

    The witness maximises ``min_atoms <drift, u>`` over unit vectors.  By
    minimax duality that direction is the normalised point of the convex hull
    of atom drifts closest to the origin, and the attained margin is its norm.
    """
    drifts = atom_drifts(law)
    if np.all(np.abs(drifts) < 1e-15):
        raise DegenerateDrift("every atom has zero drift")
    if law.d == 1:
        lo, hi = drifts[:, 0].min(), drifts[:, 0].max()
        if lo > 0:
            return NestlingLabel(False, np.array([1.0]), float(lo))
        if hi < 0:
            return NestlingLabel(False, np.array([-1.0]), float(-hi))
        return NestlingLabel(True)
    p = _min_norm_hull_point(drifts)
    norm = float(np.linalg.norm(p))
    if norm <= margin_tol:
        return NestlingLabel(True)
    u = p / norm
    margin = float((drifts @ u).min())
    if margin <= margin_tol:
        return NestlingLabel(True)
    return NestlingLabel(False, u, margin)


def counts_array(counts, d: int) -> np.ndarray:
    if isinstance(counts, Mapping):
        arr = np.zeros(2 * d, dtype=np.int64)
        for step, c in counts.items():
            arr[parse_step(step, d)] += int(c)
    else:
        arr = np.asarray(counts, dtype=np.int64).reshape(-1)
        if arr.size != 2 * d:
            raise ValueError(f"counts need {2 * d} entries")
    if np.any(arr < 0):
        raise ValueError("counts must be non-negative")
    return arr


def annealed_site_moment(law: EnvironmentLaw, counts) -> float:
    """``E[prod_z pi(0, z) ** counts[z]]`` under the one-site mixture."""
    c = counts_array(counts, law.d)
    return float(law.weights @ np.prod(law.kernels ** c, axis=1))
