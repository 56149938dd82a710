"""Exact reference values: path enumeration, finite-horizon extrapolation and closed forms.

Annealed path weights factor over sites: a path that leaves site ``x``
``c_x[z]`` times by step ``z`` has probability ``prod_x E[prod_z pi(0,z)^c_x[z]]``.
Enumeration walks the path tree depth first and updates that product one
factor at a time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numba as nb
import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp, xlogy

from .environment import (
    EnvironmentLaw,
    TransitionKernel,
    annealed_site_moment,
    make_kernel,
    step_vectors,
)
from .errors import NotTransientRight, TooLarge
from .lmgf import as_theta

PATH_CAP = 10**8


@dataclass(frozen=True)
class ExactExpectation:
    n: int
    theta: np.ndarray
    value: float
    path_count: int


@nb.njit(cache=True)
def _moment(weights, kernels, c):
    tot = 0.0
    for a in range(kernels.shape[0]):
        p = weights[a]
        for z in range(kernels.shape[1]):
            if c[z]:
                p *= kernels[a, z] ** c[z]
        tot += p
    return tot


@nb.njit(cache=True)
def _enumerate_branch(weights, kernels, vecs, theta, n, first, side):
    """Compensated sum of ``weight * exp(<theta, X_n>)`` over paths starting with ``first``."""
    d = vecs.shape[1]
    m = vecs.shape[0]
    n_sites = side ** d
    counts = np.zeros((n_sites, m), dtype=np.int64)
    site_m = np.ones(n_sites)
    stride = np.ones(d, dtype=np.int64)
    for k in range(1, d):
        stride[k] = stride[k - 1] * side
    centre = 0
    for k in range(d):
        centre += (side // 2) * stride[k]
    site_of_step = np.zeros(m, dtype=np.int64)
    for z in range(m):
        for k in range(d):
            site_of_step[z] += vecs[z, k] * stride[k]
    step_tilt = np.zeros(m)
    for z in range(m):
        for k in range(d):
            step_tilt[z] += theta[k] * vecs[z, k]

    sites = np.zeros(n + 1, dtype=np.int64)
    w = np.zeros(n + 1)
    tilt = np.zeros(n + 1)
    saved = np.zeros(n + 1)
    choice = np.full(n + 1, -1, dtype=np.int64)
    s = 0.0
    comp = 0.0
    sites[0] = centre
    w[0] = 1.0
    choice[0] = first
    depth = 0
    fresh = True  # depth 0 holds its single branch, not yet applied
    while depth >= 0:
        if not fresh:
            # retract the step taken from this depth, then advance to the next one
            x = sites[depth]
            counts[x, choice[depth]] -= 1
            site_m[x] = saved[depth]
            if depth == 0:
                break
            choice[depth] += 1
            if choice[depth] >= m:
                depth -= 1
                continue
        fresh = False
        x = sites[depth]
        z = choice[depth]
        saved[depth] = site_m[x]
        counts[x, z] += 1
        site_m[x] = _moment(weights, kernels, counts[x])
        w[depth + 1] = w[depth] * (site_m[x] / saved[depth])
        tilt[depth + 1] = tilt[depth] + step_tilt[z]
        sites[depth + 1] = x + site_of_step[z]
        if depth + 1 == n:
            v = w[n] * np.exp(tilt[n])
            t = s + v
            if abs(s) >= abs(v):
                comp += (s - t) + v
            else:
                comp += (v - t) + s
            s = t
            continue
        depth += 1
        choice[depth] = 0
        fresh = True
    return s, comp


def _check_cap(d: int, n: int) -> int:
    count = (2 * d) ** n
    if count > PATH_CAP:
        raise TooLarge(f"(2d)^n = {count} paths exceeds the cap of {PATH_CAP}")
    return count


def exact_annealed_expectation(law: EnvironmentLaw, theta, n: int) -> ExactExpectation:
    """``E[exp(<theta, X_n>)]`` under the averaged measure, by full enumeration.

    Raises
    ------
    TooLarge
        More than ``1e8`` paths.
    """
    th = as_theta(theta, law.d)
    n = int(n)
    if n < 0:
        raise ValueError("horizon must be non-negative")
    count = _check_cap(law.d, n)
    if n == 0:
        return ExactExpectation(0, th, 1.0, 1)
    vecs = step_vectors(law.d).astype(np.int64)
    side = 2 * n + 1
    parts = []
    for first in range(2 * law.d):
        s, c = _enumerate_branch(
            np.ascontiguousarray(law.weights), np.ascontiguousarray(law.kernels),
            vecs, th, n, first, side)
        parts.extend([s, c])
    return ExactExpectation(n, th, math.fsum(parts), count)


def path_weight(law: EnvironmentLaw, steps) -> float:
    """Averaged probability of one finite step sequence (step indices)."""
    vecs = step_vectors(law.d)
    pos = np.zeros(law.d, dtype=np.int64)
    counts: dict[tuple, np.ndarray] = {}
    for s in steps:
        c = counts.setdefault(tuple(pos), np.zeros(2 * law.d, dtype=np.int64))
        c[int(s)] += 1
        pos = pos + vecs[int(s)]
    return math.prod(annealed_site_moment(law, c) for c in counts.values())


def independent_steps_expectation(law: EnvironmentLaw, theta, n: int) -> float:
    """The value if every step used a fresh site: ``(sum_z E[pi(0,z)] e^{<theta,z>})^n``."""
    th = as_theta(theta, law.d)
    return float((law.mean_kernel() @ np.exp(step_vectors(law.d) @ th)) ** n)


@dataclass(frozen=True)
class FiniteNFit:
    lam: float
    residual: float
    slope: float
    n_list: tuple[int, ...]
    lambda_n: np.ndarray

    def __iter__(self):
        yield self.lam
        yield self.residual


def finite_n_lambda(law: EnvironmentLaw, theta, n_list) -> FiniteNFit:
    """Least-squares fit of ``(1/n) log E[exp(<theta, X_n>)] = Lambda + c/n``.

    Unpacks as ``(Lambda, residual)``; the residual is the root-mean-square
    misfit over ``n_list``.
    """
    th = as_theta(theta, law.d)
    ns = tuple(int(n) for n in n_list)
    if len(ns) < 2 or len(set(ns)) != len(ns) or min(ns) < 1:
        raise ValueError("need at least two distinct positive horizons")
    for n in ns:
        _check_cap(law.d, n)
    if not np.any(th):
        return FiniteNFit(0.0, 0.0, 0.0, ns, np.zeros(len(ns)))
    lam_n = np.array([math.log(exact_annealed_expectation(law, th, n).value) / n for n in ns])
    A = np.column_stack([np.ones(len(ns)), 1.0 / np.array(ns, dtype=float)])
    coef, *_ = np.linalg.lstsq(A, lam_n, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - lam_n) ** 2)))
    return FiniteNFit(float(coef[0]), resid, float(coef[1]), ns, lam_n)


@dataclass(frozen=True)
class CramerForm:
    lam: float
    grad: np.ndarray
    hessian: np.ndarray
    rate_fn: Callable[[object], float]


def _cramer_rate(kernel: TransitionKernel):
    d = kernel.d
    vecs = step_vectors(d).astype(float)
    logp = np.log(kernel.probs)

    if d == 1:
        p, q = kernel.probs

        def rate(xi) -> float:
            x = float(np.asarray(xi, dtype=float).reshape(-1)[0])
            if abs(x) > 1:
                return math.inf
            return float(0.5 * (xlogy(1 + x, (1 + x) / (2 * p)) + xlogy(1 - x, (1 - x) / (2 * q))))

        return rate

    def rate(xi) -> float:
        x = np.asarray(xi, dtype=float).reshape(-1)
        if x.size != d:
            raise ValueError("velocity has the wrong dimension")
        if np.abs(x).sum() > 1:
            return math.inf

        def obj(t):
            a = logp + vecs @ t
            lam = logsumexp(a)
            pw = np.exp(a - lam)
            return lam - t @ x, pw @ vecs - x

        res = minimize(obj, np.zeros(d), jac=True, method="BFGS", options={"gtol": 1e-12})
        return float(-res.fun)

    return rate


def cramer_closed_form(kernel, theta) -> CramerForm:
    """Log-moment generating function of one step of a classical walk, with derivatives and rate."""
    k = make_kernel(kernel)
    th = as_theta(theta, k.d)
    vecs = step_vectors(k.d).astype(float)
    a = np.log(k.probs) + vecs @ th
    lam = float(logsumexp(a))
    pw = np.exp(a - lam)
    grad = pw @ vecs
    hess = (vecs * pw[:, None]).T @ vecs - np.outer(grad, grad)
    return CramerForm(lam, grad, hess, _cramer_rate(k))


def solomon_velocity(law: EnvironmentLaw) -> float:
    """Velocity of a one-dimensional walk transient to the right, in exact rational arithmetic."""
    if law.d != 1:
        raise ValueError("the formula is one-dimensional")
    e_rho = sum(
        (Fraction(float(w)) * (1 - Fraction(float(k.probs[0]))) / Fraction(float(k.probs[0]))
         for w, k in zip(law.weights, law.atoms)),
        Fraction(0),
    )
    if e_rho >= 1:
        raise NotTransientRight(f"E[rho] = {float(e_rho):.6g} >= 1")
    return float((1 - e_rho) / (1 + e_rho))


FIXTURE_FIELDS = ["law_hash", "theta", "n", "value"]


def write_oracle_fixture(path, rows) -> None:
    """Write ``(law, theta, n)`` triples with their exact values."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIXTURE_FIELDS)
        for law, theta, n in rows:
            e = exact_annealed_expectation(law, theta, n)
            w.writerow([law.fingerprint(), " ".join(repr(float(t)) for t in e.theta), n, repr(e.value)])


def read_oracle_fixture(path) -> list[dict]:
    with open(path, newline="") as fh:
        out = []
        for r in csv.DictReader(fh):
            out.append({
                "law_hash": r["law_hash"],
                "theta": np.array([float(t) for t in r["theta"].split()]),
                "n": int(r["n"]),
                "value": float(r["value"]),
            })
    return out
