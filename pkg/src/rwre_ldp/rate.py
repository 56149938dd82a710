"""Rate function on the strict-convexity region, by inverting the LMGF gradient."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .environment import EnvironmentLaw, classify_nestling
from .errors import LeftRegionC, NoConvergence, RegionRefused, RWREError
from .lmgf import (
    LmgfEstimate,
    Region,
    RegionLabel,
    as_theta,
    classify_theta,
    estimate_lmgf,
    extended_gradient,
    lambda_hat,
)
from .walk_sim import CycleEnsemble, harvest_cycles


@dataclass(frozen=True)
class VelocityEstimate:
    xi: np.ndarray
    std_error: np.ndarray


def lln_velocity(ens: CycleEnsemble) -> VelocityEstimate:
    """Mean displacement over mean duration, with delta-method standard errors."""
    X = ens.displacements.astype(float)
    tau = ens.durations.astype(float)
    xi = X.mean(axis=0) / tau.mean()
    infl = (X - np.outer(tau, xi)) / tau.mean()
    return VelocityEstimate(xi, infl.std(axis=0, ddof=1) / np.sqrt(tau.size))


def _start(ens: CycleEnsemble, label) -> np.ndarray:
    if label.nestling:
        return 0.1 * np.asarray(ens.direction, dtype=float)
    return np.zeros(ens.d)


def invert_velocity(
    ens: CycleEnsemble,
    xi,
    tol: float = 1e-8,
    max_iter: int = 50,
    *,
    return_estimate: bool = False,
):
    """Solve ``grad Lambda(theta) = xi`` by damped Newton steps.

    Each trial step is halved until it lands on a tilt classified interior
    and decreases ``Lambda(theta) - <theta, xi>``.

    Raises
    ------
    LeftRegionC
        No halving of the Newton step stays inside the region.
    NoConvergence
        ``max_iter`` iterations without reaching ``tol``.
    """
    xi = as_theta(xi, ens.d)
    label = classify_nestling(ens.law)
    theta = _start(ens, label)
    try:
        est = estimate_lmgf(ens, theta, nestling_label=label)
    except RegionRefused as exc:
        raise LeftRegionC(f"starting tilt {theta.tolist()} refused: {exc}", exc.label) from exc
    for _ in range(max_iter):
        res = xi - est.grad
        if np.linalg.norm(res) < tol:
            return (theta, est) if return_estimate else theta
        step = np.linalg.solve(est.hessian, res)
        obj = est.lam - theta @ xi
        slope = -res @ step
        alpha = 1.0
        last_label = None
        for _ in range(40):
            trial = theta + alpha * step
            try:
                new = estimate_lmgf(ens, trial, nestling_label=label)
            except RegionRefused as exc:
                last_label = exc.label
                alpha *= 0.5
                continue
            except RWREError:
                alpha *= 0.5
                continue
            if new.lam - trial @ xi <= obj + 1e-4 * alpha * slope + 1e-15:
                theta, est = trial, new
                break
            alpha *= 0.5
        else:
            raise LeftRegionC(
                f"Newton step from theta={theta.tolist()} cannot stay in the region "
                f"(last label {last_label})", last_label)
    raise NoConvergence(
        f"no convergence after {max_iter} iterations; theta={theta.tolist()}, "
        f"|residual|={np.linalg.norm(xi - est.grad):.3g}")


@dataclass(frozen=True)
class RatePoint:
    xi: np.ndarray
    theta: np.ndarray
    rate: float
    rate_se: float
    rate_hessian: np.ndarray
    lam: float
    fenchel_lower: float
    fenchel_gap: float
    estimate: LmgfEstimate


def default_theta_grid(d: int) -> np.ndarray:
    if d == 1:
        return np.linspace(-1.0, 2.0, 151)[:, None]
    axes = [np.linspace(-1.0, 1.0, 21)] * d
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)


def fenchel_lower_bound(ens: CycleEnsemble, xi, theta_grid=None) -> tuple[float, np.ndarray]:
    """``max over grid of <theta', xi> - Lambda(theta')``.

    Interior grid tilts use the renewal root.  For nestling laws, tilts
    labelled outside or boundary contribute with ``Lambda = 0``; undetermined
    tilts are skipped.
    """
    xi = as_theta(xi, ens.d)
    grid = default_theta_grid(ens.d) if theta_grid is None else np.atleast_2d(theta_grid)
    if grid.shape[1] != ens.d:
        grid = grid.reshape(-1, ens.d)
    label = classify_nestling(ens.law)
    best, arg = -np.inf, None
    for th in grid:
        try:
            lam = lambda_hat(ens, th, nestling_label=label).lam
        except RegionRefused as exc:
            if label.nestling and exc.label is not None and exc.label.region in (
                    Region.OUTSIDE, Region.BOUNDARY):
                lam = 0.0
            else:
                continue
        except RWREError:
            continue
        val = float(th @ xi) - lam
        if val > best:
            best, arg = val, th
    return best, arg


def rate_at(ens: CycleEnsemble, xi, *, theta_grid=None, tol: float = 1e-8,
            max_iter: int = 50) -> RatePoint:
    """Rate at ``xi`` from the Legendre identity at ``theta(xi)``.

    The standard error is that of ``Lambda(theta(xi))``: to first order the
    error in ``theta(xi)`` does not move the value of the supremum.
    """
    xi = as_theta(xi, ens.d)
    theta, est = invert_velocity(ens, xi, tol, max_iter, return_estimate=True)
    rate = float(theta @ xi) - est.lam
    lower, _ = fenchel_lower_bound(ens, xi, theta_grid)
    return RatePoint(
        xi, theta, rate, est.lam_se, np.linalg.inv(est.hessian), est.lam,
        lower, rate - lower, est,
    )


@dataclass(frozen=True)
class RateRow:
    xi: np.ndarray
    point: RatePoint | None
    status: str


def rate_curve(
    law: EnvironmentLaw,
    direction,
    xi_grid,
    n_cycles: int = 100_000,
    seed: int = 0,
    *,
    ensemble: CycleEnsemble | None = None,
    runs: int = 4,
    cycle_cap: int = 10**6,
    theta_grid=None,
    workers: int = 1,
) -> list[RateRow]:
    """Rate function over a velocity grid from one shared ensemble.

    Rows whose inversion fails carry the error class name as status; the
    sweep itself never aborts.
    """
    grid = [as_theta(x, law.d) for x in np.atleast_1d(np.asarray(xi_grid, dtype=float)).reshape(-1, law.d)]
    keys = {tuple(x) for x in grid}
    if len(keys) != len(grid):
        raise ValueError("velocity grid points must be pairwise distinct")
    ens = ensemble if ensemble is not None else harvest_cycles(
        law, direction, n_cycles, seed, cycle_cap, runs, workers=workers)

    def one(x):
        try:
            return RateRow(x, rate_at(ens, x, theta_grid=theta_grid), "ok")
        except RWREError as exc:
            return RateRow(x, None, type(exc).__name__)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, grid))
    return [one(x) for x in grid]


@dataclass(frozen=True)
class ProbePoint:
    theta: np.ndarray
    label: RegionLabel
    grad: np.ndarray | None
    lam: float | None = None
    hessian: np.ndarray | None = None
    normal_inner: float | None = None


def nestling_boundary_probe(
    law: EnvironmentLaw,
    direction,
    theta_sequence,
    n_cycles: int = 100_000,
    seed: int = 0,
    *,
    ensemble: CycleEnsemble | None = None,
    runs: int = 4,
    cycle_cap: int = 10**6,
    z_crit: float = 3.0,
) -> list[ProbePoint]:
    """Follow the LMGF gradient along tilts approaching the boundary of the region.

    Interior tilts report the renewal-root gradient.  Boundary tilts report
    the gradient formula extended with ``Lambda = 0``; at ``theta = 0`` in
    ``d >= 2`` the quantity ``<H(0)^-1 xi_o, xi_o>`` is reported as well.
    """
    label = classify_nestling(law)
    if not label.nestling:
        raise ValueError("boundary probe requires a nestling law")
    ens = ensemble if ensemble is not None else harvest_cycles(
        law, direction, n_cycles, seed, cycle_cap, runs)
    out = []
    for th in np.atleast_1d(np.asarray(theta_sequence, dtype=float)).reshape(-1, law.d):
        reg = classify_theta(ens, th, label, z_crit)
        if reg.interior:
            est = estimate_lmgf(ens, th, nestling_label=label, z_crit=z_crit)
            out.append(ProbePoint(th, reg, est.grad, est.lam, est.hessian))
        elif reg.region is Region.BOUNDARY:
            G, H = extended_gradient(ens, th)
            inner = None
            if law.d >= 2 and not np.any(th):
                inner = float(G @ np.linalg.solve(H, G))
            out.append(ProbePoint(th, reg, G, 0.0, H, inner))
        else:
            out.append(ProbePoint(th, reg, None))
    return out
