"""Renewal-identity estimates of the annealed log-moment generating function.

Everything here is a pure function of a :class:`~rwre_ldp.walk_sim.CycleEnsemble`.
With cycle displacements ``X`` and durations ``tau`` the empirical cycle
transform is ``psi(theta, r) = mean(exp(<theta, X> - r tau))`` and the
estimate of ``Lambda(theta)`` is its unique root in ``r`` of ``psi = 1``.
The gradient and Hessian formulas below are the exact derivatives of that
empirical root, so finite-difference checks on one ensemble are sharp.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .environment import NestlingLabel, classify_nestling
from .errors import BracketFailure, NonFiniteWeight, RegionRefused
from .walk_sim import CycleEnsemble

MAX_LOG_WEIGHT = 700.0
MIN_ESS = 100.0
BRACKET_PAD = 0.5


def as_theta(theta, d: int) -> np.ndarray:
    t = np.atleast_1d(np.asarray(theta, dtype=float)).reshape(-1)
    if t.size != d:
        raise ValueError(f"theta has {t.size} components, expected {d}")
    return t


def effective_sample_size(w: np.ndarray) -> float:
    s = w.sum()
    return float(s * s / np.dot(w, w)) if s > 0 else 0.0


def _log_weights(ens: CycleEnsemble, theta: np.ndarray, r: float = 0.0) -> np.ndarray:
    lw = ens.displacements @ theta
    if r:
        lw = lw - r * ens.durations
    return lw


def _check_finite(lw: np.ndarray) -> None:
    if lw.size and lw.max() > MAX_LOG_WEIGHT:
        raise NonFiniteWeight(f"log-weight {lw.max():.1f} overflows exp()")


def lln_ratio(ens: CycleEnsemble) -> np.ndarray:
    return ens.displacements.mean(axis=0) / ens.durations.mean()


@dataclass(frozen=True)
class PsiEstimate:
    value: float
    std_error: float
    n_cycles: int
    theta: np.ndarray
    r: float
    ess: float
    warnings: tuple[str, ...] = ()


def psi_hat(ens: CycleEnsemble, theta, r: float) -> PsiEstimate:
    """Sample mean of ``exp(<theta, X> - r tau)`` over the cycles."""
    if ens.n_cycles == 0:
        raise ValueError("empty ensemble")
    th = as_theta(theta, ens.d)
    lw = _log_weights(ens, th, r)
    _check_finite(lw)
    w = np.exp(lw)
    n = w.size
    se = float(w.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    ess = effective_sample_size(w)
    warns = ("ess<100",) if ess < MIN_ESS else ()
    return PsiEstimate(float(w.mean()), se, n, th, float(r), ess, warns)


class Region(enum.Enum):
    INTERIOR = "InteriorC"
    BOUNDARY = "BoundaryCb"
    OUTSIDE = "OutsideC"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class RegionLabel:
    region: Region
    reason: str = ""
    statistic: float | None = None

    def __str__(self) -> str:
        return self.region.value if not self.reason else f"{self.region.value}({self.reason})"

    @property
    def interior(self) -> bool:
        return self.region is Region.INTERIOR


@dataclass(frozen=True)
class _Root:
    lam: float
    weights: np.ndarray
    iterations: int


def _solve_root(ens: CycleEnsemble, theta: np.ndarray, tol: float) -> _Root:
    """Bisection on ``log psi(theta, .)`` over the padded Jensen bracket, then one Newton step."""
    tau = ens.durations.astype(float)
    lw0 = _log_weights(ens, theta)
    _check_finite(lw0)
    n = lw0.size
    if not np.any(theta):
        return _Root(0.0, np.ones(n), 0)

    # the bisection only needs psi, which depends on the distinct pairs alone
    tau_u, X_u, cnt = ens.distinct_pairs
    lw_u = X_u @ theta

    def log_psi(r):
        return logsumexp(lw_u - r * tau_u, b=cnt) - np.log(n)

    lo = float(theta @ lln_ratio(ens)) - BRACKET_PAD
    hi = float(np.linalg.norm(theta)) + BRACKET_PAD
    f_lo, f_hi = log_psi(lo), log_psi(hi)
    if not (f_lo > 0.0 > f_hi):
        raise BracketFailure(
            f"psi does not straddle 1 on [{lo:.4g}, {hi:.4g}]: "
            f"log psi = ({f_lo:.3g}, {f_hi:.3g})")
    it = 0
    mid = 0.5 * (lo + hi)
    f_mid = log_psi(mid)
    while (f_mid > 1.0 or abs(np.expm1(f_mid)) >= tol) and it < 200:
        if f_mid > 0:
            lo = mid
        else:
            hi = mid
        new = 0.5 * (lo + hi)
        if new in (lo, hi):
            break
        mid, f_mid = new, log_psi(new)
        it += 1
    w = np.exp(lw0 - mid * tau)
    if not np.all(np.isfinite(w)):
        raise NonFiniteWeight("non-finite weight at the root")
    # psi is decreasing with slope -mean(tau w)
    polished = mid + (w.mean() - 1.0) / np.mean(tau * w)
    if lo <= polished <= hi:
        mid = polished
        w = np.exp(lw0 - mid * tau)
    return _Root(float(mid), w, it)


def _classify(ens, theta, label, z_crit, min_ess, tol):
    if label is None:
        label = classify_nestling(ens.law)
    try:
        _check_finite(_log_weights(ens, theta))
    except NonFiniteWeight as exc:
        return RegionLabel(Region.UNDETERMINED, f"overflow: {exc}"), None
    if not label.nestling:
        try:
            root = _solve_root(ens, theta, tol)
        except (BracketFailure, NonFiniteWeight) as exc:
            return RegionLabel(Region.UNDETERMINED, str(exc)), None
        ess = effective_sample_size(root.weights)
        if ess < min_ess:
            return RegionLabel(Region.UNDETERMINED, f"ess={ess:.1f}<{min_ess:g}"), None
        return RegionLabel(Region.INTERIOR), root
    if not np.any(theta):
        return RegionLabel(Region.BOUNDARY, statistic=0.0), None
    psi = psi_hat(ens, theta, 0.0)
    if psi.ess < min_ess:
        return RegionLabel(Region.UNDETERMINED, f"ess={psi.ess:.1f}<{min_ess:g}"), None
    diff = psi.value - 1.0
    if psi.std_error > 0:
        s = diff / psi.std_error
    else:
        s = 0.0 if diff == 0 else np.copysign(np.inf, diff)
    if s > z_crit:
        return RegionLabel(Region.INTERIOR, statistic=float(s)), None
    if s < -z_crit:
        return RegionLabel(Region.OUTSIDE, statistic=float(s)), None
    return RegionLabel(Region.BOUNDARY, statistic=float(s)), None


def classify_theta(
    ens: CycleEnsemble,
    theta,
    nestling_label: NestlingLabel | None = None,
    z_crit: float = 3.0,
    *,
    min_ess: float = MIN_ESS,
) -> RegionLabel:
    """Place ``theta`` relative to the region where the renewal identity holds.

    Non-nestling laws: interior whenever the root exists with finite weights
    and effective sample size at least ``min_ess``.  Nestling laws: the
    z-score of ``psi(theta, 0) - 1`` decides interior / boundary / outside.
    """
    return _classify(ens, as_theta(theta, ens.d), nestling_label, z_crit, min_ess, 1e-12)[0]


@dataclass(frozen=True)
class LmgfEstimate:
    theta: np.ndarray
    lam: float
    lam_se: float
    grad: np.ndarray | None = None
    grad_se: np.ndarray | None = None
    hessian: np.ndarray | None = None
    hessian_se: np.ndarray | None = None
    ess: float = float("nan")
    min_eigenvalue: float = float("nan")
    n_cycles: int = 0
    label: RegionLabel | None = None
    warnings: tuple[str, ...] = field(default=())


def lambda_hat(
    ens: CycleEnsemble,
    theta,
    tol: float = 1e-12,
    *,
    nestling_label: NestlingLabel | None = None,
    z_crit: float = 3.0,
    min_ess: float = MIN_ESS,
) -> LmgfEstimate:
    """Root of ``psi(theta, .) = 1``; refuses tilts not classified interior.

    Raises
    ------
    RegionRefused
        ``theta`` is not labelled interior.
    BracketFailure, NonFiniteWeight
        The root search failed.
    """
    th = as_theta(theta, ens.d)
    label, root = _classify(ens, th, nestling_label, z_crit, min_ess, tol)
    if not label.interior:
        raise RegionRefused(f"theta={th.tolist()} classified {label}", label)
    if root is None:
        root = _solve_root(ens, th, tol)
    w = root.weights
    tau = ens.durations
    denom = float(np.mean(tau * w))
    se = float(np.std((w - 1.0) / denom, ddof=1) / np.sqrt(w.size))
    ess = effective_sample_size(w)
    warns = ("ess<100",) if ess < MIN_ESS else ()
    return LmgfEstimate(th, root.lam, se, ess=ess, n_cycles=w.size, label=label, warnings=warns)


def _weights(ens, theta, lam):
    lw = _log_weights(ens, theta, lam)
    _check_finite(lw)
    return np.exp(lw)


def grad_lambda(ens: CycleEnsemble, theta, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Weighted ratio ``mean(X w) / mean(tau w)`` and its delta-method standard errors.

    The influence function accounts for ``lam`` having been solved on the
    same cycles.
    """
    th = as_theta(theta, ens.d)
    w = _weights(ens, th, lam)
    X = ens.displacements.astype(float)
    tau = ens.durations.astype(float)
    D = np.mean(tau * w)
    G = (X * w[:, None]).mean(axis=0) / D
    Y = X - np.outer(tau, G)
    C = (Y * (tau * w)[:, None]).mean(axis=0)
    infl = (Y * w[:, None] - np.outer((w - 1.0) / D, C)) / D
    se = infl.std(axis=0, ddof=1) / np.sqrt(w.size)
    return G, se


def hessian_lambda(ens: CycleEnsemble, theta, lam: float, grad) -> np.ndarray:
    """``mean(Y Y^T w) / mean(tau w)`` with centred displacements ``Y = X - grad * tau``."""
    return _hessian(ens, as_theta(theta, ens.d), lam, np.asarray(grad, float))[0]


def _hessian(ens, th, lam, G):
    w = _weights(ens, th, lam)
    X = ens.displacements.astype(float)
    tau = ens.durations.astype(float)
    D = np.mean(tau * w)
    Y = X - np.outer(tau, G)
    YY = Y[:, :, None] * Y[:, None, :]
    H = np.einsum("n,nij->ij", w, YY) / w.size / D
    H = 0.5 * (H + H.T)
    # ratio delta method with grad and lam held fixed
    infl = (YY * w[:, None, None] - H[None] * (tau * w)[:, None, None]) / D
    se = infl.std(axis=0, ddof=1) / np.sqrt(w.size)
    return H, se


def estimate_lmgf(ens: CycleEnsemble, theta, tol: float = 1e-12, **kwargs) -> LmgfEstimate:
    """Lambda, gradient and Hessian at one tilt, all from the same ensemble."""
    est = lambda_hat(ens, theta, tol, **kwargs)
    G, G_se = grad_lambda(ens, est.theta, est.lam)
    H, H_se = _hessian(ens, est.theta, est.lam, G)
    min_eig = float(np.linalg.eigvalsh(H).min())
    warns = est.warnings + (("hessian not positive definite",) if min_eig <= 0 else ())
    return LmgfEstimate(
        est.theta, est.lam, est.lam_se, G, G_se, H, H_se, est.ess, min_eig,
        est.n_cycles, est.label, warns,
    )


def extended_gradient(ens: CycleEnsemble, theta) -> tuple[np.ndarray, np.ndarray]:
    """Gradient formula evaluated at ``lam = 0`` together with its Hessian counterpart.

    Used on the boundary of the region for nestling laws, where the
    gradient and Hessian extend continuously with ``Lambda = 0``.
    """
    th = as_theta(theta, ens.d)
    w = _weights(ens, th, 0.0)
    X = ens.displacements.astype(float)
    tau = ens.durations.astype(float)
    G = (X * w[:, None]).mean(axis=0) / np.mean(tau * w)
    H, _ = _hessian(ens, th, 0.0, G)
    return G, H
