"""Saddlepoint tail approximations for the block-permutation statistic.

The exceedance probability P(stat >= u^2/2) is approximated two ways: an
additive chi-squared-plus-correction form and an adjusted-argument form.
Both need the sphere integral G(u) of the level-set integrand, evaluated by
Monte Carlo over uniform directions (default) or by a deterministic
symmetric product rule.

Everything is parametrized by x = r * H0^(1/2) * s with H0 the CGF Hessian
at zero, which makes the statistic exactly r^2/2 for a quadratic CGF; in
that case the integrand is constant and G(u) = 1 identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import statistic
from .cgf import table_for
from .design import SortedDesign
from .errors import (
    LevelSetEscapesDomainError,
    NumericalDegeneracyError,
    ValidationError,
)
from .numerics import RngStream, sphere_area, sphere_sample, sqrt_and_det, sym_eigen

DEFAULT_EPS = 1e-3
LEVEL_RTOL = 1e-9  # |stat - u^2/2| tolerance for the radial root
IP_FLOOR = 1e-14  # |s . H0^(1/2) t_x| below this signals solver failure


class DesignTailModel:
    """Tail-approximation view of a sorted design."""

    def __init__(self, d: SortedDesign):
        self.design = d
        self.table = table_for(d)
        self.b = d.b
        self.k = d.k
        self.dim = d.k - 1
        _, _, self.hess0 = self.table.kappa_full(np.zeros(self.dim))
        self.sqrt_hess0, self.logdet_hess0 = sqrt_and_det(self.hess0)
        self.level_cap = math.log(d.k)

    def solve_at(self, x, warm=None):
        return self.table.solve(x, warm, statistic.SOLVE_RTOL, statistic.MAX_ITER)

    def ray_radius(self, w) -> float:
        return statistic.ray_boundary_radius(self.design, w)

    def hess_logdet_at(self, hess) -> float:
        w, _ = sym_eigen(hess)
        if w[0] <= 0:
            raise NumericalDegeneracyError("CGF Hessian at the tilt is not positive definite")
        return float(np.log(w).sum())


class QuadraticModel:
    """Synthetic quadratic CGF t.Sigma.t/2 with closed-form conjugate.

    Used to validate the tail machinery: the level sets are ellipsoids, the
    integrand is constant, and both approximations must collapse to the
    chi-squared term.
    """

    def __init__(self, b: int, k: int, sigma=None):
        self.b = b
        self.k = k
        self.dim = k - 1
        sigma = np.eye(self.dim) if sigma is None else np.asarray(sigma, dtype=float)
        self.hess0 = sigma
        self.sqrt_hess0, self.logdet_hess0 = sqrt_and_det(sigma)
        self._inv = np.linalg.inv(sigma)
        self.level_cap = math.inf

    def solve_at(self, x, warm=None):
        from ._backend import SolveResult

        x = np.asarray(x, dtype=float)
        t = self._inv @ x
        lam = 0.5 * float(x @ t)
        return SolveResult(t, lam, 0.0, 0, 0, self.hess0)

    def ray_radius(self, w) -> float:
        return math.inf

    def hess_logdet_at(self, hess) -> float:
        return self.logdet_hess0


@dataclass(frozen=True, eq=False)
class RadialSolution:
    """Point on the level set stat = u^2/2 along direction s."""

    s: np.ndarray
    r: float
    x: np.ndarray
    t: np.ndarray
    lam: float
    hess: np.ndarray


@dataclass(frozen=True)
class TailApproximation:
    u: float
    g: float
    u_star: float
    p_lr: float
    p_bn: float
    n_quadrature: int
    quadrature_se: float
    se_lr: float
    se_bn: float
    lr_clamped: bool


def check_admissible(model, u: float, eps: float = DEFAULT_EPS) -> None:
    """Reject levels whose level set is not guaranteed inside the domain."""
    if u <= 0:
        raise ValidationError(f"threshold u must be positive, got {u}")
    if eps <= 0:
        raise ValidationError(f"margin eps must be positive, got {eps}")
    if 0.5 * u * u >= model.level_cap - eps:
        raise LevelSetEscapesDomainError(
            f"u = {u:g} violates u^2/2 < log k - eps = {model.level_cap:.6g} - {eps:g} "
            f"(largest admissible u is {math.sqrt(2.0 * (model.level_cap - eps)):.4f})"
        )


def radial_root(model, s, u: float, eps: float = DEFAULT_EPS,
                warm: RadialSolution | None = None) -> RadialSolution:
    """Find r with stat(r * H0^(1/2) s) = u^2/2 along the unit direction s.

    The statistic increases strictly along rays from the origin, so the root
    is bracketed in (0, ray radius) and polished by Newton with bisection
    safeguards; at the root |stat - u^2/2| <= 1e-9.
    """
    check_admissible(model, u, eps)
    s = np.asarray(s, dtype=float)
    w = model.sqrt_hess0 @ s
    radius = model.ray_radius(w)
    target = 0.5 * u * u
    lo, hi = 0.0, radius
    r = warm.r if warm is not None else u
    if not lo < r < hi:
        r = 0.5 * (lo + hi) if math.isfinite(hi) else u
    t_warm = warm.t if warm is not None else None
    for _ in range(200):
        res = model.solve_at(r * w, t_warm)
        if res.status != 0:
            # Unsolvable means within solver resolution of the boundary,
            # which can only happen past the root: shrink from above.
            hi = r
            r = 0.5 * (lo + hi)
            t_warm = None
            continue
        t_warm = res.t
        h = res.lam - target
        if abs(h) <= LEVEL_RTOL:
            x = r * w
            return RadialSolution(s=s, r=r, x=x, t=res.t, lam=res.lam, hess=res.hess)
        if h < 0:
            lo = r
        else:
            hi = r
        slope = float(res.t @ w)
        r_next = r - h / slope if slope > 0 else math.nan
        if not (math.isfinite(r_next) and lo < r_next < hi):
            r_next = 2.0 * r if not math.isfinite(hi) else 0.5 * (lo + hi)
        r = r_next
    raise NumericalDegeneracyError(
        f"radial root for u={u:g} did not converge (bracket [{lo:g}, {hi:g}])"
    )


def delta(model, sol: RadialSolution, u: float) -> float:
    """Level-set integrand at one direction (all factors in log space)."""
    k, d = model.k, model.dim
    ip = abs(float(sol.s @ (model.sqrt_hess0 @ sol.t)))
    if ip < IP_FLOOR:
        raise NumericalDegeneracyError(
            "direction-tilt inner product vanished; saddlepoint solve is inconsistent"
        )
    logdet_t = model.hess_logdet_at(sol.hess)
    log_delta = (
        math.lgamma(d / 2.0)
        - 0.5 * logdet_t
        + 0.5 * model.logdet_hess0
        + (k - 2) * math.log(sol.r)
        - math.log(2.0)
        - (d / 2.0) * math.log(math.pi)
        - (k - 3) * math.log(u)
        - math.log(ip)
    )
    return math.exp(log_delta)


def sphere_rule(dim: int, level: int = 24) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic symmetric quadrature on the unit sphere in R^dim.

    Product construction: Gauss-Gegenbauer nodes in the polar coordinate
    recursively paired with a rule on the equatorial sphere; weights sum to
    the surface measure. dim=1 is the two-point set, dim=2 equal angles.
    """
    if dim < 1:
        raise ValidationError(f"dimension must be >= 1, got {dim}")
    if dim == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if dim == 2:
        n = max(4, 2 * (level // 2))
        ang = 2.0 * math.pi * (np.arange(n) + 0.5) / n
        pts = np.column_stack([np.cos(ang), np.sin(ang)])
        return pts, np.full(n, 2.0 * math.pi / n)
    from scipy.special import roots_gegenbauer

    alpha = (dim - 2) / 2.0
    n_polar = max(4, level // 2)
    tnodes, tweights = roots_gegenbauer(n_polar, alpha)
    sub_pts, sub_w = sphere_rule(dim - 1, level)
    sin_theta = np.sqrt(np.maximum(1.0 - tnodes**2, 0.0))
    pts = np.empty((n_polar * len(sub_w), dim))
    wts = np.empty(n_polar * len(sub_w))
    row = 0
    for i in range(n_polar):
        block = slice(row, row + len(sub_w))
        pts[block, 0] = tnodes[i]
        pts[block, 1:] = sin_theta[i] * sub_pts
        wts[block] = tweights[i] * sub_w
        row += len(sub_w)
    return pts, wts


def big_g(model, u: float, n_samples: int = 100,
          rng: RngStream | np.random.Generator | None = None,
          method: str = "mc", eps: float = DEFAULT_EPS,
          rule_level: int = 24) -> tuple[float, float, int]:
    """Sphere integral of the level-set integrand: (estimate, std error, n).

    Monte Carlo uses the unnormalized surface measure (area times the mean
    integrand); the deterministic backend has zero reported error.
    """
    check_admissible(model, u, eps)
    if model.dim == 1:
        # The "sphere" is the two-point set {-1, +1}; sum both atoms exactly.
        total = 0.0
        for sgn in (1.0, -1.0):
            sol = radial_root(model, np.array([sgn]), u, eps)
            total += delta(model, sol, u)
        return total, 0.0, 2
    if method == "mc":
        if rng is None:
            raise ValidationError("Monte Carlo sphere integration needs an rng")
        samples = sphere_sample(model.dim, n_samples, rng)
        vals = np.empty(n_samples)
        warm = None
        for i in range(n_samples):
            warm = radial_root(model, samples[i], u, eps, warm)
            vals[i] = delta(model, warm, u)
        area = sphere_area(model.dim)
        g = area * float(vals.mean())
        se = area * float(vals.std(ddof=1)) / math.sqrt(n_samples) if n_samples > 1 else math.inf
        return g, se, n_samples
    if method == "deterministic":
        pts, wts = sphere_rule(model.dim, rule_level)
        total = 0.0
        warm = None
        for i in range(len(wts)):
            warm = radial_root(model, pts[i], u, eps, warm)
            total += wts[i] * delta(model, warm, u)
        return float(total), 0.0, len(wts)
    raise ValidationError(f"unknown quadrature method: {method!r}")


def tail_constant(b: int, k: int) -> float:
    """b^((k-1)/2) / (2^((k-3)/2) Gamma((k-1)/2))."""
    return b ** ((k - 1) / 2.0) / (2.0 ** ((k - 3) / 2.0) * math.gamma((k - 1) / 2.0))


def _chi2_sf(x: float, df: int) -> float:
    from .numerics import chi_sq_survival

    return chi_sq_survival(x, df)


def _chi2_pdf(x: float, df: int) -> float:
    if x <= 0:
        return 0.0
    return math.exp((df / 2.0 - 1.0) * math.log(x) - x / 2.0
                    - (df / 2.0) * math.log(2.0) - math.lgamma(df / 2.0))


def tail_lr(b: int, k: int, u: float, g: float) -> tuple[float, bool]:
    """Additive form: chi-squared term plus the integrand correction.

    Returns (probability clamped to [0, 1], whether clamping fired).
    """
    if u <= 0:
        raise ValidationError(f"threshold u must be positive, got {u}")
    base = _chi2_sf(b * u * u, k - 1)
    corr = (tail_constant(b, k) / b) * u ** (k - 3) * math.exp(-0.5 * b * u * u) * (g - 1.0)
    p = base + corr
    clamped = p < 0.0 or p > 1.0
    return min(max(p, 0.0), 1.0), clamped


def tail_bn(b: int, k: int, u: float, g: float) -> float:
    """Adjusted-argument form: chi-squared survival at b*(u - log(g)/(b u))^2."""
    if u <= 0:
        raise ValidationError(f"threshold u must be positive, got {u}")
    if g <= 0:
        raise ValidationError(f"integral estimate must be positive, got {g}")
    u_star = u - math.log(g) / (b * u)
    return _chi2_sf(b * u_star * u_star, k - 1)


def approximate_tail(model, u: float, n_samples: int = 100,
                     rng: RngStream | np.random.Generator | None = None,
                     method: str = "mc", eps: float = DEFAULT_EPS,
                     rule_level: int = 24) -> TailApproximation:
    """Both tail approximations at level u^2/2, with error propagation from
    the sphere-integral standard error."""
    g, se_g, n_quad = big_g(model, u, n_samples, rng, method, eps, rule_level)
    b, k = model.b, model.k
    p_lr, clamped = tail_lr(b, k, u, g)
    p_bn = tail_bn(b, k, u, g)
    u_star = u - math.log(g) / (b * u)
    se_lr = (tail_constant(b, k) / b) * u ** (k - 3) * math.exp(-0.5 * b * u * u) * se_g
    se_bn = _chi2_pdf(b * u_star * u_star, k - 1) * 2.0 * abs(u_star) / (g * u) * se_g
    return TailApproximation(
        u=u, g=g, u_star=u_star, p_lr=p_lr, p_bn=p_bn,
        n_quadrature=n_quad, quadrature_se=se_g, se_lr=se_lr, se_bn=se_bn,
        lr_clamped=clamped,
    )
