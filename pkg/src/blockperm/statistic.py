"""The tilted likelihood-ratio statistic and its admissible domain.

The statistic is the convex conjugate of the permutation CGF. It is finite
on the closed admissible polytope: solved by damped Newton in the interior,
assembled from two lower-dimensional sub-statistics plus a binomial term on
boundary faces, equal to log k! at vertices, and +inf outside.

Faces are labelled by (l, subset, side): the coordinates in `subset` (0-based
indices into the reduced mean vector, |subset| = l) sum to the l smallest
('lower') or l largest ('upper') sorted column means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .cgf import CgfTable, table_for
from .design import SortedDesign
from .errors import (
    DegenerateDesignError,
    DomainError,
    NearBoundaryError,
    ValidationError,
)

SOLVE_RTOL = 1e-10
MAX_ITER = 200


class Face(NamedTuple):
    l: int
    subset: tuple[int, ...]
    side: str  # 'lower' or 'upper'


@dataclass(frozen=True, eq=False)
class SaddlepointSolution:
    """Solution of kappa'(t) = x with the statistic value at x."""

    x: np.ndarray
    t: np.ndarray
    lam: float
    hess: np.ndarray  # kappa''(t)
    iterations: int
    residual: float


@dataclass(frozen=True)
class DomainLocation:
    """Position of a point relative to the admissible polytope."""

    kind: str  # 'interior' | 'boundary' | 'vertex' | 'exterior'
    margin: float  # signed min slack over all facet constraints
    faces: tuple[Face, ...] = ()
    vertex_perm: tuple[int, ...] | None = field(default=None)

    @property
    def is_interior(self) -> bool:
        return self.kind == "interior"


def _classify_table(table: CgfTable, x, tol=None) -> DomainLocation:
    x = np.asarray(x, dtype=float)
    if x.shape != (table.dim,):
        raise ValidationError(f"point must have length {table.dim}, got shape {x.shape}")
    atol = table.boundary_tol(tol)
    sums = table.subset_sums(x)
    slack_lo = sums - table.subs_lower
    slack_hi = table.subs_upper - sums
    margin = float(min(slack_lo.min(), slack_hi.min()))
    if margin < -atol:
        return DomainLocation(kind="exterior", margin=margin)
    faces = []
    for j, subset in enumerate(table.subsets):
        if abs(slack_lo[j]) <= atol:
            faces.append(Face(len(subset), subset, "lower"))
        if abs(slack_hi[j]) <= atol:
            faces.append(Face(len(subset), subset, "upper"))
    if not faces:
        return DomainLocation(kind="interior", margin=margin)
    faces.sort(key=lambda f: (f.l, f.side, f.subset))
    indicators = np.zeros((len(faces), table.dim))
    for r, f in enumerate(faces):
        indicators[r, list(f.subset)] = 1.0
    if np.linalg.matrix_rank(indicators, tol=1e-8) >= table.dim:
        return DomainLocation(
            kind="vertex", margin=margin, faces=tuple(faces),
            vertex_perm=_vertex_permutation(table, x),
        )
    return DomainLocation(kind="boundary", margin=margin, faces=tuple(faces))


def _vertex_permutation(table: CgfTable, x) -> tuple[int, ...]:
    """Match a vertex to the column-mean arrangement generating it.

    Returns pi with x_full[j] = col_means[pi[j]] (0-based, full length m).
    """
    x_full = np.append(x, table.col_means.sum() - float(np.sum(x)))
    order = np.argsort(x_full, kind="stable")
    pi = np.empty(table.m, dtype=int)
    pi[order] = np.arange(table.m)
    return tuple(int(v) for v in pi)


def _lambda_at_table(table: CgfTable, x, tol=None) -> float:
    if table.dim == 0:
        return 0.0
    loc = _classify_table(table, x, tol)
    if loc.kind == "exterior":
        return math.inf
    if loc.kind == "vertex":
        return table.log_nperm
    if loc.kind == "boundary":
        return _boundary_value(table, x, loc.faces[0], tol)
    res = table.solve(x, None, SOLVE_RTOL, MAX_ITER)
    if res.status != 0:
        # Interior by classification but beyond Newton reach: the point is
        # within solver resolution of the boundary; score conservatively.
        return math.inf
    return res.lam


def _boundary_value(table: CgfTable, x, face: Face, tol=None) -> float:
    l, subset, side = face
    x = np.asarray(x, dtype=float)
    comp = sorted(set(range(table.dim)) - set(subset))
    sub = sorted(subset)
    if side == "lower":
        t1 = table.lower_table(l)
        t2 = table.sub_table(l, table.m)
    else:
        t1 = table.upper_table(l)
        t2 = table.sub_table(0, table.m - l)
    lam1 = _lambda_at_table(t1, x[sub[: l - 1]], tol)
    lam2 = _lambda_at_table(t2, x[comp], tol)
    return lam1 + lam2 + math.log(math.comb(table.m, l))


# -- public surface (bound to sorted designs) --------------------------------


def classify(d: SortedDesign, x, tol: float | None = None) -> DomainLocation:
    """Locate x relative to the admissible polytope of the design.

    Checks, for every nonempty subset S of the reduced coordinates, that the
    subset sum lies between the matching partial sums of the sorted column
    means; equality within tol marks the face as active.
    """
    return _classify_table(table_for(d), x, tol)


def solve(d: SortedDesign, x, warm_start=None) -> SaddlepointSolution:
    """Solve kappa'(t) = x for interior x and return the statistic value.

    Raises DomainError when x is not strictly interior and NearBoundaryError
    (carrying the best iterate) when the iteration cap is hit.
    """
    x = np.asarray(x, dtype=float)
    table = table_for(d)
    loc = _classify_table(table, x)
    if not loc.is_interior:
        raise DomainError(
            f"point is {loc.kind}, not interior; boundary values come from the "
            "face decomposition (lambda_boundary / lambda_at)"
        )
    res = table.solve(x, warm_start, SOLVE_RTOL, MAX_ITER)
    sol = SaddlepointSolution(
        x=x, t=res.t, lam=res.lam, hess=res.hess,
        iterations=res.iters, residual=res.resid,
    )
    if res.status != 0:
        raise NearBoundaryError(
            f"Newton did not reach tolerance in {MAX_ITER} iterations "
            f"(residual {res.resid:.3e}); x sits within solver resolution of the boundary",
            best=sol,
        )
    return sol


def lambda_boundary(d: SortedDesign, x, face: Face | tuple, tol: float | None = None) -> float:
    """Statistic on a boundary face: lower sub-statistic + upper sub-statistic
    + log C(k, l). Recurses when x also sits on a boundary of a sub-polytope."""
    face = Face(face[0], tuple(face[1]), face[2])
    table = table_for(d)
    loc = _classify_table(table, x, tol)
    if face not in loc.faces:
        raise DomainError(f"face {face} is not active at the given point (location: {loc.kind})")
    return _boundary_value(table, x, face, tol)


def lambda_at(d: SortedDesign, x, tol: float | None = None) -> float:
    """Total statistic: interior solve, boundary decomposition, log k! at
    vertices, +inf outside the closed polytope."""
    return _lambda_at_table(table_for(d), np.asarray(x, dtype=float), tol)


def ray_boundary_radius(d: SortedDesign, direction) -> float:
    """Largest r >= 0 with r*direction inside the closed polytope."""
    direction = np.asarray(direction, dtype=float)
    table = table_for(d)
    if direction.shape != (table.dim,) or not np.any(direction):
        raise ValidationError("direction must be a nonzero vector of length k-1")
    if table.subs_upper.min() <= 0 or table.subs_lower.max() >= 0:
        raise DegenerateDesignError("admissible polytope has empty interior (tied/constant data)")
    sums = table.subset_sums(direction)
    radius = math.inf
    for sigma, lo, hi in zip(sums, table.subs_lower, table.subs_upper):
        if sigma > 0:
            radius = min(radius, hi / sigma)
        elif sigma < 0:
            radius = min(radius, lo / sigma)
    return float(radius)
