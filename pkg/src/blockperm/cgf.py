"""Permutation cumulant generating function.

kappa(t) averages, over blocks, the log mean of exp(t . a_pi) across all
within-block permutations; evaluation returns value, gradient, and Hessian
jointly (the Newton solver always needs all three). Restricted variants over
the lowest or highest value columns support the boundary decomposition of
the statistic.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ._backend import CgfProblem, SolveResult
from .design import SortedDesign, perm_prefix_table
from .errors import ValidationError

BOUNDARY_RTOL = 1e-9  # a point this close to a facet (relative) counts as on it


@dataclass(frozen=True, eq=False)
class TiltPoint:
    """CGF evaluation at a tilt vector: value, gradient, Hessian."""

    t: np.ndarray
    kappa: float
    grad: np.ndarray
    hess: np.ndarray


class CgfTable:
    """Evaluation surface for one (b, m) table of per-row ascending values.

    The top-level design uses the full sorted matrix A; boundary recursion
    uses column slices of it. Facet data (subset index lists with lower and
    upper partial-sum bounds) lives here because both the classifier and the
    batch statistic share it.
    """

    def __init__(self, values: np.ndarray):
        values = np.ascontiguousarray(values, dtype=float)
        self.values = values
        self.b, self.m = values.shape
        self.dim = self.m - 1
        self.col_means = values.mean(axis=0)
        self.scale = float(np.abs(self.col_means).sum())
        self.log_nperm = math.lgamma(self.m + 1)
        if self.dim >= 1:
            self.perm = perm_prefix_table(self.m)
            self.problem = CgfProblem(values=values, perm=self.perm)
        else:
            self.perm = None
            self.problem = None
        self._init_facets()
        self._subcache: dict[tuple[int, int], CgfTable] = {}

    def _init_facets(self):
        # Partial sums of sorted column means: prefix[l] bounds subset sums
        # from below, suffix[l] from above, for any subset of size l.
        means = self.col_means
        prefix = np.concatenate([[0.0], np.cumsum(means)])
        suffix = np.concatenate([[0.0], np.cumsum(means[::-1])])
        subsets = []
        for size in range(1, self.dim + 1):
            subsets.extend(combinations(range(self.dim), size))
        self.subsets = subsets
        if subsets:
            self.subs_idx = np.array([i for s in subsets for i in s], dtype=np.int64)
            self.subs_ptr = np.cumsum([0] + [len(s) for s in subsets]).astype(np.int64)
            sizes = np.array([len(s) for s in subsets])
            self.subs_lower = prefix[sizes]
            self.subs_upper = suffix[sizes]
        else:
            self.subs_idx = np.zeros(0, dtype=np.int64)
            self.subs_ptr = np.zeros(1, dtype=np.int64)
            self.subs_lower = np.zeros(0)
            self.subs_upper = np.zeros(0)

    def boundary_tol(self, tol: float | None = None) -> float:
        if tol is None:
            return BOUNDARY_RTOL * max(self.scale, 1e-300)
        if tol < 0:
            raise ValidationError(f"tolerance must be >= 0, got {tol}")
        return tol

    # -- evaluation --------------------------------------------------------

    def kappa_full(self, t) -> tuple[float, np.ndarray, np.ndarray]:
        if self.dim == 0:
            return 0.0, np.zeros(0), np.zeros((0, 0))
        return self.problem.kappa_full(t)

    def kappa(self, t) -> float:
        if self.dim == 0:
            return 0.0
        return self.problem.kappa(t)

    def solve(self, x, t0=None, rtol=1e-10, max_iter=200) -> SolveResult:
        res = self.problem.solve(x, t0, rtol, max_iter)
        if res.status != 0 and t0 is not None:
            res = self.problem.solve(x, None, rtol, max_iter)
        return res

    def lambda_batch(self, xs, tol=None, rtol=1e-10, max_iter=200):
        """Statistic per row of xs; +inf for rows on/outside the boundary."""
        return self.problem.lambda_batch(
            xs, self.subs_idx, self.subs_ptr, self.subs_lower, self.subs_upper,
            self.boundary_tol(tol), rtol, max_iter,
        )

    def subset_sums(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.add.reduceat(x[self.subs_idx], self.subs_ptr[:-1])

    # -- restriction -------------------------------------------------------

    def sub_table(self, start: int, stop: int) -> "CgfTable":
        """CGF table over a contiguous column slice (rows stay ascending)."""
        key = (start, stop)
        tab = self._subcache.get(key)
        if tab is None:
            tab = CgfTable(self.values[:, start:stop])
            self._subcache[key] = tab
        return tab

    def lower_table(self, size: int) -> "CgfTable":
        return self.sub_table(0, size)

    def upper_table(self, size: int) -> "CgfTable":
        return self.sub_table(self.m - size, self.m)


_TABLE_CACHE: "weakref.WeakKeyDictionary[SortedDesign, CgfTable]" = weakref.WeakKeyDictionary()


def table_for(d: SortedDesign) -> CgfTable:
    tab = _TABLE_CACHE.get(d)
    if tab is None:
        tab = CgfTable(d.a)
        _TABLE_CACHE[d] = tab
    return tab


def kappa_eval(d: SortedDesign, t) -> TiltPoint:
    """kappa, kappa', kappa'' at tilt t for the full design."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.shape != (d.k - 1,):
        raise ValidationError(f"tilt must have length {d.k - 1}, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValidationError("tilt vector must be finite")
    kap, grad, hess = table_for(d).kappa_full(t)
    return TiltPoint(t=t, kappa=kap, grad=grad, hess=hess)


def restricted_kappa(d: SortedDesign, side: str, l: int, u) -> TiltPoint:
    """Restricted CGF: side='lower' permutes columns 1..l of A (the l
    smallest values per row, dimension l-1), side='upper' permutes columns
    l+1..k (dimension k-l-1). A dimension-0 restriction is identically 0."""
    if not 1 <= l <= d.k - 1:
        raise ValidationError(f"need 1 <= l <= k-1, got l={l}")
    if side == "lower":
        tab = table_for(d).lower_table(l)
    elif side == "upper":
        tab = table_for(d).sub_table(l, d.k)
    else:
        raise ValidationError(f"side must be 'lower' or 'upper', got {side!r}")
    u = np.atleast_1d(np.asarray(u, dtype=float)) if np.size(u) else np.zeros(0)
    if u.shape != (tab.dim,):
        raise ValidationError(f"tilt must have length {tab.dim}, got shape {u.shape}")
    kap, grad, hess = tab.kappa_full(u)
    return TiltPoint(t=u, kappa=kap, grad=grad, hess=hess)
