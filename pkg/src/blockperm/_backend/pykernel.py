"""Pure-numpy kernel: reference implementation of the hot numerical paths.

The compiled extension (Cython) mirrors this module's API and algorithms; the
two are interchangeable and selected at import time by `blockperm._backend`.

Status codes shared by both backends:
    0  converged
    1  iteration cap reached
    2  line search exhausted
    3  screened out as on/near the domain boundary (batch only)
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

ARMIJO_C = 1e-4
MAX_HALVINGS = 60
_POINT_CACHE_LIMIT = 50_000_000  # floats; beyond this, gather per block


class SolveResult(NamedTuple):
    t: np.ndarray
    lam: float
    resid: float
    iters: int
    status: int
    hess: np.ndarray


class CgfProblem:
    """Average log-sum-exp CGF over per-block point clouds.

    Either built from a (b, m) value matrix plus a (P, m-1) permutation-index
    table (points are gathered rows), or from an explicit (b, P, d) cloud.
    """

    def __init__(self, values=None, perm=None, cloud=None):
        if cloud is not None:
            self._pts = np.ascontiguousarray(cloud, dtype=float)
            self.b, self.P, self.d = self._pts.shape
            self._values = None
            self._perm = None
        else:
            values = np.ascontiguousarray(values, dtype=float)
            perm = np.ascontiguousarray(perm, dtype=np.int64)
            self.b = values.shape[0]
            self.P, self.d = perm.shape
            self._values = values
            self._perm = perm
            if self.b * self.P * self.d <= _POINT_CACHE_LIMIT:
                self._pts = np.ascontiguousarray(values[:, perm])
            else:
                self._pts = None
        self._logP = math.log(self.P)

    def _block_points(self, i):
        if self._pts is not None:
            return self._pts[i]
        return self._values[i, self._perm]

    def kappa(self, t) -> float:
        t = np.asarray(t, dtype=float)
        if self._pts is not None:
            z = self._pts @ t
            zmax = z.max(axis=1)
            kap = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
            return float(kap.mean() - self._logP)
        total = 0.0
        for i in range(self.b):
            z = self._block_points(i) @ t
            zmax = z.max()
            total += zmax + math.log(np.exp(z - zmax).sum())
        return total / self.b - self._logP

    def kappa_full(self, t):
        """kappa, gradient, and Hessian in one pass."""
        t = np.asarray(t, dtype=float)
        if self._pts is not None:
            pts = self._pts
            z = pts @ t
            zmax = z.max(axis=1)
            w = np.exp(z - zmax[:, None])
            s = w.sum(axis=1)
            kap = float((zmax + np.log(s)).mean() - self._logP)
            gb = (w[:, :, None] * pts).sum(axis=1) / s[:, None]
            hb = np.einsum("bp,bpi,bpj->bij", w, pts, pts) / s[:, None, None]
            hb -= gb[:, :, None] * gb[:, None, :]
            return kap, gb.mean(axis=0), hb.mean(axis=0)
        kap = 0.0
        g = np.zeros(self.d)
        h = np.zeros((self.d, self.d))
        for i in range(self.b):
            pts = self._block_points(i)
            z = pts @ t
            zmax = z.max()
            w = np.exp(z - zmax)
            s = w.sum()
            gi = (w @ pts) / s
            kap += zmax + math.log(s)
            g += gi
            h += (pts.T * w) @ pts / s - np.outer(gi, gi)
        return kap / self.b - self._logP, g / self.b, h / self.b

    # -- saddlepoint solve ------------------------------------------------

    def solve(self, x, t0=None, rtol=1e-10, max_iter=200) -> SolveResult:
        """Maximize t.x - kappa(t) by damped Newton with Armijo backtracking.

        Converged when ||kappa'(t) - x|| <= rtol * (1 + ||x||).
        """
        x = np.asarray(x, dtype=float)
        t = np.zeros(self.d) if t0 is None else np.array(t0, dtype=float)
        tol = rtol * (1.0 + float(np.linalg.norm(x)))
        if self.d == 1:
            return self._solve_1d(float(x[0]), float(t[0]), tol, max_iter)

        kap, kgrad, hess = self.kappa_full(t)
        fval = float(t @ x) - kap
        iters = 0
        while True:
            grad = x - kgrad
            resid = float(np.linalg.norm(grad))
            if resid <= tol:
                return SolveResult(t, fval, resid, iters, 0, hess)
            if iters >= max_iter:
                return SolveResult(t, fval, resid, iters, 1, hess)
            iters += 1
            p = self._newton_direction(hess, grad)
            slope = float(grad @ p)
            if slope <= 1e-13 * (1.0 + abs(fval)):
                # Quadratic basin: improvements are below float noise on f,
                # so take the undamped step.
                t = t + p
            else:
                alpha = 1.0
                accepted = False
                for _ in range(MAX_HALVINGS):
                    t_try = t + alpha * p
                    f_try = float(t_try @ x) - self.kappa(t_try)
                    if f_try >= fval + ARMIJO_C * alpha * slope:
                        accepted = True
                        break
                    alpha *= 0.5
                if not accepted:
                    return SolveResult(t, fval, resid, iters, 2, hess)
                t = t_try
            kap, kgrad, hess = self.kappa_full(t)
            fval = float(t @ x) - kap

    @staticmethod
    def _newton_direction(hess, grad):
        d = hess.shape[0]
        ridge = 0.0
        scale = max(float(np.trace(hess)) / d, 1e-300)
        for _ in range(10):
            try:
                c = np.linalg.cholesky(hess + ridge * np.eye(d))
                y = np.linalg.solve(c, grad)
                return np.linalg.solve(c.T, y)
            except np.linalg.LinAlgError:
                ridge = 1e-12 * scale if ridge == 0.0 else ridge * 100.0
        return grad / scale  # last resort: gradient step

    def _solve_1d(self, x, t, tol, max_iter) -> SolveResult:
        """Newton safeguarded by bisection on the decreasing g(t) = x - kappa'(t)."""
        lo, hi = -math.inf, math.inf
        iters = 0
        while True:
            kap, kgrad, hess = self.kappa_full(np.array([t]))
            grad = x - float(kgrad[0])
            h = float(hess[0, 0])
            lam = t * x - kap
            if abs(grad) <= tol:
                return SolveResult(np.array([t]), lam, abs(grad), iters, 0, hess)
            if iters >= max_iter:
                return SolveResult(np.array([t]), lam, abs(grad), iters, 1, hess)
            iters += 1
            if grad > 0:
                lo = max(lo, t)
            else:
                hi = min(hi, t)
            t_new = t + grad / h if h > 0 else math.nan
            if not (lo < t_new < hi) or not math.isfinite(t_new):
                if math.isfinite(lo) and math.isfinite(hi):
                    t_new = 0.5 * (lo + hi)
                elif math.isfinite(lo):
                    t_new = 2.0 * lo if lo > 0 else 1.0
                else:
                    t_new = 2.0 * hi if hi < 0 else -1.0
            t = t_new

    # -- batch statistic evaluation ---------------------------------------

    def lambda_batch(self, xs, subs_idx, subs_ptr, lower, upper, btol,
                     rtol=1e-10, max_iter=200):
        """Statistic value for each row of xs, with warm-started solves.

        Points within btol of a facet (or outside) score +inf with status 3;
        failed solves score +inf with the solver status. Facets are encoded
        as CSR subset-index lists with lower/upper sum bounds.
        """
        xs = np.asarray(xs, dtype=float)
        n = xs.shape[0]
        n_sub = len(lower)
        sums = np.empty((n, n_sub))
        for j in range(n_sub):
            idx = subs_idx[subs_ptr[j]:subs_ptr[j + 1]]
            sums[:, j] = xs[:, idx].sum(axis=1)
        margin = np.minimum(sums - lower, upper - sums).min(axis=1)

        lam = np.empty(n)
        status = np.zeros(n, dtype=np.int64)
        warm = np.zeros(self.d)
        for i in range(n):
            if margin[i] <= btol:
                lam[i] = math.inf
                status[i] = 3
                continue
            res = self.solve(xs[i], warm, rtol, max_iter)
            if res.status != 0:
                res = self.solve(xs[i], None, rtol, max_iter)
            if res.status == 0:
                lam[i] = res.lam
                warm = res.t
            else:
                lam[i] = math.inf
                status[i] = res.status
        return lam, status
