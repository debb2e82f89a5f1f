# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel. Mirrors the API and algorithms of pykernel exactly;
see that module for the semantics and status codes."""

from libc.math cimport exp, log, sqrt, fabs, INFINITY, NAN, isfinite

import numpy as np

from blockperm._backend.pykernel import SolveResult

cdef enum:
    MAXD = 15
    MAXD2 = 225

cdef double ARMIJO_C = 1e-4
cdef int MAX_HALVINGS = 60


cdef int _chol_solve(const double* h, const double* rhs, double* out, Py_ssize_t d, double ridge) noexcept nogil:
    """Solve (h + ridge*I) out = rhs by Cholesky; 0 on success, 1 if not SPD."""
    cdef double lmat[MAXD2]
    cdef double y[MAXD]
    cdef Py_ssize_t i, j, m
    cdef double s
    for i in range(d):
        for j in range(d):
            lmat[i * d + j] = h[i * d + j]
        lmat[i * d + i] += ridge
    for i in range(d):
        for j in range(i + 1):
            s = lmat[i * d + j]
            for m in range(j):
                s -= lmat[i * d + m] * lmat[j * d + m]
            if i == j:
                if s <= 0.0:
                    return 1
                lmat[i * d + i] = sqrt(s)
            else:
                lmat[i * d + j] = s / lmat[j * d + j]
    for i in range(d):
        s = rhs[i]
        for m in range(i):
            s -= lmat[i * d + m] * y[m]
        y[i] = s / lmat[i * d + i]
    for i in range(d - 1, -1, -1):
        s = y[i]
        for m in range(i + 1, d):
            s -= lmat[m * d + i] * out[m]
        out[i] = s / lmat[i * d + i]
    return 0


cdef class CgfProblem:
    cdef const double[:, ::1] values
    cdef const long long[:, ::1] perm
    cdef const double[:, :, ::1] cloud
    cdef bint use_cloud
    cdef readonly Py_ssize_t b, P, d
    cdef double logP

    def __init__(self, values=None, perm=None, cloud=None):
        if cloud is not None:
            self.cloud = np.ascontiguousarray(cloud, dtype=np.float64)
            self.use_cloud = True
            self.b = self.cloud.shape[0]
            self.P = self.cloud.shape[1]
            self.d = self.cloud.shape[2]
        else:
            self.values = np.ascontiguousarray(values, dtype=np.float64)
            self.perm = np.ascontiguousarray(perm, dtype=np.int64)
            self.use_cloud = False
            self.b = self.values.shape[0]
            self.P = self.perm.shape[0]
            self.d = self.perm.shape[1]
        if self.d < 1 or self.d > MAXD:
            raise ValueError(f"kernel supports 1 <= d <= {MAXD}, got {self.d}")
        self.logP = log(<double> self.P)

    cdef inline double _pt(self, Py_ssize_t i, Py_ssize_t p, Py_ssize_t j) noexcept nogil:
        if self.use_cloud:
            return self.cloud[i, p, j]
        return self.values[i, self.perm[p, j]]

    cdef double _kappa_c(self, const double* t) noexcept nogil:
        cdef Py_ssize_t i, p, j
        cdef double total = 0.0, z, zmax, s
        for i in range(self.b):
            zmax = -INFINITY
            for p in range(self.P):
                z = 0.0
                for j in range(self.d):
                    z += self._pt(i, p, j) * t[j]
                if z > zmax:
                    zmax = z
            s = 0.0
            for p in range(self.P):
                z = 0.0
                for j in range(self.d):
                    z += self._pt(i, p, j) * t[j]
                s += exp(z - zmax)
            total += zmax + log(s)
        return total / self.b - self.logP

    cdef double _kappa_full_c(self, const double* t, double* g, double* h) noexcept nogil:
        cdef Py_ssize_t i, p, j, m, d = self.d
        cdef double total = 0.0, z, zmax, s, w, invb
        cdef double a[MAXD]
        cdef double gi[MAXD]
        cdef double hi[MAXD2]
        for j in range(d):
            g[j] = 0.0
            for m in range(d):
                h[j * d + m] = 0.0
        for i in range(self.b):
            zmax = -INFINITY
            for p in range(self.P):
                z = 0.0
                for j in range(d):
                    z += self._pt(i, p, j) * t[j]
                if z > zmax:
                    zmax = z
            s = 0.0
            for j in range(d):
                gi[j] = 0.0
                for m in range(j, d):
                    hi[j * d + m] = 0.0
            for p in range(self.P):
                z = 0.0
                for j in range(d):
                    a[j] = self._pt(i, p, j)
                    z += a[j] * t[j]
                w = exp(z - zmax)
                s += w
                for j in range(d):
                    gi[j] += w * a[j]
                    for m in range(j, d):
                        hi[j * d + m] += w * a[j] * a[m]
            total += zmax + log(s)
            for j in range(d):
                gi[j] /= s
            for j in range(d):
                g[j] += gi[j]
                for m in range(j, d):
                    h[j * d + m] += hi[j * d + m] / s - gi[j] * gi[m]
        invb = 1.0 / self.b
        for j in range(d):
            g[j] *= invb
            for m in range(j, d):
                h[j * d + m] *= invb
                h[m * d + j] = h[j * d + m]
        return total * invb - self.logP

    cdef int _solve_c(self, const double* x, double* t, double rtol, int max_iter,
                      double* out_lam, double* out_resid, int* out_iters,
                      double* out_hess) noexcept nogil:
        cdef Py_ssize_t j, d = self.d
        cdef double g[MAXD]
        cdef double grad[MAXD]
        cdef double step[MAXD]
        cdef double ttry[MAXD]
        cdef double kap, fval, ftry, resid, slope, alpha, tol, ridge, scale, xnorm
        cdef int iters = 0, attempt, ok, st
        xnorm = 0.0
        for j in range(d):
            xnorm += x[j] * x[j]
        tol = rtol * (1.0 + sqrt(xnorm))
        if d == 1:
            return self._solve_1d_c(x[0], t, tol, max_iter, out_lam, out_resid, out_iters, out_hess)
        kap = self._kappa_full_c(t, g, out_hess)
        fval = -kap
        for j in range(d):
            fval += t[j] * x[j]
        while True:
            resid = 0.0
            for j in range(d):
                grad[j] = x[j] - g[j]
                resid += grad[j] * grad[j]
            resid = sqrt(resid)
            if resid <= tol:
                out_lam[0] = fval
                out_resid[0] = resid
                out_iters[0] = iters
                return 0
            if iters >= max_iter:
                out_lam[0] = fval
                out_resid[0] = resid
                out_iters[0] = iters
                return 1
            iters += 1
            scale = 0.0
            for j in range(d):
                scale += out_hess[j * d + j]
            scale /= d
            if scale < 1e-300:
                scale = 1e-300
            ridge = 0.0
            ok = 1
            for attempt in range(10):
                if _chol_solve(out_hess, grad, step, d, ridge) == 0:
                    ok = 0
                    break
                ridge = 1e-12 * scale if ridge == 0.0 else ridge * 100.0
            if ok != 0:
                for j in range(d):
                    step[j] = grad[j] / scale
            slope = 0.0
            for j in range(d):
                slope += grad[j] * step[j]
            if slope <= 1e-13 * (1.0 + fabs(fval)):
                for j in range(d):
                    t[j] += step[j]
            else:
                alpha = 1.0
                ok = 0
                for attempt in range(MAX_HALVINGS):
                    for j in range(d):
                        ttry[j] = t[j] + alpha * step[j]
                    ftry = -self._kappa_c(ttry)
                    for j in range(d):
                        ftry += ttry[j] * x[j]
                    if ftry >= fval + ARMIJO_C * alpha * slope:
                        ok = 1
                        break
                    alpha *= 0.5
                if ok == 0:
                    out_lam[0] = fval
                    out_resid[0] = resid
                    out_iters[0] = iters
                    return 2
                for j in range(d):
                    t[j] = ttry[j]
            kap = self._kappa_full_c(t, g, out_hess)
            fval = -kap
            for j in range(d):
                fval += t[j] * x[j]

    cdef int _solve_1d_c(self, double x, double* t_inout, double tol, int max_iter,
                         double* out_lam, double* out_resid, int* out_iters,
                         double* out_hess) noexcept nogil:
        cdef double lo = -INFINITY, hi = INFINITY
        cdef double t = t_inout[0], kap, grad, h, tn
        cdef double g1[1]
        cdef int iters = 0
        while True:
            kap = self._kappa_full_c(&t, g1, out_hess)
            grad = x - g1[0]
            h = out_hess[0]
            out_lam[0] = t * x - kap
            if fabs(grad) <= tol or iters >= max_iter:
                t_inout[0] = t
                out_resid[0] = fabs(grad)
                out_iters[0] = iters
                return 0 if fabs(grad) <= tol else 1
            iters += 1
            if grad > 0:
                if t > lo:
                    lo = t
            else:
                if t < hi:
                    hi = t
            tn = t + grad / h if h > 0 else NAN
            if not (isfinite(tn) and lo < tn and tn < hi):
                if isfinite(lo) and isfinite(hi):
                    tn = 0.5 * (lo + hi)
                elif isfinite(lo):
                    tn = 2.0 * lo if lo > 0 else 1.0
                else:
                    tn = 2.0 * hi if hi < 0 else -1.0
            t = tn

    # -- python-facing API (same signatures as pykernel.CgfProblem) --------

    def kappa(self, t):
        cdef const double[::1] tv = np.ascontiguousarray(t, dtype=np.float64)
        return self._kappa_c(&tv[0])

    def kappa_full(self, t):
        cdef const double[::1] tv = np.ascontiguousarray(t, dtype=np.float64)
        g = np.empty(self.d)
        h = np.empty((self.d, self.d))
        cdef double[::1] gv = g
        cdef double[:, ::1] hv = h
        kap = self._kappa_full_c(&tv[0], &gv[0], &hv[0, 0])
        return kap, g, h

    def solve(self, x, t0=None, rtol=1e-10, max_iter=200):
        cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
        t = np.zeros(self.d) if t0 is None else np.array(t0, dtype=np.float64)
        cdef double[::1] tv = t
        h = np.empty((self.d, self.d))
        cdef double[:, ::1] hv = h
        cdef double lam = 0.0, resid = 0.0
        cdef int iters = 0, st
        st = self._solve_c(&xv[0], &tv[0], rtol, max_iter, &lam, &resid, &iters, &hv[0, 0])
        return SolveResult(t, lam, resid, iters, st, h)

    def lambda_batch(self, xs, subs_idx, subs_ptr, lower, upper, btol,
                     rtol=1e-10, max_iter=200):
        cdef const double[:, ::1] X = np.ascontiguousarray(xs, dtype=np.float64)
        cdef const long long[::1] sidx = np.ascontiguousarray(subs_idx, dtype=np.int64)
        cdef const long long[::1] sptr = np.ascontiguousarray(subs_ptr, dtype=np.int64)
        cdef const double[::1] lo = np.ascontiguousarray(lower, dtype=np.float64)
        cdef const double[::1] hi = np.ascontiguousarray(upper, dtype=np.float64)
        cdef Py_ssize_t n = X.shape[0], nsub = lo.shape[0], d = self.d
        cdef double btol_c = btol, rtol_c = rtol
        cdef int maxit = max_iter
        lam_arr = np.empty(n)
        status_arr = np.zeros(n, dtype=np.int64)
        cdef double[::1] lam = lam_arr
        cdef long long[::1] status = status_arr
        cdef double warm[MAXD]
        cdef double tloc[MAXD]
        cdef double xl[MAXD]
        cdef double hbuf[MAXD2]
        cdef double margin, ssum, slack, lamv, residv
        cdef Py_ssize_t i, j, sj, m
        cdef int st, itersv
        with nogil:
            for j in range(d):
                warm[j] = 0.0
            for i in range(n):
                margin = INFINITY
                for sj in range(nsub):
                    ssum = 0.0
                    for m in range(sptr[sj], sptr[sj + 1]):
                        ssum += X[i, sidx[m]]
                    slack = ssum - lo[sj]
                    if hi[sj] - ssum < slack:
                        slack = hi[sj] - ssum
                    if slack < margin:
                        margin = slack
                if margin <= btol_c:
                    lam[i] = INFINITY
                    status[i] = 3
                    continue
                for j in range(d):
                    xl[j] = X[i, j]
                    tloc[j] = warm[j]
                st = self._solve_c(xl, tloc, rtol_c, maxit, &lamv, &residv, &itersv, hbuf)
                if st != 0:
                    for j in range(d):
                        tloc[j] = 0.0
                    st = self._solve_c(xl, tloc, rtol_c, maxit, &lamv, &residv, &itersv, hbuf)
                if st == 0:
                    lam[i] = lamv
                    for j in range(d):
                        warm[j] = tloc[j]
                else:
                    lam[i] = INFINITY
                    status[i] = st
        return lam_arr, status_arr
