"""Shared numerical kernel: symmetric linear algebra, tail special functions,
and reproducible random streams.

Symmetric matrices are plain float64 ndarrays; operations validate the
symmetry contract instead of wrapping arrays in a dedicated class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DegenerateDesignError, ValidationError

SYM_RTOL = 1e-12
PD_RTOL = 1e-12

# Capacity of RngStream.child indices; child ids are base-_CHILD_CAP digits
# appended to the parent id, so sibling trees never collide.
_CHILD_CAP = 1 << 21


def _check_symmetric(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValidationError(f"expected a square matrix, got shape {m.shape}")
    scale = np.abs(m).max()
    if scale > 0 and np.abs(m - m.T).max() > SYM_RTOL * scale:
        raise ValidationError("matrix is not symmetric within 1e-12 relative")
    return m


def sym_eigen(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns eigenvalues in ascending order and the orthonormal eigenvector
    matrix V with m = V diag(w) V.T.
    """
    m = _check_symmetric(m)
    w, v = np.linalg.eigh(m)
    return w, v


def sqrt_and_det(m: np.ndarray) -> tuple[np.ndarray, float]:
    """Symmetric square root and log-determinant of a positive definite matrix.

    Raises DegenerateDesignError when the smallest eigenvalue falls below
    1e-12 times the largest (tied or constant data).
    """
    w, v = sym_eigen(m)
    if w[-1] <= 0 or w[0] <= PD_RTOL * w[-1]:
        raise DegenerateDesignError(
            f"matrix is not positive definite (eigenvalue range [{w[0]:.3e}, {w[-1]:.3e}])"
        )
    root = (v * np.sqrt(w)) @ v.T
    return 0.5 * (root + root.T), float(np.log(w).sum())


def chi_sq_survival(x: float, df: int) -> float:
    """P(chi2_df >= x) via the regularized upper incomplete gamma function."""
    if x < 0:
        raise ValidationError(f"chi-squared argument must be >= 0, got {x}")
    if df < 1:
        raise ValidationError(f"degrees of freedom must be >= 1, got {df}")
    return float(special.chdtrc(df, x))


def f_survival(f: float, d1: int, d2: int) -> float:
    """P(F_{d1,d2} >= f) via the regularized incomplete beta function."""
    if f < 0:
        raise ValidationError(f"F argument must be >= 0, got {f}")
    if d1 < 1 or d2 < 1:
        raise ValidationError(f"degrees of freedom must be >= 1, got ({d1}, {d2})")
    return float(special.fdtrc(d1, d2, f))


def sphere_sample(dim: int, n: int, rng: "RngStream | np.random.Generator") -> np.ndarray:
    """n points uniform on the unit sphere in R^dim (normalized Gaussians).

    For dim == 1 the sphere degenerates to {-1, +1}.
    """
    if dim < 1:
        raise ValidationError(f"dimension must be >= 1, got {dim}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    z = gen.standard_normal((n, dim))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    # A norm of exactly zero has probability zero; resample defensively.
    while np.any(norms == 0.0):
        bad = norms[:, 0] == 0.0
        z[bad] = gen.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(z, axis=1, keepdims=True)
    return z / norms


def sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere in R^dim (2 when dim == 1)."""
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


@dataclass(frozen=True)
class RngStream:
    """Named, reproducible random stream.

    Identical (master_seed, stream_id) pairs produce identical sequences on
    every platform; distinct stream_ids give statistically independent
    streams (PCG64 seeded through SeedSequence spawn keys). Instances are
    cheap; ``generator()`` restarts the stream from the beginning.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.stream_id < 0:
            raise ValidationError("stream_id must be non-negative")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, index: int) -> "RngStream":
        """Derived stream; index must be < 2**21. Children of distinct
        parents never collide."""
        if not 0 <= index < _CHILD_CAP:
            raise ValidationError(f"child index out of range: {index}")
        return RngStream(self.master_seed, self.stream_id * _CHILD_CAP + index + 1)
