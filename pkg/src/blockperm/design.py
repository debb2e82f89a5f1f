"""Complete block design data model.

A design is a b x k matrix (b blocks, k treatments) with every row centered
to mean zero. The sorted companion matrix A (rows ascending) and its column
means drive everything downstream: the permutation CGF, the admissible
polytope, and the test statistics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path

import numpy as np

from .errors import CapacityError, ValidationError

MAX_TREATMENTS = 10  # k! per-block CGF terms; beyond 10 is out of desk scale

_PI_CACHE: dict[int, np.ndarray] = {}


@dataclass(frozen=True, eq=False)
class PermutationSet:
    """The k! index vectors (pi(1), ..., pi(k-1)), first k-1 entries of all
    permutations of {1..k}, stored 0-based in lexicographic order."""

    k: int
    elements: np.ndarray  # (k!, k-1) int64

    def __len__(self) -> int:
        return self.elements.shape[0]


@dataclass(frozen=True, eq=False)
class BlockDesign:
    """Row-centered observation matrix with per-row tie counts."""

    x: np.ndarray  # (b, k), each row sums to ~0
    b: int
    k: int
    tie_counts: tuple[int, ...] = field(default=(), compare=False)

    @property
    def has_ties(self) -> bool:
        return any(c > 0 for c in self.tie_counts)


@dataclass(frozen=True, eq=False)
class SortedDesign:
    """Rows of the design sorted ascending, with column means and total SS."""

    a: np.ndarray  # (b, k), rows ascending
    col_means: np.ndarray  # ascending, sums to 0
    total_ss: float
    b: int
    k: int


def make_design(raw) -> BlockDesign:
    """Validate a b x k matrix and center each row to mean zero."""
    x = np.asarray(raw, dtype=float)
    if x.ndim != 2:
        raise ValidationError(f"expected a 2-d matrix, got {x.ndim} dimensions")
    b, k = x.shape
    if b < 2 or k < 2:
        raise ValidationError(f"need at least 2 blocks and 2 treatments, got {b}x{k}")
    if k > MAX_TREATMENTS:
        raise CapacityError(
            f"k={k} treatments exceed the k<={MAX_TREATMENTS} cap ({math.factorial(k)} CGF terms per block)"
        )
    if not np.all(np.isfinite(x)):
        i, j = np.argwhere(~np.isfinite(x))[0]
        raise ValidationError(f"non-finite entry at block {i + 1}, treatment {j + 1}")
    centered = x - x.mean(axis=1, keepdims=True)
    ties = tuple(int(k - np.unique(row).size) for row in centered)
    return BlockDesign(x=centered, b=b, k=k, tie_counts=ties)


def sort_design(d: BlockDesign) -> SortedDesign:
    """Sorted matrix A, its column means, and the total sum of squares."""
    a = np.sort(d.x, axis=1)
    col_means = a.mean(axis=0)
    return SortedDesign(
        a=np.ascontiguousarray(a),
        col_means=col_means,
        total_ss=float((a * a).sum()),
        b=d.b,
        k=d.k,
    )


def reduced_means(d: BlockDesign) -> np.ndarray:
    """Column means of the first k-1 treatments (the k-th is their negative sum)."""
    return d.x.mean(axis=0)[: d.k - 1]


def enumerate_pi(k: int) -> PermutationSet:
    """All k! vectors of the first k-1 entries of permutations of {1..k}."""
    return PermutationSet(k=k, elements=perm_prefix_table(k))


def perm_prefix_table(m: int) -> np.ndarray:
    """(m!, m-1) table of permutation prefixes, 0-based, lexicographic; cached."""
    if m < 2:
        raise ValidationError(f"need at least 2 elements to permute, got {m}")
    if m > MAX_TREATMENTS:
        raise CapacityError(f"m={m} exceeds the m<={MAX_TREATMENTS} enumeration cap")
    tab = _PI_CACHE.get(m)
    if tab is None:
        tab = np.array([p[: m - 1] for p in permutations(range(m))], dtype=np.int64)
        tab.setflags(write=False)
        _PI_CACHE[m] = tab
    return tab


def load_csv(path) -> np.ndarray:
    """Read a design matrix: one row per block, k numeric columns, optional
    header row. Decimal points only, no thousands separators."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    rows = [row for row in csv.reader(text.splitlines()) if any(cell.strip() for cell in row)]
    if not rows:
        raise ValidationError(f"{path}: no data rows")

    def parse_row(row, lineno):
        vals = []
        for j, cell in enumerate(row):
            try:
                vals.append(float(cell))
            except ValueError:
                raise ValidationError(
                    f"{path}: row {lineno}, column {j + 1}: not a number: {cell!r}"
                ) from None
        return vals

    def is_numeric(row):
        try:
            [float(cell) for cell in row]
            return True
        except ValueError:
            return False

    start = 0 if is_numeric(rows[0]) else 1  # skip an optional header row
    if start == len(rows):
        raise ValidationError(f"{path}: header but no data rows")
    width = len(rows[start])
    data = []
    for i in range(start, len(rows)):
        if len(rows[i]) != width:
            raise ValidationError(
                f"{path}: row {i + 1} has {len(rows[i])} columns, expected {width}"
            )
        data.append(parse_row(rows[i], i + 1))
    return np.array(data, dtype=float)
