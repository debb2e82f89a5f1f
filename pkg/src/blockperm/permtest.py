"""Classical F statistic, permutation p-values (exact and Monte Carlo), and
the threshold-table production used by the accuracy experiments.

Monte Carlo resampling permutes each centered row independently and
uniformly. Work is split into fixed-size batches, one derived random stream
per batch, so results are byte-identical for any worker count. Resamples on
the domain boundary (or beyond Newton reach) score +inf for the tilted
statistic, which counts them as exceedances; solver totality makes this the
conservative convention.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cgf import table_for
from .design import BlockDesign, SortedDesign, perm_prefix_table, reduced_means, sort_design
from .errors import CapacityError, DegenerateDesignError, ValidationError
from .numerics import RngStream, f_survival
from .tail import DesignTailModel, approximate_tail

MC_BATCH = 16384
EXACT_BATCH = 65536
EXACT_CAP = 10_000_000
TIE_RTOL = 1e-9  # exceedance threshold slack so float-path noise cannot split ties

# Child-stream layout shared by mc_pvalue and tail_table.
_PERM_STREAMS = 0
_SPHERE_STREAMS = 1


@dataclass(frozen=True)
class PermutationTestResult:
    statistic_name: str
    observed: float
    p_value: float
    n_resamples: int
    method: str
    seed: int | None
    mc_standard_error: float
    n_boundary: int = 0
    n_failed: int = 0


def f_statistic(d: BlockDesign) -> float:
    """Treatment mean square over error mean square (rows already centered,
    so the block sum of squares is zero)."""
    total = float((d.x * d.x).sum())
    if total <= 0:
        raise DegenerateDesignError("design has zero total sum of squares")
    means = d.x.mean(axis=0)
    sstr = d.b * float((means * means).sum())
    sse = total - sstr
    if sse <= 1e-12 * total:
        raise DegenerateDesignError("zero error sum of squares (perfect treatment separation)")
    return (sstr / (d.k - 1)) / (sse / ((d.b - 1) * (d.k - 1)))


def u_to_f(u: float, b: int, k: int) -> float:
    """F-scale threshold matching the statistic-scale threshold u."""
    if u <= 0:
        raise ValidationError(f"threshold u must be positive, got {u}")
    return b * u * u / (k - 1)


def _resampled_means(x: np.ndarray, gen: np.random.Generator, n: int) -> np.ndarray:
    """Column means of n independent within-row permutations of x."""
    b, k = x.shape
    idx = np.argsort(gen.random((n, b, k)), axis=2)
    permuted = np.take_along_axis(np.broadcast_to(x, (n, b, k)), idx, axis=2)
    return permuted.mean(axis=1)


def _f_from_means(means: np.ndarray, total_ss: float, b: int, k: int) -> np.ndarray:
    """Batch F values from full column-mean vectors; SSE <= 0 maps to +inf."""
    sstr = b * (means * means).sum(axis=1)
    sse = total_ss - sstr
    ratio = (b - 1) * np.divide(sstr, sse, out=np.full_like(sse, math.inf), where=sse > 0)
    return np.where(sse > 0, ratio, math.inf)


def _f_from_reduced(reduced: np.ndarray, total_ss: float, b: int, k: int) -> np.ndarray:
    last = -reduced.sum(axis=1, keepdims=True)
    sstr = b * ((reduced * reduced).sum(axis=1) + last[:, 0] ** 2)
    sse = total_ss - sstr
    ratio = (b - 1) * np.divide(sstr, sse, out=np.full_like(sse, math.inf), where=sse > 0)
    return np.where(sse > 0, ratio, math.inf)


def _tie_threshold(observed: float) -> float:
    """Ties at the observed statistic count as exceedances; resampled and
    observed values of a tied outcome can differ by solver/summation noise,
    so the comparison threshold sits just below the observed value."""
    if not math.isfinite(observed):
        return observed
    return observed - TIE_RTOL * (1.0 + abs(observed))


def _batch_sizes(n: int, batch: int) -> list[int]:
    sizes = [batch] * (n // batch)
    if n % batch:
        sizes.append(n % batch)
    return sizes


def _map_batches(worker, sizes, threads):
    if threads <= 1:
        return [worker(j, s) for j, s in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(worker, range(len(sizes)), sizes))


def observed_lambda(d: BlockDesign, sorted_d: SortedDesign | None = None) -> tuple[float, int]:
    """Statistic at the observed reduced means, scored exactly like a
    resample (+inf when on the boundary); returns (value, status)."""
    sorted_d = sorted_d or sort_design(d)
    table = table_for(sorted_d)
    lam, status = table.lambda_batch(reduced_means(d)[None, :])
    return float(lam[0]), int(status[0])


def mc_pvalue(d: BlockDesign, statistic: str, n_resamples: int,
              rng: RngStream, threads: int = 1) -> PermutationTestResult:
    """Monte Carlo permutation p-value with the add-one estimator
    (#exceedances + 1) / (n + 1); ties count as exceedances."""
    statistic = statistic.lower()
    if statistic not in ("lambda", "f"):
        raise ValidationError(f"statistic must be 'lambda' or 'f', got {statistic!r}")
    if n_resamples < 1:
        raise ValidationError("need at least one resample")
    sorted_d = sort_design(d)
    table = table_for(sorted_d)
    total_ss = sorted_d.total_ss
    if statistic == "f":
        observed = f_statistic(d)
    else:
        observed, _ = observed_lambda(d, sorted_d)
    threshold = _tie_threshold(observed)
    perm_rng = rng.child(_PERM_STREAMS)

    def worker(j: int, size: int):
        gen = perm_rng.child(j).generator()
        means = _resampled_means(d.x, gen, size)
        if statistic == "f":
            vals = _f_from_means(means, total_ss, d.b, d.k)
            return int((vals >= threshold).sum()), 0, 0
        lam, status = table.lambda_batch(means[:, : d.k - 1])
        return (
            int((lam >= threshold).sum()),
            int((status == 3).sum()),
            int(((status != 0) & (status != 3)).sum()),
        )

    parts = _map_batches(worker, _batch_sizes(n_resamples, MC_BATCH), threads)
    count = sum(p[0] for p in parts)
    n_boundary = sum(p[1] for p in parts)
    n_failed = sum(p[2] for p in parts)
    phat = count / n_resamples
    return PermutationTestResult(
        statistic_name=statistic,
        observed=observed,
        p_value=(count + 1) / (n_resamples + 1),
        n_resamples=n_resamples,
        method="monte_carlo",
        seed=rng.master_seed,
        mc_standard_error=math.sqrt(phat * (1.0 - phat) / n_resamples),
        n_boundary=n_boundary,
        n_failed=n_failed,
    )


def exact_pvalue(d: BlockDesign, statistic: str) -> PermutationTestResult:
    """Full enumeration over all (k!)^b block-permutation combinations."""
    statistic = statistic.lower()
    if statistic not in ("lambda", "f"):
        raise ValidationError(f"statistic must be 'lambda' or 'f', got {statistic!r}")
    n_perm = math.factorial(d.k)
    total = n_perm ** d.b
    if total > EXACT_CAP:
        raise CapacityError(
            f"(k!)^b = {total} outcomes exceed the exact-enumeration cap of {EXACT_CAP}"
        )
    sorted_d = sort_design(d)
    table = table_for(sorted_d)
    prefix = perm_prefix_table(d.k)
    blocks = [d.x[i, prefix] for i in range(d.b)]  # (P, k-1) each

    def chunk_reduced(ids: np.ndarray) -> np.ndarray:
        acc = np.zeros((len(ids), d.k - 1))
        for i in range(d.b):
            acc += blocks[i][(ids // n_perm**i) % n_perm]
        return acc / d.b

    def chunk_stats(reduced: np.ndarray):
        if statistic == "f":
            return _f_from_reduced(reduced, sorted_d.total_ss, d.b, d.k), None
        return table.lambda_batch(reduced)

    observed_stats, _ = chunk_stats(chunk_reduced(np.zeros(1, dtype=np.int64)))
    observed = float(observed_stats[0])
    threshold = _tie_threshold(observed)
    count = 0
    n_boundary = 0
    for start in range(0, total, EXACT_BATCH):
        ids = np.arange(start, min(start + EXACT_BATCH, total), dtype=np.int64)
        vals, status = chunk_stats(chunk_reduced(ids))
        count += int((vals >= threshold).sum())
        if status is not None:
            n_boundary += int((status == 3).sum())
    return PermutationTestResult(
        statistic_name=statistic,
        observed=observed,
        p_value=count / total,
        n_resamples=total,
        method="exact",
        seed=None,
        mc_standard_error=0.0,
        n_boundary=n_boundary,
    )


@dataclass(frozen=True)
class TailTableConfig:
    n_resamples: int = 100_000
    n_sphere: int = 100
    quadrature: str = "mc"
    rule_level: int = 24
    eps: float = 1e-3
    threads: int = 1


@dataclass(frozen=True)
class TailTable:
    u_values: tuple[float, ...]
    rows: dict[str, tuple]
    ses: dict[str, tuple]
    notes: dict[str, str] = field(default_factory=dict)
    diagnostics: dict[str, object] = field(default_factory=dict)


TAIL_ROW_ORDER = ("mc_f", "f", "mc_lambda", "sp_lr", "sp_bn")


def tail_table(d: BlockDesign, u_values, rng: RngStream,
               config: TailTableConfig | None = None,
               sp_model=None) -> TailTable:
    """Exceedance table over the threshold grid: Monte Carlo rows for both
    statistics, the F-distribution row, and both saddlepoint rows.

    Cells whose computation fails (for instance a threshold too close to the
    admissibility cap) are NaN, with the reason recorded in `notes`."""
    config = config or TailTableConfig()
    u_values = tuple(float(u) for u in u_values)
    if not u_values or any(u <= 0 for u in u_values):
        raise ValidationError("threshold grid must contain positive values")
    sorted_d = sort_design(d)
    table = table_for(sorted_d)
    f_thresholds = np.array([u_to_f(u, d.b, d.k) for u in u_values])
    lam_thresholds = np.array([0.5 * u * u for u in u_values])
    perm_rng = rng.child(_PERM_STREAMS)

    def worker(j: int, size: int):
        gen = perm_rng.child(j).generator()
        means = _resampled_means(d.x, gen, size)
        fvals = _f_from_means(means, sorted_d.total_ss, d.b, d.k)
        lam, status = table.lambda_batch(means[:, : d.k - 1])
        return (
            (fvals[:, None] >= f_thresholds).sum(axis=0),
            (lam[:, None] >= lam_thresholds).sum(axis=0),
            int((status == 3).sum()),
            int(((status != 0) & (status != 3)).sum()),
        )

    parts = _map_batches(worker, _batch_sizes(config.n_resamples, MC_BATCH), config.threads)
    count_f = np.sum([p[0] for p in parts], axis=0)
    count_lam = np.sum([p[1] for p in parts], axis=0)
    n_boundary = sum(p[2] for p in parts)
    n_failed = sum(p[3] for p in parts)
    n = config.n_resamples
    mc_f = count_f / n
    mc_lam = count_lam / n

    model = sp_model if sp_model is not None else DesignTailModel(sorted_d)
    sp_lr, sp_bn, se_lr, se_bn, g_vals, g_ses = [], [], [], [], [], []
    notes: dict[str, str] = {}
    clamped = 0
    for ui, u in enumerate(u_values):
        try:
            approx = approximate_tail(
                model, u, config.n_sphere, rng.child(_SPHERE_STREAMS).child(ui),
                config.quadrature, config.eps, config.rule_level,
            )
        except Exception as exc:  # cell-level failure, table survives
            notes[f"u={u:g}"] = f"{type(exc).__name__}: {exc}"
            sp_lr.append(math.nan)
            sp_bn.append(math.nan)
            se_lr.append(math.nan)
            se_bn.append(math.nan)
            g_vals.append(math.nan)
            g_ses.append(math.nan)
            continue
        sp_lr.append(approx.p_lr)
        sp_bn.append(approx.p_bn)
        se_lr.append(approx.se_lr)
        se_bn.append(approx.se_bn)
        g_vals.append(approx.g)
        g_ses.append(approx.quadrature_se)
        clamped += int(approx.lr_clamped)

    def binom_se(phat):
        return tuple(math.sqrt(p * (1.0 - p) / n) for p in phat)

    rows = {
        "mc_f": tuple(mc_f),
        "f": tuple(f_survival(f, d.k - 1, (d.k - 1) * (d.b - 1)) for f in f_thresholds),
        "mc_lambda": tuple(mc_lam),
        "sp_lr": tuple(sp_lr),
        "sp_bn": tuple(sp_bn),
    }
    ses = {
        "mc_f": binom_se(mc_f),
        "mc_lambda": binom_se(mc_lam),
        "sp_lr": tuple(se_lr),
        "sp_bn": tuple(se_bn),
    }
    diagnostics = {
        "n_resamples": n,
        "boundary_resamples": n_boundary,
        "failed_solves": n_failed,
        "lr_clamped_cells": clamped,
        "g": tuple(g_vals),
        "g_se": tuple(g_ses),
    }
    return TailTable(u_values=u_values, rows=rows, ses=ses, notes=notes,
                     diagnostics=diagnostics)
