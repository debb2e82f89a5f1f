"""Error-model generators and the accuracy / power experiment harnesses.

Random-stream layout (all derived from one master seed):
    root.child(0).child(i)              design draw for replicate/outer index i
    root.child(1).child(i)              resampling + sphere streams for that design
    root.child(2).child(li).child(ri)   power study: level li, replicate ri
The layout makes `unconditional_accuracy` with one outer replicate reproduce
`accuracy_experiment`'s Monte Carlo F row exactly, and keeps every result a
pure function of (config, seed).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import permtest
from .design import BlockDesign, make_design, sort_design
from .errors import CapacityError, ValidationError
from .numerics import RngStream, f_survival
from .permtest import TailTable, TailTableConfig, mc_pvalue, observed_lambda, tail_table, u_to_f
from .tail import DesignTailModel, approximate_tail

FAMILIES = ("normal", "exponential", "exponential_squared", "uniform", "gamma")

_DESIGN_STREAMS = 0
_TABLE_STREAMS = 1
_POWER_STREAMS = 2

UNCONDITIONAL_CAP = 200_000_000  # total resamples across outer replicates
REPLICATE_BATCH = 200


@dataclass(frozen=True)
class ErrorModel:
    """I.i.d. error generator; location/scale default to the unit choices."""

    family: str
    shape: float | None = None
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown error family {self.family!r}; pick one of {FAMILIES}")
        if self.family == "gamma":
            if self.shape is None or self.shape <= 0:
                raise ValidationError("gamma family needs a positive shape parameter")
        if self.scale <= 0:
            raise ValidationError("scale must be positive")

    def draw(self, gen: np.random.Generator, size) -> np.ndarray:
        if self.family == "normal":
            raw = gen.standard_normal(size)
        elif self.family == "exponential":
            raw = gen.standard_exponential(size)
        elif self.family == "exponential_squared":
            raw = gen.standard_exponential(size) ** 2
        elif self.family == "uniform":
            raw = gen.random(size)
        else:
            raw = gen.standard_gamma(self.shape, size)
        return self.loc + self.scale * raw


def gen_design(model: ErrorModel, b: int, k: int, mu, rng: RngStream) -> BlockDesign:
    """Errors plus treatment effects mu (length k), row-centered."""
    mu = np.zeros(k) if mu is None else np.asarray(mu, dtype=float)
    if mu.shape != (k,):
        raise ValidationError(f"effect vector must have length {k}, got shape {mu.shape}")
    e = model.draw(rng.generator(), (b, k))
    return make_design(e + mu)


def effect_vector(k: int, c: float) -> np.ndarray:
    """-c on the first treatment, +c on the last, zero elsewhere."""
    mu = np.zeros(k)
    mu[0], mu[-1] = -c, c
    return mu


def default_effect_grid(k: int, c_values=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4)):
    """The power-study grid: one +-c pattern per level."""
    return [effect_vector(k, c) for c in c_values]


def effect_scale(mu) -> float:
    """Level label: half the squared effect norm (c^2 for the +-c pattern)."""
    mu = np.asarray(mu, dtype=float)
    return float((mu * mu).sum() / 2.0)


@dataclass(frozen=True)
class AccuracyResult:
    design: np.ndarray
    table: TailTable
    b: int
    k: int
    seed: int


def accuracy_experiment(model: ErrorModel, b: int, k: int, u_values,
                        n_mc: int = 100_000, n_sphere: int = 100,
                        seed: int = 0, quadrature: str = "mc",
                        eps: float = 1e-3, threads: int = 1) -> AccuracyResult:
    """Draw one design from the model and produce its threshold table."""
    root = RngStream(seed)
    design = gen_design(model, b, k, None, root.child(_DESIGN_STREAMS).child(0))
    config = TailTableConfig(n_resamples=n_mc, n_sphere=n_sphere,
                             quadrature=quadrature, eps=eps, threads=threads)
    table = tail_table(design, u_values, root.child(_TABLE_STREAMS).child(0), config)
    return AccuracyResult(design=design.x, table=table, b=b, k=k, seed=seed)


@dataclass(frozen=True)
class UnconditionalResult:
    u_values: tuple[float, ...]
    rows: dict[str, tuple]
    ses: dict[str, tuple]
    n_outer: int
    n_inner: int
    seed: int


def unconditional_accuracy(model: ErrorModel, b: int, k: int, u_values,
                           n_outer: int = 1000, n_inner: int = 100_000,
                           seed: int = 0, threads: int = 1,
                           progress=None) -> UnconditionalResult:
    """Average the Monte Carlo F tail proportions over fresh designs and set
    them against the F-distribution row. `progress(done, total)` is invoked
    after each outer-replicate batch."""
    if n_outer < 1 or n_inner < 1:
        raise ValidationError("replicate counts must be positive")
    if n_outer * n_inner > UNCONDITIONAL_CAP:
        raise CapacityError(
            f"n_outer * n_inner = {n_outer * n_inner} resamples exceed the "
            f"{UNCONDITIONAL_CAP} cap"
        )
    u_values = tuple(float(u) for u in u_values)
    root = RngStream(seed)
    thr = np.array([u_to_f(u, b, k) for u in u_values])

    def one_design(i: int) -> np.ndarray:
        design = gen_design(model, b, k, None, root.child(_DESIGN_STREAMS).child(i))
        total_ss = float((design.x * design.x).sum())
        perm_rng = root.child(_TABLE_STREAMS).child(i).child(permtest._PERM_STREAMS)
        counts = np.zeros(len(u_values), dtype=np.int64)
        for j, size in enumerate(permtest._batch_sizes(n_inner, permtest.MC_BATCH)):
            gen = perm_rng.child(j).generator()
            means = permtest._resampled_means(design.x, gen, size)
            fvals = permtest._f_from_means(means, total_ss, b, k)
            counts += (fvals[:, None] >= thr).sum(axis=0)
        return counts / n_inner

    props = []
    if threads <= 1:
        for start in range(0, n_outer, REPLICATE_BATCH):
            stop = min(start + REPLICATE_BATCH, n_outer)
            props.extend(one_design(i) for i in range(start, stop))
            if progress is not None:
                progress(stop, n_outer)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            for start in range(0, n_outer, REPLICATE_BATCH):
                stop = min(start + REPLICATE_BATCH, n_outer)
                props.extend(ex.map(one_design, range(start, stop)))
                if progress is not None:
                    progress(stop, n_outer)
    props = np.array(props)
    rows = {
        "e_mc_f": tuple(props.mean(axis=0)),
        "f": tuple(f_survival(u_to_f(u, b, k), k - 1, (k - 1) * (b - 1)) for u in u_values),
    }
    ses = {
        "e_mc_f": tuple(props.std(axis=0, ddof=1) / math.sqrt(n_outer)) if n_outer > 1
        else tuple(math.nan for _ in u_values),
    }
    return UnconditionalResult(u_values=u_values, rows=rows, ses=ses,
                               n_outer=n_outer, n_inner=n_inner, seed=seed)


@dataclass(frozen=True)
class PowerRow:
    effect_scale: float
    mu: tuple[float, ...]
    power_f: float
    power_lr: float
    power_bn: float
    se_f: float
    se_lr: float
    se_bn: float
    n_flagged: int


@dataclass(frozen=True)
class PowerResult:
    rows: tuple[PowerRow, ...]
    alpha: float
    n_replicates: int
    n_perm: int
    n_sphere: int
    seed: int
    diagnostics: dict = field(default_factory=dict)


def saddlepoint_pvalues(design: BlockDesign, n_sphere: int, rng: RngStream,
                        eps: float = 1e-3, quadrature: str = "mc") -> tuple[float, float, bool]:
    """Per-dataset saddlepoint p-values at the observed statistic.

    The observed level is u = sqrt(2 * stat). Levels at or above the
    admissibility cap are flagged and assigned the smallest computable tail
    (evaluated just inside the cap), so any sane test rejects them.
    """
    sorted_d = sort_design(design)
    lam_obs, _ = observed_lambda(design, sorted_d)
    cap = math.log(design.k)
    flagged = False
    if not math.isfinite(lam_obs) or lam_obs >= cap - eps:
        flagged = True
        u_obs = math.sqrt(2.0 * (cap - eps)) * (1.0 - 1e-9)
    elif lam_obs <= 1e-12:
        return 1.0, 1.0, False
    else:
        u_obs = math.sqrt(2.0 * lam_obs)
    model = DesignTailModel(sorted_d)
    approx = approximate_tail(model, u_obs, n_sphere, rng, quadrature, eps)
    return approx.p_lr, approx.p_bn, flagged


def power_experiment(model: ErrorModel, b: int, k: int, effects=None,
                     alpha: float = 0.05, n_replicates: int = 2000,
                     n_perm: int = 10_000, n_sphere: int = 100,
                     seed: int = 0, eps: float = 1e-3,
                     threads: int = 1, progress=None) -> PowerResult:
    """Rejection rates of the permutation F test and both saddlepoint tests
    across the treatment-effect grid. `progress(done, total)` is invoked
    after each replicate batch."""
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    effects = default_effect_grid(k) if effects is None else [np.asarray(m, float) for m in effects]
    root = RngStream(seed)
    rows = []
    flagged_total = 0
    total_reps = len(effects) * n_replicates
    done = 0
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    for li, mu in enumerate(effects):
        level_rng = root.child(_POWER_STREAMS).child(li)

        def one_rep(ri: int, mu=mu, level_rng=level_rng):
            base = level_rng.child(ri)
            design = gen_design(model, b, k, mu, base.child(0))
            p_f = mc_pvalue(design, "f", n_perm, base.child(1)).p_value
            p_lr, p_bn, flagged = saddlepoint_pvalues(design, n_sphere, base.child(2), eps)
            return (p_f <= alpha, p_lr <= alpha, p_bn <= alpha, flagged)

        outcomes = []
        for start in range(0, n_replicates, REPLICATE_BATCH):
            idx = range(start, min(start + REPLICATE_BATCH, n_replicates))
            if executor is None:
                outcomes.extend(one_rep(ri) for ri in idx)
            else:
                outcomes.extend(executor.map(one_rep, idx))
            done += len(idx)
            if progress is not None:
                progress(done, total_reps)
        counts = np.sum(np.array(outcomes, dtype=np.int64), axis=0)
        n_flagged = int(counts[3])
        flagged_total += n_flagged

        def rate_and_se(c: int) -> tuple[float, float]:
            rate = c / n_replicates
            return rate, math.sqrt(rate * (1.0 - rate) / n_replicates)

        pf, sef = rate_and_se(int(counts[0]))
        plr, selr = rate_and_se(int(counts[1]))
        pbn, sebn = rate_and_se(int(counts[2]))
        rows.append(PowerRow(
            effect_scale=effect_scale(mu), mu=tuple(float(v) for v in mu),
            power_f=pf, power_lr=plr, power_bn=pbn,
            se_f=sef, se_lr=selr, se_bn=sebn, n_flagged=n_flagged,
        ))
    if executor is not None:
        executor.shutdown()
    return PowerResult(
        rows=tuple(rows), alpha=alpha, n_replicates=n_replicates,
        n_perm=n_perm, n_sphere=n_sphere, seed=seed,
        diagnostics={"flagged_replicates": flagged_total},
    )
