"""Command-line interface.

Subcommands: `test` (p-values on CSV data), `tail` (threshold table),
`accuracy` / `power` (experiment harnesses driven by config files),
`domain` (admissible-polytope inspection), `bench` (kernel comparison).

Exit codes: 0 success, 2 input error, 3 capacity exceeded, 4 numerical
degeneracy. All randomness derives from --seed; reports are byte-identical
across reruns and thread counts.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND_NAME
from .design import load_csv, make_design, sort_design
from .errors import (
    BlockPermError,
    CapacityError,
    DegenerateDesignError,
    NumericalDegeneracyError,
    ValidationError,
)
from .numerics import RngStream
from .permtest import (
    TAIL_ROW_ORDER,
    TailTableConfig,
    exact_pvalue,
    f_statistic,
    mc_pvalue,
    observed_lambda,
    tail_table,
)
from .report import RunReport, table_csv, write_report
from .simulate import (
    ErrorModel,
    accuracy_experiment,
    effect_vector,
    power_experiment,
    saddlepoint_pvalues,
    unconditional_accuracy,
)
from .statistic import classify, lambda_at
from .cgf import table_for
from .tail import check_admissible, DesignTailModel

DEFAULT_GRID = "0.6,0.8,1.0,1.2,1.4"


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None,
                   help="master seed (default 0; experiment configs may carry their own)")
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("BLOCKPERM_THREADS", "1")),
                   help="worker threads; results are identical for any value")
    p.add_argument("--out", metavar="PATH", default=None,
                   help="write the JSON report here (table commands add a .csv sibling)")
    p.add_argument("--emit-timing", action="store_true",
                   help="include wall time in the JSON (breaks byte-identical reruns)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockperm",
        description="Permutation tests and saddlepoint tail approximations "
                    "for complete block designs",
    )
    parser.add_argument("--version", action="version", version=f"blockperm {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("test", help="run a test on a CSV design matrix")
    p.add_argument("input", help="CSV file: one row per block, k numeric columns")
    p.add_argument("--method", choices=["lr", "bn", "mc-lambda", "mc-f", "exact"],
                   default="lr", help="p-value method (default lr)")
    p.add_argument("--reps", type=int, default=100_000,
                   help="Monte Carlo resamples (default 100000)")
    p.add_argument("--sphere-samples", type=int, default=100,
                   help="sphere samples for the saddlepoint integral (default 100)")
    p.add_argument("--eps", type=float, default=1e-3, help="admissibility margin")
    _add_common(p)

    p = sub.add_parser("tail", help="threshold table for a CSV design matrix")
    p.add_argument("input")
    p.add_argument("--u-grid", default=DEFAULT_GRID, help=f"comma list (default {DEFAULT_GRID})")
    p.add_argument("--reps", type=int, default=100_000)
    p.add_argument("--sphere-samples", type=int, default=100)
    p.add_argument("--quadrature", choices=["mc", "deterministic"], default="mc")
    p.add_argument("--eps", type=float, default=1e-3)
    _add_common(p)

    p = sub.add_parser("accuracy", help="accuracy experiment from a config file")
    p.add_argument("--config", required=True,
                   help="config path or shipped name (table2, table3, table4)")
    p.add_argument("--replicates", type=int, default=None,
                   help="override the config's main replicate count (smoke runs)")
    _add_common(p)

    p = sub.add_parser("power", help="power experiment from a config file")
    p.add_argument("--config", required=True, help="config path or shipped name (table5, table6)")
    p.add_argument("--replicates", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("domain", help="inspect the admissible polytope")
    p.add_argument("input")
    p.add_argument("--point", default=None, help="comma list of k-1 coordinates to classify")
    _add_common(p)

    p = sub.add_parser("bench", help="compare compiled and python kernels")
    p.add_argument("--n", type=int, default=20_000, help="batch size (default 20000)")
    p.add_argument("--blocks", type=int, default=10)
    p.add_argument("--treatments", type=int, default=4)
    _add_common(p)
    return parser


def _seed_for(args, cfg: dict | None = None) -> int:
    if args.seed is not None:
        return args.seed
    if cfg is not None and "seed" in cfg:
        return int(cfg["seed"])
    return 0


def _parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse {what}: {text!r}") from None


def _read_design(path: str):
    return make_design(load_csv(path))


# -- config files -------------------------------------------------------------


def load_config(name_or_path: str) -> dict[str, str]:
    """Flat key = value file; '#' starts a comment. Shipped configs resolve
    by bare name (table2 ... table6)."""
    path = Path(name_or_path)
    if path.exists():
        text = path.read_text()
    else:
        fname = name_or_path if name_or_path.endswith(".cfg") else name_or_path + ".cfg"
        res = resources.files("blockperm.configs").joinpath(fname)
        if not res.is_file():
            raise ValidationError(f"config not found: {name_or_path!r} (no file, no shipped config)")
        text = res.read_text()
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _config_model(cfg: dict[str, str]) -> ErrorModel:
    family = cfg.get("family", "normal")
    shape = float(cfg["gamma_shape"]) if "gamma_shape" in cfg else None
    scale = float(cfg.get("scale", 1.0))
    loc = float(cfg.get("loc", 0.0))
    return ErrorModel(family=family, shape=shape, loc=loc, scale=scale)


# -- subcommands ----------------------------------------------------------------


def cmd_test(args) -> RunReport:
    design = _read_design(args.input)
    sorted_d = sort_design(design)
    seed = _seed_for(args)
    root = RngStream(seed)
    lam_obs, _ = observed_lambda(design, sorted_d)
    f_obs = f_statistic(design)
    results: dict = {"observed_lambda": lam_obs, "observed_f": f_obs,
                     "b": design.b, "k": design.k}
    diagnostics: dict = {"tie_counts": list(design.tie_counts)}
    method = args.method
    if method in ("mc-lambda", "mc-f"):
        stat = "lambda" if method == "mc-lambda" else "f"
        res = mc_pvalue(design, stat, args.reps, root.child(0), threads=args.threads)
        results["p_value"] = res.p_value
        results["method"] = method
        diagnostics.update({
            "mc_standard_error": res.mc_standard_error,
            "boundary_resamples": res.n_boundary,
            "failed_solves": res.n_failed,
        })
    elif method == "exact":
        res_l = exact_pvalue(design, "lambda")
        res_f = exact_pvalue(design, "f")
        results["p_value"] = {"lambda": res_l.p_value, "f": res_f.p_value}
        results["method"] = "exact"
        results["n_outcomes"] = res_l.n_resamples
        diagnostics["boundary_outcomes"] = res_l.n_boundary
    else:  # lr / bn
        p_lr, p_bn, flagged = saddlepoint_pvalues(
            design, args.sphere_samples, root.child(1), args.eps)
        results["p_value"] = p_lr if method == "lr" else p_bn
        results["method"] = method
        results["saddlepoint"] = {"lr": p_lr, "bn": p_bn}
        diagnostics["level_flagged"] = flagged
    return RunReport(
        command="test", seed=seed, backend=BACKEND_NAME,
        config={"input": args.input, "method": method, "reps": args.reps,
                "sphere_samples": args.sphere_samples, "eps": args.eps},
        results=results, diagnostics=diagnostics,
    )


def cmd_tail(args) -> RunReport:
    design = _read_design(args.input)
    grid = _parse_floats(args.u_grid, "--u-grid")
    model = DesignTailModel(sort_design(design))
    for u in grid:
        check_admissible(model, u, args.eps)  # refuse bad thresholds up front
    seed = _seed_for(args)
    root = RngStream(seed)
    config = TailTableConfig(n_resamples=args.reps, n_sphere=args.sphere_samples,
                             quadrature=args.quadrature, eps=args.eps,
                             threads=args.threads)
    table = tail_table(design, grid, root, config)
    csv = table_csv("u", table.u_values, table.rows, TAIL_ROW_ORDER)
    return RunReport(
        command="tail", seed=seed, backend=BACKEND_NAME,
        config={"input": args.input, "u_grid": grid, "reps": args.reps,
                "sphere_samples": args.sphere_samples, "quadrature": args.quadrature,
                "eps": args.eps},
        results={"u": list(table.u_values), "rows": table.rows, "ses": table.ses},
        diagnostics={**table.diagnostics, "notes": table.notes},
        csv=csv,
    )


def cmd_accuracy(args) -> RunReport:
    cfg = load_config(args.config)
    experiment = cfg.get("experiment", "accuracy")
    model = _config_model(cfg)
    b = int(cfg.get("blocks", 10))
    k = int(cfg.get("treatments", 4))
    grid = _parse_floats(cfg.get("u_grid", DEFAULT_GRID), "u_grid")
    seed = _seed_for(args, cfg)
    if experiment == "accuracy":
        n_mc = args.replicates or int(cfg.get("resamples", 100_000))
        result = accuracy_experiment(
            model, b, k, grid, n_mc=n_mc,
            n_sphere=int(cfg.get("sphere_samples", 100)),
            seed=seed, quadrature=cfg.get("quadrature", "mc"),
            eps=float(cfg.get("eps", 1e-3)), threads=args.threads,
        )
        table = result.table
        csv = table_csv("u", table.u_values, table.rows, TAIL_ROW_ORDER)
        results = {"u": list(table.u_values), "rows": table.rows, "ses": table.ses,
                   "design": result.design}
        diagnostics = {**table.diagnostics, "notes": table.notes}
    elif experiment == "unconditional":
        n_outer = args.replicates or int(cfg.get("outer_replicates", 1000))

        def progress(done, total):
            print(f"unconditional: {done}/{total} designs", file=sys.stderr, flush=True)

        res = unconditional_accuracy(
            model, b, k, grid, n_outer=n_outer,
            n_inner=int(cfg.get("resamples", 100_000)),
            seed=seed, threads=args.threads, progress=progress,
        )
        csv = table_csv("u", res.u_values, res.rows, ("e_mc_f", "f"))
        results = {"u": list(res.u_values), "rows": res.rows, "ses": res.ses,
                   "n_outer": res.n_outer, "n_inner": res.n_inner}
        diagnostics = {}
    else:
        raise ValidationError(
            f"config experiment {experiment!r} does not belong to the accuracy command")
    return RunReport(
        command="accuracy", seed=seed, backend=BACKEND_NAME,
        config={"config": args.config, **cfg,
                **({"replicates_override": args.replicates} if args.replicates else {})},
        results=results, diagnostics=diagnostics, csv=csv,
    )


def cmd_power(args) -> RunReport:
    cfg = load_config(args.config)
    if cfg.get("experiment", "power") != "power":
        raise ValidationError(
            f"config experiment {cfg.get('experiment')!r} does not belong to the power command")
    model = _config_model(cfg)
    b = int(cfg.get("blocks", 10))
    k = int(cfg.get("treatments", 4))
    c_values = _parse_floats(cfg.get("effect_c", "0,0.2,0.4,0.6,0.8,1.0,1.2,1.4"), "effect_c")
    effects = [effect_vector(k, c) for c in c_values]
    seed = _seed_for(args, cfg)
    n_rep = args.replicates or int(cfg.get("replicates", 2000))

    def progress(done, total):
        print(f"power: {done}/{total} replicate batches", file=sys.stderr, flush=True)

    result = power_experiment(
        model, b, k, effects,
        alpha=float(cfg.get("alpha", 0.05)),
        n_replicates=n_rep,
        n_perm=int(cfg.get("permutations", 10_000)),
        n_sphere=int(cfg.get("sphere_samples", 100)),
        seed=seed, eps=float(cfg.get("eps", 1e-3)),
        threads=args.threads, progress=progress,
    )
    labels = [row.effect_scale for row in result.rows]
    rows = {
        "power_f": tuple(r.power_f for r in result.rows),
        "power_lr": tuple(r.power_lr for r in result.rows),
        "power_bn": tuple(r.power_bn for r in result.rows),
    }
    csv = table_csv("effect_scale", labels, rows, ("power_f", "power_lr", "power_bn"))
    return RunReport(
        command="power", seed=seed, backend=BACKEND_NAME,
        config={"config": args.config, **cfg,
                **({"replicates_override": args.replicates} if args.replicates else {})},
        results={
            "effect_scale": labels,
            "rows": rows,
            "ses": {
                "power_f": tuple(r.se_f for r in result.rows),
                "power_lr": tuple(r.se_lr for r in result.rows),
                "power_bn": tuple(r.se_bn for r in result.rows),
            },
            "mu": [list(r.mu) for r in result.rows],
            "alpha": result.alpha,
        },
        diagnostics={**result.diagnostics,
                     "flagged_by_level": [r.n_flagged for r in result.rows]},
        csv=csv,
    )


def cmd_domain(args) -> RunReport:
    design = _read_design(args.input)
    sorted_d = sort_design(design)
    table = table_for(sorted_d)
    facets = []
    for subset, lo, hi in zip(table.subsets, table.subs_lower, table.subs_upper):
        facets.append({"subset": [i + 1 for i in subset], "l": len(subset),
                       "lower": lo, "upper": hi})
    results: dict = {
        "b": design.b, "k": design.k,
        "n_facets": 2 * len(facets),
        "n_vertices": math.factorial(design.k),
        "max_lambda": math.log(math.factorial(design.k)),
        "col_means": sorted_d.col_means,
        "facets": facets,
    }
    if args.point is not None:
        x = np.array(_parse_floats(args.point, "--point"))
        if x.shape != (design.k - 1,):
            raise ValidationError(f"--point needs {design.k - 1} coordinates, got {x.size}")
        loc = classify(sorted_d, x)
        results["point"] = {
            "x": x,
            "location": loc.kind,
            "margin": loc.margin,
            "active_faces": [
                {"l": f.l, "subset": [i + 1 for i in f.subset], "side": f.side}
                for f in loc.faces
            ],
            "lambda": lambda_at(sorted_d, x),
            "vertex_permutation": list(loc.vertex_perm) if loc.vertex_perm else None,
        }
    return RunReport(
        command="domain", seed=_seed_for(args), backend=BACKEND_NAME,
        config={"input": args.input, "point": args.point},
        results=results,
        diagnostics={"tie_counts": list(design.tie_counts)},
    )


def cmd_bench(args) -> RunReport:
    from ._backend import get_kernel
    from .cgf import CgfTable
    from .design import perm_prefix_table
    from .permtest import _resampled_means

    b, k, n = args.blocks, args.treatments, args.n
    seed = _seed_for(args)
    gen = RngStream(seed).generator()
    x = gen.standard_normal((b, k))
    x -= x.mean(axis=1, keepdims=True)
    values = np.sort(x, axis=1)
    perm = perm_prefix_table(k)
    means = _resampled_means(x, gen, n)[:, : k - 1]
    tab = CgfTable(values)
    timings: dict = {}
    backends = ["python"]
    try:
        get_kernel("compiled")
        backends.append("compiled")
    except ImportError:
        pass
    for name in backends:
        kernel = get_kernel(name)
        prob = kernel.CgfProblem(values=values, perm=perm)
        t = np.full(k - 1, 0.1)
        start = time.perf_counter()
        reps = 2000
        for _ in range(reps):
            prob.kappa_full(t)
        t_eval = (time.perf_counter() - start) / reps
        start = time.perf_counter()
        lam, status = prob.lambda_batch(
            means, tab.subs_idx, tab.subs_ptr, tab.subs_lower, tab.subs_upper,
            tab.boundary_tol(), 1e-10, 200)
        t_batch = time.perf_counter() - start
        timings[name] = {
            "kappa_full_us": t_eval * 1e6,
            "lambda_batch_s": t_batch,
            "solves_per_s": n / t_batch,
            "checksum": float(np.nansum(np.where(np.isfinite(lam), lam, 0.0))),
        }
    if len(backends) == 2:
        timings["speedup_lambda_batch"] = (
            timings["python"]["lambda_batch_s"] / timings["compiled"]["lambda_batch_s"])
    return RunReport(
        command="bench", seed=seed, backend=BACKEND_NAME,
        config={"n": n, "blocks": b, "treatments": k},
        results=timings,
        diagnostics={"note": "bench output contains wall-clock timings and is "
                             "not covered by the byte-identical rerun contract"},
    )


_HANDLERS = {
    "test": cmd_test,
    "tail": cmd_tail,
    "accuracy": cmd_accuracy,
    "power": cmd_power,
    "domain": cmd_domain,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        report = _HANDLERS[args.cmd](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DegenerateDesignError, NumericalDegeneracyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except BlockPermError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    report.wall_time_s = time.perf_counter() - start
    text = write_report(report, args.out, args.emit_timing)
    if not args.out:
        sys.stdout.write(text)
    print(f"[{args.cmd}] wall time {report.wall_time_s:.2f}s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
