"""Command-line interface.

Exit codes: 0 success, 2 usage or input error, 3 infeasible observation
pattern, 4 numerical failure.
"""

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .benchmarks import BenchmarkId, run_benchmark
from .errors import InfeasibleError, NumericalError
from .estimator import fit, impute
from .io import (CsvLayout, RunConfig, dumps_report, load_config, load_csv, make_report, parse_gamma,
                 validate_config, write_csv, write_matrix_csv, write_report)
from .moments import obs_stats
from .panel import Panel, anchor_forward_fill, stack_auxiliary, standardize, unstandardize
from .patterns import MaskSpec, apply_mask, generate_mask
from .simlab import DgpSpec, relative_mse, run_table
from .variance import (confidence_intervals, corollary_variances, select_aux_weights,
                       select_gamma)

log = logging.getLogger("tpca")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML run configuration")
    common.add_argument("--seed", type=int, metavar="U64", help="random seed")
    common.add_argument("--k", type=int, metavar="N", help="number of factors")
    common.add_argument("--gamma", metavar="FLOAT|auto", help="target weight")
    common.add_argument("--objective", choices=("all", "missing"), help="cells summed when selecting gamma")
    common.add_argument("--anchor", action="store_true", default=None,
                        help="forward-fill the target before estimation")
    common.add_argument("--out", metavar="PATH", help="report path (JSON)")
    common.add_argument("--reps", type=int, metavar="N", help="Monte Carlo replications")
    common.add_argument("--x", metavar="PATH", help="auxiliary panel CSV")
    common.add_argument("--aux", action="append", metavar="PATH", default=None,
                        help="additional auxiliary panel CSV (repeatable)")
    common.add_argument("--y", metavar="PATH", help="target panel CSV")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="tpca", description="Target-PCA factor estimation and imputation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("impute", parents=[common], help="fit, impute and write confidence intervals")
    sub.add_parser("select-gamma", parents=[common], help="two-stage target-weight selection")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo table from a config")
    m = sub.add_parser("mask", parents=[common], help="generate a mask or apply it to the target")
    m.add_argument("--T", type=int, dest="T", help="periods, when no target panel is given")
    m.add_argument("--N", type=int, dest="N", help="units, when no target panel is given")
    o = sub.add_parser("omega", parents=[common], help="observation-pattern statistics of the target")
    o.add_argument("--mode", choices=("exact", "sampled"), help="exact or sampled statistics")
    o.add_argument("--sample-size", type=int, dest="sample_size", help="draws per statistic in sampled mode")
    o.add_argument("--tuples", choices=("all", "distinct"), help="average over all or only distinct unit tuples")
    sub.add_parser("benchmark", parents=[common], help="all estimators on a masked target panel")
    return parser


def _config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.k is not None:
        cfg.k = args.k
    if args.gamma is not None:
        cfg.gamma = parse_gamma(args.gamma)
    if args.objective is not None:
        cfg.objective = args.objective
    if args.anchor:
        cfg.anchor = True
    if args.out is not None:
        cfg.out = args.out
    if args.reps is not None:
        cfg.reps = args.reps
    if args.x is not None:
        cfg.x = [args.x]
    if args.aux:
        cfg.x = list(cfg.x) + list(args.aux)
    if args.y is not None:
        cfg.y = args.y
    if getattr(args, "mode", None):
        cfg.omega_mode = args.mode
    if getattr(args, "sample_size", None):
        cfg.omega_sample_size = args.sample_size
    if getattr(args, "tuples", None):
        cfg.omega_tuples = args.tuples
    return validate_config(cfg)


def _require(cfg, *names):
    for name in names:
        v = getattr(cfg, name)
        if v is None or v == []:
            raise UsageError(f"missing setting {name!r} (flag --{name} or config)")


def _sibling(out, suffix):
    root, _ = os.path.splitext(out)
    return root + suffix


def _load_panels(cfg):
    _require(cfg, "x", "y")
    layout = CsvLayout(apply_transforms=bool(cfg.transform))
    xs = [load_csv(p, layout) for p in cfg.x]
    y = load_csv(cfg.y, layout)
    for p, x in zip(cfg.x, xs):
        if x.T != y.T:
            raise UsageError(f"{p} has {x.T} periods, the target has {y.T}")
        if x.time_index and y.time_index and x.time_index != y.time_index:
            raise UsageError(f"{p} and the target have different time labels")
    return xs, y


def _standardize_all(cfg, xs, y):
    if not cfg.standardize:
        return xs, y, None
    xs = [standardize(x)[0] for x in xs]
    y, means, stds = standardize(y)
    return xs, y, (means, stds)


def _auxiliary(cfg, xs, y, **kwargs):
    """Single auxiliary panel, choosing relative panel weights if requested."""
    if len(xs) == 1:
        return xs[0], None, None
    if cfg.aux_grid and cfg.gamma is None:
        rel, stacked, sel = select_aux_weights(xs, y, cfg.k, cfg.aux_grid, r_grid=cfg.r_grid(),
                                               objective=cfg.objective, **kwargs)
        return stacked.panel, stacked, sel
    stacked = stack_auxiliary(xs)
    return stacked.panel, stacked, None


def _selection_fields(sel):
    return {
        "gamma_first": sel.gamma_first,
        "gamma_star": sel.gamma_star,
        "objective_curve": sel.curve(),
    }


def cmd_select_gamma(cfg):
    xs, y = _load_panels(cfg)
    xs, y, _ = _standardize_all(cfg, xs, y)
    kw = dict(empty_pairs=cfg.empty_pairs, omega_mode=cfg.omega_mode, omega_seed=cfg.seed,
              omega_sample_size=cfg.omega_sample_size, omega_tuples=cfg.omega_tuples,
              objective_mask=y.mask)
    if cfg.anchor:
        y = anchor_forward_fill(y)
    x, stacked, sel = _auxiliary(cfg, xs, y, **kw)
    if sel is None:
        sel = select_gamma(x, y, cfg.k, r_grid=cfg.r_grid(), objective=cfg.objective, **kw)
    fields = _selection_fields(sel)
    if stacked is not None:
        fields["outputs"] = {"source_weights": stacked.source_weights(sel.gamma_star).tolist()}
    return fields


def cmd_impute(cfg):
    _require(cfg, "out")
    xs, y_raw = _load_panels(cfg)
    xs, y_std, scaling = _standardize_all(cfg, xs, y_raw)
    y = anchor_forward_fill(y_std) if cfg.anchor else y_std
    kw = dict(empty_pairs=cfg.empty_pairs, omega_mode=cfg.omega_mode, omega_seed=cfg.seed,
              omega_sample_size=cfg.omega_sample_size, omega_tuples=cfg.omega_tuples,
              objective_mask=y_std.mask)
    x, stacked, sel = _auxiliary(cfg, xs, y, **kw)
    if sel is None:
        sel = select_gamma(x, y, cfg.k, r_grid=cfg.r_grid(), objective=cfg.objective, **kw)
    gamma = sel.gamma_star if cfg.gamma is None else cfg.gamma
    fitted = fit(x, y, cfg.k, gamma, empty_pairs=cfg.empty_pairs)
    r = gamma * y.N / x.N
    report = corollary_variances(sel.moments, sel.obs, sel.first_fit, r)
    lower, upper = confidence_intervals(report, fitted, cfg.ci_level)

    # cells missing in the original target get the estimated common component
    filled = impute(fitted, y_std)
    if scaling is not None:
        means, stds = scaling
        filled = unstandardize(filled, means, stds)
        lower, upper = lower * stds + means, upper * stds + means
    names, index = y_raw.unit_names, y_raw.time_index
    imputed_path = _sibling(cfg.out, ".imputed.csv")
    write_csv(imputed_path, Panel(filled.values, filled.mask, names, index))
    write_matrix_csv(_sibling(cfg.out, ".ci_lower.csv"), lower, names, index)
    write_matrix_csv(_sibling(cfg.out, ".ci_upper.csv"), upper, names, index)
    fields = _selection_fields(sel)
    fields["gamma_star"] = gamma
    fields["omega"] = sel.obs.as_dict()
    fields["ci_level"] = cfg.ci_level
    outputs = {
        "imputed": os.path.basename(imputed_path),
        "ci_lower": os.path.basename(_sibling(cfg.out, ".ci_lower.csv")),
        "ci_upper": os.path.basename(_sibling(cfg.out, ".ci_upper.csv")),
        "imputed_cells": int((~y_raw.mask).sum() - (~filled.mask).sum()),
    }
    if stacked is not None:
        outputs["source_weights"] = stacked.source_weights(gamma).tolist()
    fields["outputs"] = outputs
    return fields


def _estimator_fields(summary):
    if summary.n_feasible == 0:
        return {"feasible": False}
    return {
        "feasible": True,
        "n_feasible": summary.n_feasible,
        "rel_mse_obs": summary.mean("obs"),
        "rel_mse_miss": summary.mean("miss"),
        "rel_mse_all": summary.mean("all"),
        "se": {c: summary.se(c) for c in ("obs", "miss", "all")},
    }


def cmd_simulate(cfg):
    if not cfg.dgp or not cfg.mask:
        raise UsageError("simulate needs [simulation] dgp and [mask] settings in the config")
    dgp = DgpSpec.from_dict(cfg.dgp)
    mask = MaskSpec.from_dict(cfg.mask)
    estimators = cfg.estimators or [b.value for b in BenchmarkId]
    res = run_table(dgp, mask, estimators, reps=cfg.reps, master_seed=cfg.seed, gamma=cfg.gamma,
                    r_grid=cfg.r_grid(), objective=cfg.objective)
    gammas = res.gammas[np.isfinite(res.gammas)]
    return {
        "gamma_first": dgp.n_x / dgp.n_y,
        "gamma_star": float(np.exp(np.mean(np.log(gammas)))) if gammas.size else None,
        "estimators": {name: _estimator_fields(s) for name, s in res.estimators.items()},
    }


def cmd_mask(cfg, args):
    _require(cfg, "out")
    if not cfg.mask:
        raise UsageError("mask needs a [mask] table in the config")
    spec_d = dict(cfg.mask)
    T, N = spec_d.pop("T", args.T), spec_d.pop("N", args.N)
    spec_d.setdefault("seed", cfg.seed)
    if args.seed is not None:
        spec_d["seed"] = args.seed
    spec = MaskSpec.from_dict(spec_d)
    if cfg.y is not None:
        y = load_csv(cfg.y, CsvLayout(apply_transforms=bool(cfg.transform)))
        mask = generate_mask(spec, y.T, y.N, values=y.values)
        masked, held = apply_mask(y, mask)
        write_csv(cfg.out, masked)
        held_path = _sibling(cfg.out, ".heldout.csv")
        with open(held_path, "w") as fh:
            fh.write("period,unit,value\n")
            for t, i, v in zip(held.rows, held.cols, held.values):
                fh.write(f"{y.time_index[t]},{y.unit_names[i]},{float(v)!r}\n")
        return {"outputs": {"masked": os.path.basename(cfg.out),
                            "heldout": os.path.basename(held_path), "heldout_cells": len(held)}}
    if T is None or N is None:
        raise UsageError("give a target panel (--y) or the mask size (--T, --N)")
    mask = generate_mask(spec, T, N)
    write_matrix_csv(cfg.out, mask.astype(int))
    return {"outputs": {"mask": os.path.basename(cfg.out), "observed_share": float(mask.mean())}}


def cmd_omega(cfg):
    _require(cfg, "y")
    y = load_csv(cfg.y, CsvLayout(apply_transforms=bool(cfg.transform)))
    tuples = cfg.omega_tuples if y.N >= 4 else "all"
    s = obs_stats(y.mask, mode=cfg.omega_mode, sample_size=cfg.omega_sample_size, seed=cfg.seed,
                  empty_pairs=cfg.empty_pairs, tuples=tuples)
    return {"omega": s.as_dict()}


def cmd_benchmark(cfg):
    if not cfg.mask:
        raise UsageError("benchmark needs a [mask] table in the config")
    xs, y = _load_panels(cfg)
    xs, y, _ = _standardize_all(cfg, xs, y)
    spec_d = dict(cfg.mask)
    spec_d.setdefault("seed", cfg.seed)
    spec = MaskSpec.from_dict(spec_d)
    mask = generate_mask(spec, y.T, y.N, values=y.values)
    masked, held = apply_mask(y, mask)
    if len(held) == 0:
        raise UsageError("the mask hides no observed cell")
    x = xs[0] if len(xs) == 1 else stack_auxiliary(xs).panel
    if cfg.anchor:
        masked_fit = anchor_forward_fill(masked)
    else:
        masked_fit = masked
    fields = {}
    gamma = cfg.gamma
    if gamma is None:
        sel = select_gamma(x, masked_fit, cfg.k, r_grid=cfg.r_grid(), objective=cfg.objective,
                           empty_pairs=cfg.empty_pairs, objective_mask=masked.mask, omega_mode=cfg.omega_mode,
                           omega_seed=cfg.seed, omega_sample_size=cfg.omega_sample_size,
                           omega_tuples=cfg.omega_tuples)
        gamma = sel.gamma_star
        fields.update(_selection_fields(sel))
    fields["gamma_star"] = gamma
    truth = np.where(y.mask, y.values, 0.0)
    sets = {"obs": masked.mask, "miss": y.mask & ~masked.mask, "all": y.mask}
    est = {}
    for tag in BenchmarkId:
        try:
            f = run_benchmark(tag, x, masked_fit, cfg.k, gamma, cfg.empty_pairs)
        except InfeasibleError as exc:
            log.info("%s infeasible: %s", tag.value, exc)
            est[tag.value] = {"feasible": False}
            continue
        est[tag.value] = {"feasible": True, "se": None}
        for c, cells in sets.items():
            est[tag.value][f"rel_mse_{c}"] = relative_mse(f.common_y, truth, cells) if cells.any() else None
    fields["estimators"] = est
    return fields


COMMANDS = {
    "impute": cmd_impute,
    "select-gamma": cmd_select_gamma,
    "simulate": cmd_simulate,
    "omega": cmd_omega,
    "benchmark": cmd_benchmark,
}


def run(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    start = time.perf_counter()
    try:
        cfg = _config(args)
        if args.command == "mask":
            fields = cmd_mask(cfg, args)
        else:
            fields = COMMANDS[args.command](cfg)
        fields.setdefault("config_echo", cfg.echo())
        fields.setdefault("seed", cfg.seed)
        fields["runtime_seconds"] = time.perf_counter() - start
        report = make_report(**fields)
        if args.command == "mask" or cfg.out is None:
            sys.stdout.write(dumps_report(report))
        else:
            write_report(report, cfg.out)
    except (UsageError, ValueError, OSError) as exc:
        _fail(exc)
        return EXIT_USAGE
    except InfeasibleError as exc:
        _fail(exc)
        return EXIT_INFEASIBLE
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        _fail(exc)
        return EXIT_NUMERICAL
    return EXIT_OK


def _fail(exc):
    msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
    sys.stderr.write(f"tpca: error: {msg}\n")


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
