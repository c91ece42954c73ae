"""Command-line front end.

Exit codes: 0 success, 2 bad input or contract violation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .dispersion import estimate_dispersion
from .evaluate import recovery_report, truth_as_model
from .exceptions import (
    ContractError, DivergenceError, EstimationError, InvalidStateError, PescaError,
    SimulationInfeasibleError,
)
from .experiment import CASE_SETS, SCALES, ExperimentConfig, reproduce
from .expfam import BERNOULLI, FAMILIES, GAUSSIAN, Distribution
from .io import read_block, read_json, read_model, read_truth, write_json, write_matrix, write_model, write_truth
from .penalty import PENALTY_FAMILIES, PenaltySpec
from .selection import DEFAULT_GRIDS, SelectionFitError, select
from .simulate import CASES, SimulationSpec, parse_preset, preset_spec, simulate_blocks
from .solver import FitConfig, fit, variation_explained, with_dispersions

log = logging.getLogger("pesca")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class UsageError(ContractError):
    pass


# ---------------------------------------------------------------- config

def _parse_grid(text: str) -> tuple:
    try:
        lo, hi, n = text.split(":")
        return float(lo), float(hi), int(n)
    except ValueError:
        raise UsageError(f"grids look like lo:hi:n, got {text!r}") from None


def _parse_floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def load_project(path) -> dict:
    """Read a project config and resolve block paths relative to it.

    Layout::

        {"blocks": [{"path": "X_1.csv", "type": "gaussian", "alpha": 1.0 | "estimate"}],
         "penalty": {"family": "gdp", "gamma": 1.0, "q": 1.0, "lambdas": [...],
                     "grids": {"gaussian": [1, 500, 30]}},
         "fit": {"epsilon_f": 1e-6, "max_iter": 500, "R_init": 50},
         "selection": {"fraction": 0.1},
         "seed": 0,
         "out": "results"}
    """
    path = Path(path)
    cfg = read_json(path)
    if not isinstance(cfg, dict) or not cfg.get("blocks"):
        raise UsageError(f"{path}: config needs a non-empty 'blocks' list")
    for i, b in enumerate(cfg["blocks"]):
        if "path" not in b:
            raise UsageError(f"{path}: block {i} has no path")
        t = b.get("type", GAUSSIAN)
        if t not in FAMILIES:
            raise UsageError(f"{path}: block {i} type {t!r} not in {FAMILIES}")
        p = Path(b["path"])
        b["path"] = str(p if p.is_absolute() else path.parent / p)
        if not Path(b["path"]).is_file():
            raise UsageError(f"block file not found: {b['path']}")
    return cfg


def _blocks_from_config(cfg: dict, seed: int, repeats: int = 3):
    """Load blocks; Gaussian blocks with ``alpha: "estimate"`` get an estimate."""
    blocks, estimates = [], {}
    for l, b in enumerate(cfg["blocks"]):
        family = b.get("type", GAUSSIAN)
        alpha = b.get("alpha", 1.0)
        dist = Distribution(family, 1.0 if family != GAUSSIAN or alpha == "estimate" else float(alpha))
        block = read_block(b["path"], dist, name=b.get("name", f"X{l + 1}"))
        if family == GAUSSIAN and alpha == "estimate":
            est = estimate_dispersion(block.values, block.mask, repeats, seed=[seed, l])
            if est.degenerate:
                raise EstimationError(f"block {l + 1}: residual variance is numerically zero")
            block = with_dispersions([block], [est.alpha])[0]
            estimates[l] = est
        blocks.append(block)
    return blocks, estimates


def _penalty(cfg: dict, args) -> PenaltySpec:
    p = dict(cfg.get("penalty", {}))
    family = args.penalty or p.get("family", "gdp")
    gamma = args.gamma if args.gamma is not None else p.get("gamma", 1.0)
    q = args.q if args.q is not None else p.get("q", 1.0)
    lambdas = p.get("lambdas", ())
    if getattr(args, "lambdas", None):
        lambdas = _parse_floats(args.lambdas)
    return PenaltySpec(family, tuple(lambdas), float(gamma), float(q))


def _fit_config(cfg: dict, seed: int) -> FitConfig:
    f = cfg.get("fit", {})
    return FitConfig(float(f.get("epsilon_f", 1e-6)), int(f.get("max_iter", 500)),
                     int(f.get("R_init", 50)), seed)


def _seed(cfg: dict, args) -> int:
    return int(args.seed if args.seed is not None else cfg.get("seed", 0))


def _out(cfg: dict, args, default: str) -> Path:
    out = Path(args.out or cfg.get("out", default))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_meta(blocks, penalty: PenaltySpec, seed: int) -> dict:
    return {
        "types": [b.dist.family for b in blocks],
        "alphas": [b.dist.alpha for b in blocks],
        "lambdas": list(penalty.lambdas),
        "penalty": penalty.family,
        "gamma": penalty.gamma,
        "q": penalty.q,
        "seed": seed,
    }


def _write_varexp(path, model, blocks):
    ve = variation_explained(model, blocks)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component", "block", "varexp"])
        for r in range(model.R):
            for l in range(model.n_blocks):
                w.writerow([r + 1, l + 1, "%.17g" % ve.per_component[l, r]])
            w.writerow([r + 1, "all", "%.17g" % ve.combined_per_component[r]])
    return ve


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    if args.config:
        raw = read_json(args.config)
        spec = SimulationSpec.from_dict(raw)
        if args.seed is not None:
            spec = SimulationSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    elif args.preset:
        case_set, case = parse_preset(args.preset)
        sizes = _parse_sizes(args.sizes)
        spec = preset_spec(case_set, case, seed=args.seed or 0, sizes=sizes, I=args.rows)
    else:
        raise UsageError("simulate needs --preset or --config")
    blocks, truth = simulate_blocks(spec)
    out = _out({}, args, "simulation")
    entries = []
    for l, b in enumerate(blocks, start=1):
        write_matrix(out / f"X_{l}.csv", b.values, b.mask)
        entries.append({"path": f"X_{l}.csv", "type": b.dist.family,
                        "alpha": "estimate" if b.dist.family == GAUSSIAN else 1.0})
    write_truth(out / "truth", truth, spec)
    write_json(out / "config.json", {"blocks": entries, "seed": spec.seed})
    write_json(out / "manifest.json", {"seed": spec.seed, "spec": spec.to_dict(),
                                       "realized_snrs": truth.realized_snrs, "attempts": truth.attempts})
    print(f"wrote {len(blocks)} blocks to {out}")
    return EXIT_OK


def _parse_sizes(text):
    if not text:
        return None
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"sizes look like 1000,500,100, got {text!r}") from None


def cmd_estimate_dispersion(args) -> int:
    cfg = load_project(args.config)
    seed = _seed(cfg, args)
    report = {"seed": seed, "blocks": []}
    gaussian = 0
    for l, b in enumerate(cfg["blocks"]):
        if b.get("type", GAUSSIAN) != GAUSSIAN:
            report["blocks"].append({"block": l + 1, "type": b["type"], "alpha": 1.0, "estimated": False})
            continue
        gaussian += 1
        block = read_block(b["path"], Distribution.gaussian())
        est = estimate_dispersion(block.values, block.mask, args.repeats, seed=[seed, l])
        entry = {"block": l + 1, "type": GAUSSIAN, "estimated": True, **est.to_dict()}
        report["blocks"].append(entry)
        flag = " (degenerate: zero residual)" if est.degenerate else ""
        print(f"block {l + 1}: alpha = {est.alpha:.6g} +- {est.std:.3g}, ranks {est.ranks}{flag}")
    if gaussian == 0:
        raise UsageError("dispersion estimation needs at least one gaussian block")
    out = _out(cfg, args, ".")
    write_json(out / "dispersion.json", report)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = load_project(args.config)
    seed = _seed(cfg, args)
    blocks, _ = _blocks_from_config(cfg, seed)
    penalty = _penalty(cfg, args)
    if not penalty.lambdas:
        raise UsageError("fit needs lambdas (--lambdas or penalty.lambdas in the config)")
    out = _out(cfg, args, "fit")
    try:
        res = fit(blocks, penalty, _fit_config(cfg, seed))
    except DivergenceError as exc:
        write_matrix(out / "objective_trace.csv", np.asarray(exc.trace or [], dtype=float)[:, None])
        raise
    write_model(out / "model", res.model, _model_meta(blocks, penalty, seed))
    write_matrix(out / "objective_trace.csv", res.objective_trace[:, None])
    write_matrix(out / "sigma.csv", res.sigma_table)
    ve = _write_varexp(out / "varexp.csv", res.model, blocks)
    write_json(out / "fit.json", {
        "iterations": res.iterations, "converged": res.converged, "objective": res.objective,
        "active_groups": res.model.active_groups(), "n_components": res.model.n_components(),
        "varexp_blocks": ve.per_block, "varexp_total": ve.combined_total,
    })
    print(f"fit: {res.iterations} iterations, converged={res.converged}, "
          f"{res.model.n_components()} active components")
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = load_project(args.config)
    seed = _seed(cfg, args)
    blocks, _ = _blocks_from_config(cfg, seed)
    penalty = _penalty(cfg, args)
    grids = {k: tuple(v) for k, v in cfg.get("penalty", {}).get("grids", {}).items()}
    families = {b.dist.family for b in blocks}
    if args.grid:
        g = _parse_grid(args.grid)
        if families == {GAUSSIAN, BERNOULLI}:
            grids[GAUSSIAN] = g
        else:
            grids[next(iter(families))] = g
    if args.grid_binary:
        grids[BERNOULLI] = _parse_grid(args.grid_binary)
    fraction = float(cfg.get("selection", {}).get("fraction", 0.1))
    trace = select(blocks, _fit_config(cfg, seed), seed=seed, penalty=penalty,
                   grids={**DEFAULT_GRIDS, **grids}, fraction=fraction)
    out = _out(cfg, args, "select")
    write_json(out / "selection.json", trace.to_dict())
    with open(out / "cv_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "lambda", "cv_error", *[f"cv_block_{l + 1}" for l in range(len(blocks))],
                    "active_groups", "iterations"])
        for p in trace.points:
            w.writerow([p.stage, "%.17g" % p.lam, "%.17g" % p.score, *("%.17g" % v for v in p.cv_errors),
                        p.active_groups, p.iterations])
    final = trace.final
    write_model(out / "model", final.model, _model_meta(blocks, penalty.with_lambdas(trace.lambdas), seed))
    write_matrix(out / "objective_trace.csv", final.objective_trace[:, None])
    _write_varexp(out / "varexp.csv", final.model, blocks)
    lam_txt = ", ".join("%.4g" % v for v in trace.lambdas)
    print(f"selected lambdas ({lam_txt}); {final.model.active_groups()} active groups")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not args.model or not args.truth:
        raise UsageError("evaluate needs --model and --truth bundle directories")
    if (Path(args.model) / "truth.json").is_file():
        model = truth_as_model(read_truth(args.model))
    else:
        model, _ = read_model(args.model)
    truth = read_truth(args.truth)
    report = recovery_report(model, truth)
    out = _out({}, args, "evaluation")
    write_json(out / "report.json", report.to_dict())
    row = report.row()
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow(row)
    for name, rv in report.rv.items():
        print(f"{name}: RV={rv:.4f} rank={report.ranks[name]}")
    print(f"RMSE(Theta)={report.rmse_theta:.4g} RMSE(mu)={report.rmse_mu:.4g}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    if args.preset:
        case_set, case = parse_preset(args.preset)
        cases = (case,)
    else:
        case_set = args.case_set
        cases = tuple(int(c) for c in args.cases.split(",")) if args.cases else tuple(CASES)
    if case_set not in CASE_SETS:
        raise UsageError(f"case set must be one of {CASE_SETS}")
    if args.seeds:
        seeds = tuple(int(s) for s in args.seeds.split(","))
    elif args.seed is not None:
        seeds = (args.seed,)
    else:
        seeds = ()
    penalty = PenaltySpec(args.penalty or "gdp", (), args.gamma or 1.0, args.q or 1.0)
    grids = {}
    if args.grid:
        grids[GAUSSIAN if case_set != "bbb" else BERNOULLI] = _parse_grid(args.grid)
    if args.grid_binary:
        grids[BERNOULLI] = _parse_grid(args.grid_binary)
    config = ExperimentConfig(
        case_set=case_set, cases=cases, seeds=seeds, scale=args.scale,
        sizes=_parse_sizes(args.sizes), I=args.rows, penalty=penalty, grids=grids,
        estimate_alpha=not args.known_alpha, jobs=args.jobs,
    )
    out = Path(args.out or f"reproduce-{case_set}")
    result = reproduce(config, out)
    with open(out / "table_rv_rank.csv") as fh:
        print(fh.read(), end="")
    failed = [r for r in result.runs if r.error]
    if failed:
        print(f"{len(failed)} of {len(result.runs)} runs failed; see error.txt files", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pesca", description="Penalized exponential-family SCA")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="project config JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")

    def penalty_flags(p):
        p.add_argument("--penalty", choices=PENALTY_FAMILIES)
        p.add_argument("--gamma", type=float)
        p.add_argument("--q", type=float)

    p = sub.add_parser("simulate", help="draw a simulated data set")
    common(p)
    p.add_argument("--preset", help="e.g. ggg-case3")
    p.add_argument("--sizes", help="block widths, e.g. 1000,500,100")
    p.add_argument("--rows", type=int, help="number of rows I")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate-dispersion", help="estimate Gaussian block dispersions")
    common(p)
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_estimate_dispersion)

    p = sub.add_parser("fit", help="fit at fixed lambdas")
    common(p)
    penalty_flags(p)
    p.add_argument("--lambdas", help="comma-separated, one per block (or one shared)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="cross-validated lambda selection and refit")
    common(p)
    penalty_flags(p)
    p.add_argument("--grid", help="lo:hi:n (quantitative grid for mixed data)")
    p.add_argument("--grid-binary", help="lo:hi:n for binary blocks in mixed data")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("evaluate", help="score a model bundle against a truth bundle")
    common(p, config=False)
    p.add_argument("--model", help="model bundle directory")
    p.add_argument("--truth", help="truth bundle directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reproduce", help="run a simulation experiment")
    common(p, config=False)
    penalty_flags(p)
    p.add_argument("--preset", help="single case, e.g. ggg-case3")
    p.add_argument("--case-set", choices=CASE_SETS, default="ggg")
    p.add_argument("--cases", help="comma-separated case numbers (default all)")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--scale", choices=SCALES, default="desk")
    p.add_argument("--sizes", help="override block widths")
    p.add_argument("--rows", type=int, help="override I")
    p.add_argument("--grid", help="lo:hi:n")
    p.add_argument("--grid-binary", help="lo:hi:n for binary blocks in mixed data")
    p.add_argument("--known-alpha", action="store_true", help="skip dispersion estimation")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SelectionFitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc.__cause__, (DivergenceError, InvalidStateError)) else EXIT_INPUT
    except (DivergenceError, InvalidStateError, EstimationError, SimulationInfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PescaError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
