"""Simulation experiments: simulate, estimate dispersions, select, evaluate."""

from __future__ import annotations

import csv
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dispersion import estimate_dispersion
from .evaluate import STRUCTURES, RecoveryReport, aggregate, format_cell, recovery_report
from .expfam import GAUSSIAN
from .io import write_json, write_model, write_truth
from .penalty import PenaltySpec
from .selection import DEFAULT_GRIDS, select
from .simulate import CASES, preset_spec, simulate_blocks
from .solver import FitConfig, with_dispersions

log = logging.getLogger(__name__)

CASE_SETS = ("ggg", "bbb", "gbb", "ggb")
SCALES = ("paper", "desk")
# both scales use the published data sizes; desk runs fewer repetitions
DEFAULT_SEEDS = {
    "paper": {"ggg": 10, "bbb": 10, "gbb": 10, "ggb": 10},
    "desk": {"ggg": 10, "bbb": 5, "gbb": 3, "ggb": 3},
}


@dataclass
class ExperimentConfig:
    case_set: str = "ggg"
    cases: tuple = tuple(CASES)
    seeds: tuple = ()
    scale: str = "desk"
    sizes: tuple | None = None
    I: int | None = None
    penalty: PenaltySpec = field(default_factory=PenaltySpec)
    grids: dict = field(default_factory=dict)
    fit: FitConfig = field(default_factory=FitConfig)
    estimate_alpha: bool = True
    dispersion_repeats: int = 3
    fraction: float = 0.1
    jobs: int = 1

    def __post_init__(self):
        if self.case_set not in CASE_SETS:
            raise ValueError(f"case set must be one of {CASE_SETS}")
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}")
        if not self.seeds:
            self.seeds = tuple(range(DEFAULT_SEEDS[self.scale][self.case_set]))
        self.grids = {**DEFAULT_GRIDS, **self.grids}


@dataclass
class RunResult:
    case: int
    seed: int
    report: RecoveryReport | None
    alphas: list
    lambdas: tuple
    seconds: float
    error: str | None = None

    def row(self) -> dict:
        out = {"case": self.case, "seed": self.seed}
        if self.report is not None:
            out.update(self.report.row())
        out["lambdas"] = " ".join("%.6g" % v for v in self.lambdas)
        out["alphas"] = " ".join("%.6g" % v for v in self.alphas)
        out["seconds"] = round(self.seconds, 3)
        out["error"] = self.error or ""
        return out


def run_one(config: ExperimentConfig, case: int, seed: int, out_dir=None) -> RunResult:
    """One repetition: simulate, estimate Gaussian dispersions, select, evaluate."""
    t0 = time.perf_counter()
    spec = preset_spec(config.case_set, case, seed=seed, sizes=config.sizes, I=config.I)
    blocks, truth = simulate_blocks(spec)
    alphas = []
    for l, b in enumerate(blocks):
        if b.dist.family == GAUSSIAN and config.estimate_alpha:
            est = estimate_dispersion(b.values, b.mask, config.dispersion_repeats, seed=[seed, l])
            alphas.append(est.alpha if not est.degenerate else 1.0)
        else:
            alphas.append(b.dist.alpha)
    blocks = with_dispersions(blocks, alphas)
    fit_config = FitConfig(config.fit.epsilon_f, config.fit.max_iter, config.fit.R_init, seed)
    trace = select(blocks, fit_config, seed=seed, penalty=config.penalty,
                   grids=config.grids, fraction=config.fraction)
    model = trace.final.model
    report = recovery_report(model, truth)
    report.extra["reactivations"] = trace.reactivations
    result = RunResult(case, seed, report, alphas, trace.lambdas, time.perf_counter() - t0)
    if out_dir is not None:
        d = Path(out_dir) / f"case{case}" / f"seed{seed}"
        write_truth(d / "truth", truth, spec)
        write_model(d / "model", model, {
            "types": [b.dist.family for b in blocks],
            "alphas": alphas,
            "lambdas": list(trace.lambdas),
            "penalty": config.penalty.family,
            "gamma": config.penalty.gamma,
            "q": config.penalty.q,
            "seed": seed,
        })
        write_json(d / "selection.json", trace.to_dict())
        write_json(d / "report.json", report.to_dict())
    return result


def _safe_run(args) -> RunResult:
    config, case, seed, out_dir = args
    t0 = time.perf_counter()
    try:
        return run_one(config, case, seed, out_dir)
    except Exception as exc:  # keep the other repetitions going
        log.error("case %d seed %d failed: %s", case, seed, exc)
        if out_dir is not None:
            d = Path(out_dir) / f"case{case}" / f"seed{seed}"
            d.mkdir(parents=True, exist_ok=True)
            (d / "error.txt").write_text(traceback.format_exc())
        return RunResult(case, seed, None, [], (), time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list

    def by_case(self) -> dict:
        out = {}
        for run in self.runs:
            out.setdefault(run.case, []).append(run)
        return out

    def summary(self) -> dict:
        """Aggregated metrics per case over the successful repetitions."""
        out = {}
        for case, runs in sorted(self.by_case().items()):
            ok = [r.report for r in runs if r.report is not None]
            if ok:
                out[case] = aggregate(ok)
                out[case]["failed"] = len(runs) - len(ok)
        return out

    def rv_rank_table(self) -> list:
        """Rows of ``case, C123, ..., D3`` cells formatted as ``rv(mean rank)``."""
        rows = []
        for case, agg in self.summary().items():
            rows.append([f"case{case}"] + [format_cell(agg["rv"][s], agg["rank"][s]) for s in STRUCTURES])
        return rows

    def rmse_table(self) -> list:
        rows = []
        for case, agg in self.summary().items():
            rows.append([f"case{case}", agg["rmse_theta"], *agg["rmse_theta_blocks"], agg["rmse_mu"]])
        return rows

    def write(self, out_dir):
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "table_rv_rank.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["case", *STRUCTURES])
            w.writerows(self.rv_rank_table())
        with open(d / "table_rmse.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["case", "rmse_theta", "rmse_theta_1", "rmse_theta_2", "rmse_theta_3", "rmse_mu"])
            w.writerows([[r[0], *("%.6g" % v for v in r[1:])] for r in self.rmse_table()])
        rows = [r.row() for r in self.runs]
        keys = list(dict.fromkeys(k for row in rows for k in row))
        with open(d / "runs.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        write_json(d / "summary.json", {str(k): v for k, v in self.summary().items()})


def manifest(config: ExperimentConfig) -> dict:
    return {
        "case_set": config.case_set,
        "cases": list(config.cases),
        "seeds": list(config.seeds),
        "scale": config.scale,
        "sizes": None if config.sizes is None else list(config.sizes),
        "I": config.I,
        "penalty": {"family": config.penalty.family, "gamma": config.penalty.gamma, "q": config.penalty.q},
        "grids": {k: list(v) if isinstance(v, tuple) else np.asarray(v).tolist() for k, v in config.grids.items()},
        "fit": {"epsilon_f": config.fit.epsilon_f, "max_iter": config.fit.max_iter, "R_init": config.fit.R_init},
        "estimate_alpha": config.estimate_alpha,
        "fraction": config.fraction,
    }


def reproduce(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run every (case, seed) pair and aggregate; failures are recorded, not raised."""
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_json(Path(out_dir) / "manifest.json", manifest(config))
    tasks = [(config, case, seed, out_dir) for case in config.cases for seed in config.seeds]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            runs = list(pool.map(_safe_run, tasks))
    else:
        runs = [_safe_run(t) for t in tasks]
    for r in runs:
        log.info("case %d seed %d: %.1fs %s", r.case, r.seed, r.seconds, r.error or "ok")
    result = ExperimentResult(config, runs)
    if out_dir is not None:
        result.write(out_dir)
    return result
