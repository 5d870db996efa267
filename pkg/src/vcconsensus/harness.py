"""Experiment orchestration behind the command line."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .analysis import AnalysisReport, analyze, fit_exponential_rate
from .config import ScenarioConfig, load_config
from .errors import AcceptanceFailure, DegenerateFit
from .io import ANALYSIS_COLUMNS, write_csv, write_json, write_plotdata, write_trajectory
from .protocol import Trajectory, run
from .scenarios import RING_SEEDS, ring_scenario

log = logging.getLogger(__name__)

DIAMETER_THRESHOLD = 1e-3
RUNTIME_LIMIT = 5.0
DUAL_LIMIT = 1e-7


@dataclass
class RunReport:
    name: str
    config_hash: str
    seed: int
    n: int
    r: int
    horizon: int
    final_diameter: float
    steps_to_threshold: int | None
    feasibility_violations: int
    gain_violations: int
    max_delay_used: int
    max_delay_bound: int
    min_e: float
    wall_clock: float
    backend: str = _kernels.BACKEND
    rate_C: float | None = None
    rate_mu: float | None = None
    rate_r2: float | None = None
    rate_dominates: bool | None = None
    h: int | None = None
    mu_hat: float | None = None
    n_hat: int | None = None
    positive_column_found: bool | None = None
    first_positive_window: int | None = None
    dual_deviation: float | None = None
    max_row_sum_error: float | None = None
    min_entry: float | None = None
    monotone: bool | None = None
    contraction_excess: float | None = None
    e_bound_violations: int | None = None
    analysis_wall_clock: float | None = None
    waived: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _base_report(cfg: ScenarioConfig, traj: Trajectory, elapsed: float) -> RunReport:
    below = np.flatnonzero(traj.diameter < DIAMETER_THRESHOLD)
    used = max((int(g.delays.max(initial=0)) for g in traj.snapshots), default=0)
    return RunReport(
        name=cfg.name,
        config_hash=cfg.config_hash,
        seed=cfg.seed,
        n=cfg.n,
        r=cfg.r,
        horizon=cfg.horizon,
        final_diameter=float(traj.diameter[-1]),
        steps_to_threshold=int(below[0]) if below.size else None,
        feasibility_violations=traj.feasibility_violations,
        gain_violations=traj.gain_violations,
        max_delay_used=used,
        max_delay_bound=cfg.schedule.max_delay,
        min_e=float(traj.e.min()),
        wall_clock=elapsed,
        waived=[f"[{c.assumption}] {c.entity}: {c.detail}" for c in cfg.violations],
    )


def _out_dir(cfg: ScenarioConfig, out_dir) -> Path:
    return Path(out_dir if out_dir is not None else cfg.output_dir)


def cmd_run(cfg: ScenarioConfig, out_dir=None) -> tuple[RunReport, Trajectory]:
    """Simulate and write ``trajectory.csv``, ``summary.json`` and ``plotdata/``."""
    out = _out_dir(cfg, out_dir)
    t0 = time.perf_counter()
    traj = run(cfg)
    report = _base_report(cfg, traj, time.perf_counter() - t0)
    if cfg.analysis.get("rate_fit", True):
        _attach_rate(report, traj)
    write_trajectory(out / "trajectory.csv", traj)
    write_plotdata(out / "plotdata", traj)
    write_json(out / "summary.json", report.to_dict())
    return report, traj


def _attach_rate(report: RunReport, traj: Trajectory) -> None:
    try:
        fit = fit_exponential_rate(traj)
    except DegenerateFit as exc:
        log.warning("rate fit skipped: %s", exc)
        return
    report.rate_C, report.rate_mu, report.rate_r2 = fit.C, fit.mu, fit.r2
    report.rate_dominates = fit.dominates


def cmd_analyze(cfg: ScenarioConfig, out_dir=None) -> tuple[RunReport, Trajectory, AnalysisReport]:
    """Run, then certify; adds ``analysis.csv`` to the run artifacts."""
    out = _out_dir(cfg, out_dir)
    report, traj = cmd_run(cfg, out)
    t0 = time.perf_counter()
    starts = cfg.schedule.window_starts(cfg.horizon) or [0]
    rep = analyze(traj, starts, cfg.rho_under, n_hat=cfg.analysis.get("n_hat"),
                  fit_rate=False)
    report.analysis_wall_clock = time.perf_counter() - t0
    pc = rep.positive_column
    if pc is not None:
        report.positive_column_found = pc.found
        report.h, report.mu_hat = pc.h, pc.mu_hat
    report.n_hat = rep.n_hat
    report.first_positive_window = rep.first_positive_window
    report.dual_deviation = rep.dual_deviation
    if traj.horizon:
        report.max_row_sum_error = float(max(rep.factor_row_sum_error.max(),
                                             rep.gamma_row_sum_error.max()))
        report.min_entry = float(min(rep.factor_min_entry.min(), rep.gamma_min_entry.min()))
    report.monotone = rep.monotone
    report.contraction_excess = rep.contraction_excess if pc is not None else None
    report.e_bound_violations = rep.e_bound_violations
    write_csv(out / "analysis.csv", ANALYSIS_COLUMNS, analysis_rows(rep), cfg.config_hash)
    write_json(out / "summary.json", report.to_dict())
    return report, traj, rep


def analysis_rows(rep: AnalysisReport):
    """Long-format rows ``(section, index, k, quantity, value)``."""
    per_step = {
        "factor_row_sum_error": rep.factor_row_sum_error,
        "factor_min_entry": rep.factor_min_entry,
        "gamma_row_sum_error": rep.gamma_row_sum_error,
        "gamma_min_entry": rep.gamma_min_entry,
        "col_max_increase": rep.col_max_increase,
        "col_min_decrease": rep.col_min_decrease,
        "theta_min_nonzero": rep.theta_min_nonzero,
    }
    for k in range(len(rep.factor_row_sum_error)):
        for q, arr in per_step.items():
            yield ("step", k, k, q, arr[k])
    for k, d in enumerate(rep.dual_deviation_per_step):
        yield ("dual", k, k, "deviation", d)
    ends = [0] + rep.window_ends
    for m, ranges in enumerate(rep.window_ranges):
        for j, val in enumerate(ranges):
            yield ("window", m, ends[m], f"range[{j}]", val)
    pc = rep.positive_column
    if pc is not None:
        for b, (h, mu) in enumerate(zip(pc.block_h, pc.block_mu)):
            yield ("block", b, rep.block_ends[b + 1], "h", h)
            yield ("block", b, rep.block_ends[b + 1], "mu", mu)
    for i, val in enumerate(rep.e_bound):
        yield ("e_bound", i, "", "lower_bound", val)
    for i, val in enumerate(rep.limit_row):
        yield ("limit_row", i, "", "value", val)


# --------------------------------------------------------------------------
# reproduction of the ring example
# --------------------------------------------------------------------------

def _reproduce_one(seed: int, horizon: int, out_dir: str) -> dict:
    cfg = load_config(ring_scenario(seed, horizon))
    report, _, _ = cmd_analyze(cfg, Path(out_dir) / f"seed_{seed}")
    return report.to_dict()


def check_reproduction(report: dict) -> list[tuple[str, str]]:
    """Named acceptance failures for one seed's report (empty when all pass)."""
    fails = []
    s = report["seed"]
    if report["steps_to_threshold"] is None:
        fails.append(("criterion 1", f"seed {s}: diameter {report['final_diameter']:.3e} "
                                     f"never below {DIAMETER_THRESHOLD}"))
    if report["feasibility_violations"]:
        fails.append(("criterion 1", f"seed {s}: {report['feasibility_violations']} "
                                     "infeasible velocities"))
    if report["wall_clock"] >= RUNTIME_LIMIT:
        fails.append(("criterion 1", f"seed {s}: run took {report['wall_clock']:.2f} s"))
    if report["max_delay_used"] > report["max_delay_bound"]:
        fails.append(("delay bound", f"seed {s}: delay {report['max_delay_used']} "
                                     f"> {report['max_delay_bound']}"))
    if report["gain_violations"]:
        fails.append(("criterion 9", f"seed {s}: {report['gain_violations']} gain-chain violations"))
    dev = report.get("dual_deviation")
    if dev is not None and dev > DUAL_LIMIT:
        fails.append(("criterion 7", f"seed {s}: dual deviation {dev:.3e}"))
    return fails


def cmd_reproduce_example(seeds=RING_SEEDS, horizon: int = 600, out_dir="out/reproduce",
                          jobs: int = 1) -> list[dict]:
    """Run the four-agent ring example for each seed and assert its thresholds.

    Raises :class:`AcceptanceFailure` naming the first violated criterion
    after every seed has been run and written.
    """
    seeds = list(seeds)
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_reproduce_one, seeds, [horizon] * len(seeds),
                                    [str(out_dir)] * len(seeds)))
    else:
        reports = [_reproduce_one(s, horizon, str(out_dir)) for s in seeds]
    write_json(Path(out_dir) / "reproduce_summary.json", {"seeds": seeds, "reports": reports})
    fails = [f for rep in reports for f in check_reproduction(rep)]
    if fails:
        crit, detail = fails[0]
        raise AcceptanceFailure(crit, detail + (f" (+{len(fails) - 1} more)" if len(fails) > 1 else ""))
    return reports
