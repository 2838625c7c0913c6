"""Ensemble execution: expand a scenario into arms, run realizations, write outputs.

Every (arm, realization) pair is an independent task.  Tasks may run in a
process pool; results are merged in (arm, realization) order so the output
files never depend on the number of workers.  Paired arms use the same
master seed and realization index, so their random streams agree until the
intervention first draws from them.
"""

from __future__ import annotations

import json
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .engine import STREAM_NAMES, derive_key
from .metrics import (
    CONTACT_HEADER,
    ECON_HEADER,
    INCIDENCE_HEADER,
    SUMMARY_HEADER,
    ContactLog,
    contact_matrix,
    contact_rows,
    fmt,
    incidence_rows,
    summarize,
    summary_rows,
    write_csv,
)
from .pertussis import PertussisModel
from .plots import bar_chart, fan_chart, heatmap
from .scenario import _ADAPTER, PertussisScenario, VaricellaScenario, scenario_to_dict
from .simulation import COST_CATEGORIES, RunResult
from .varicella import VaricellaModel


@dataclass(frozen=True)
class ArmSpec:
    name: str
    intervention: bool
    boosting_duration: float | None = None
    baseline: str | None = None  # arm this one is paired with


@dataclass
class TaskFailure:
    arm: str
    realization: int
    error: str


@dataclass
class EnsembleResult:
    arms: list[ArmSpec]
    results: dict[str, list[RunResult]] = field(default_factory=dict)
    failures: list[TaskFailure] = field(default_factory=list)

    def runs(self, arm: str) -> list[RunResult]:
        return self.results.get(arm, [])


def _fmt_duration(d: float) -> str:
    return fmt(d).replace(".", "p")


def expand_arms(cfg: VaricellaScenario | PertussisScenario) -> list[ArmSpec]:
    """Arms to simulate, baselines before their paired intervention arms."""
    arms: list[ArmSpec] = []
    if isinstance(cfg, VaricellaScenario):
        iv = cfg.intervention
        sweep = iv.boosting_durations
        for d in sweep if sweep is not None else [cfg.params.boosting_duration]:
            suffix = f"_D{_fmt_duration(d)}" if sweep is not None else ""
            base = f"baseline{suffix}"
            arms.append(ArmSpec(base, False, d))
            if iv.vaccination:
                arms.append(ArmSpec(f"intervention{suffix}", True, d, base))
    else:
        arms.append(ArmSpec("baseline", False))
        if cfg.intervention.maternal_coverage > 0:
            arms.append(ArmSpec("intervention", True, None, "baseline"))
    return arms


def build_model(cfg: VaricellaScenario | PertussisScenario, arm: ArmSpec, realization: int):
    common = dict(
        population_size=cfg.population_size,
        burn_in=cfg.burn_in,
        horizon=cfg.horizon,
        seed=cfg.master_seed,
        realization=realization,
        demography=cfg.demography,
        arm=arm.name,
    )
    if isinstance(cfg, VaricellaScenario):
        params = cfg.params
        if arm.boosting_duration is not None and arm.boosting_duration != params.boosting_duration:
            params = params.model_copy(update={"boosting_duration": arm.boosting_duration})
        return VaricellaModel(
            params,
            vaccination=arm.intervention,
            vaccination_start=cfg.intervention.start,
            econ=cfg.econ,
            **common,
        )
    iv = cfg.intervention
    return PertussisModel(
        cfg.resolved_params(),
        maternal_coverage=iv.maternal_coverage if arm.intervention else 0.0,
        intervention_start=iv.start,
        blunting=iv.blunting,
        passive_transfer=iv.passive_protection,
        **common,
    )


def _run_task(task: tuple[dict, ArmSpec, int]) -> RunResult | TaskFailure:
    cfg_dict, arm, r = task
    try:
        cfg = _ADAPTER.validate_python(cfg_dict)
        return build_model(cfg, arm, r).run()
    except Exception:  # noqa: BLE001 - a failed realization is reported, not raised
        return TaskFailure(arm.name, r, traceback.format_exc())


def resolve_jobs(jobs: int | None) -> int:
    """Worker count: explicit value, else ``ABM_THREADS``, else 1."""
    if jobs is None:
        env = os.environ.get("ABM_THREADS", "").strip()
        jobs = int(env) if env else 1
    if jobs < 1:
        raise ValueError("job count must be >= 1")
    return jobs


def execute(
    cfg: VaricellaScenario | PertussisScenario,
    jobs: int | None = None,
    progress: Callable[[str], None] | None = None,
    arms: list[ArmSpec] | None = None,
) -> EnsembleResult:
    """Run every arm (default: all of the scenario's) for every realization.

    Results come back in task order whatever the worker count.
    """
    jobs = resolve_jobs(jobs)
    arms = expand_arms(cfg) if arms is None else arms
    cfg_dict = scenario_to_dict(cfg)
    tasks = [(cfg_dict, arm, r) for arm in arms for r in range(cfg.realizations)]
    if jobs == 1 or len(tasks) == 1:
        outcomes = []
        for t in tasks:
            outcomes.append(_run_task(t))
            if progress:
                progress(f"{t[1].name} realization {t[2]} done")
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_task, tasks))
    ens = EnsembleResult(arms, {a.name: [] for a in arms})
    for (_, arm, r), out in zip(tasks, outcomes):
        if isinstance(out, TaskFailure):
            ens.failures.append(out)
        else:
            ens.results[arm.name].append(out)
    return ens


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------

def _yearly_matrix(runs: list[RunResult], outcome: str) -> np.ndarray:
    return np.vstack([r.yearly_total(outcome) for r in runs])


def _paired(ens: EnsembleResult, arm: ArmSpec, outcome: str) -> np.ndarray | None:
    base = {r.realization: r for r in ens.runs(arm.baseline)}
    rows = [
        r.yearly_total(outcome) - base[r.realization].yearly_total(outcome)
        for r in ens.runs(arm.name) if r.realization in base
    ]
    return np.vstack(rows) if rows else None


def write_outputs(cfg, ens: EnsembleResult, out: Path) -> list[str]:
    """Write CSVs and SVGs for a finished ensemble; return the file names."""
    out.mkdir(parents=True, exist_ok=True)
    files: list[str] = []

    def put(name: str) -> Path:
        files.append(name)
        return out / name

    all_runs = [r for a in ens.arms for r in ens.runs(a.name)]
    outcomes = list(all_runs[0].incidence) if all_runs else []

    rows = []
    for arm in ens.arms:
        for r in ens.runs(arm.name):
            for o in outcomes:
                rows.extend(incidence_rows(arm.name, r.realization, o, r.incidence[o]))
    write_csv(put("incidence.csv"), INCIDENCE_HEADER, rows)

    summaries: dict[str, dict[str, object]] = {o: {} for o in outcomes}
    rows = []
    for o in outcomes:
        for arm in ens.arms:
            runs = ens.runs(arm.name)
            if not runs:
                continue
            years = runs[0].incidence[o].years
            s = summarize(_yearly_matrix(runs, o), years, arm.name)
            summaries[o][arm.name] = s
            rows.extend(summary_rows(arm.name, o, s))
        for arm in ens.arms:
            if arm.baseline is None:
                continue
            diff = _paired(ens, arm, o)
            if diff is None:
                continue
            name = f"{arm.name}-{arm.baseline}"
            s = summarize(diff, ens.runs(arm.name)[0].incidence[o].years, name)
            summaries[o][name] = s
            rows.extend(summary_rows(name, o, s))
    write_csv(put("summary.csv"), SUMMARY_HEADER, rows)

    rows = []
    for arm in ens.arms:
        for r in ens.runs(arm.name):
            for c in COST_CATEGORIES:
                rows.append([arm.name, r.realization, c, r.costs.get(c, 0.0), r.qalys])
    write_csv(put("econ.csv"), ECON_HEADER, rows)

    rows = []
    for arm in ens.arms:
        for r in ens.runs(arm.name):
            for k, v in r.stats.items():
                rows.append([arm.name, r.realization, k, v])
    write_csv(put("stats.csv"), ("arm", "realization", "statistic", "value"), rows)

    rows = []
    for arm in ens.arms:
        for r in ens.runs(arm.name):
            for name, vals in r.curves.items():
                for i, v in enumerate(vals):
                    rows.append([arm.name, r.realization, name, i, v])
    if rows:
        write_csv(put("curves.csv"), ("arm", "realization", "curve", "index", "value"), rows)

    contacts = None
    for r in all_runs:
        if r.contacts is not None:
            if contacts is None:
                contacts = ContactLog(r.contacts.bin_width, r.contacts.max_age)
            contacts.merge(r.contacts)
    if contacts is not None:
        write_csv(put("contact_matrix.csv"), CONTACT_HEADER, contact_rows(contacts))
        m, _ = contact_matrix(contacts)
        heatmap(put("contact_matrix.svg"), m, contacts.labels(), "Mean daily contacts by age")

    for o in outcomes:
        direct = {k: v for k, v in summaries[o].items() if "-" not in k}
        paired = {k: v for k, v in summaries[o].items() if "-" in k}
        fan_chart(put(f"fan_{o}.svg"), direct, f"Yearly {o} cases", "cases per year")
        if paired:
            fan_chart(put(f"fan_{o}_difference.svg"), paired, f"Paired difference in {o} cases",
                      "intervention - baseline")
        labels = None
        series = {}
        for arm in ens.arms:
            runs = ens.runs(arm.name)
            if not runs:
                continue
            inc = runs[0].incidence[o]
            labels = inc.bin_labels()
            post = inc.years >= 0
            counts = sum(r.incidence[o].counts[post] for r in runs).sum(axis=0)
            py = sum(r.incidence[o].person_years[post] for r in runs).sum(axis=0)
            with np.errstate(divide="ignore", invalid="ignore"):
                series[arm.name] = np.where(py > 0, counts / py * 1e5, 0.0)
        if labels is not None:
            bar_chart(put(f"age_incidence_{o}.svg"), labels, series,
                      f"{o} incidence by age after burn-in", "per 100,000 per year")
    return files


def seed_table(cfg) -> list[dict]:
    return [
        {
            "realization": r,
            "master_seed": cfg.master_seed,
            "stream_keys": {s: format(derive_key(cfg.master_seed, r, s), "x") for s in STREAM_NAMES},
        }
        for r in range(cfg.realizations)
    ]


def run_ensemble(cfg, out_dir, jobs: int | None = None, progress=None) -> dict:
    """Execute a scenario and write all outputs plus ``manifest.json``."""
    out = Path(out_dir)
    started = time.time()
    ens = execute(cfg, jobs, progress)
    files = write_outputs(cfg, ens, out)
    finished = time.time()
    manifest = {
        "engine_version": __version__,
        "config": scenario_to_dict(cfg),
        "arms": [a.name for a in ens.arms],
        "seeds": seed_table(cfg),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(finished)),
        "wall_seconds": round(finished - started, 3),
        "jobs": resolve_jobs(jobs),
        "files": sorted(files) + ["manifest.json"],
        "failures": [
            {"arm": f.arm, "realization": f.realization, "error": f.error} for f in ens.failures
        ],
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
