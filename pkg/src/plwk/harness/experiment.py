"""Experiment orchestration and CSV output.

Randomness flows from one root seed. Noise for a given noise level is drawn
from ``SeedSequence(seed, spawn_key=(1, level_key))`` and the index-order
stream of a run from ``SeedSequence(seed, spawn_key=(2, method_key,
level_key))``, where ``level_key`` is the noise percentage in micro-percent.
Any single run can therefore be reproduced on its own.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import platform
import time
from dataclasses import dataclass, field
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from ..core import ConfigError, PLWKError, RunRecord, SolverConfig, validate_config
from ..problems import PROBLEMS, get_problem
from ..solver import METHODS, Method, run
from .noise import add_noise

log = logging.getLogger(__name__)

CSV_COLUMNS = ("cycle", "error_ref", "residual_sum", "residual_max", "skipped_steps", "cum_pde_solves")


def _level_key(pct: float) -> int:
    return int(round(pct * 1e6))


def noise_rng(seed: int, pct: float) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, _level_key(pct))))


def run_seed(seed: int, method: str, pct: float) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(2, METHODS.index(method), _level_key(pct)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class ExperimentSpec:
    problem: str = "elliptic"
    problem_options: dict = field(default_factory=dict)
    methods: tuple = ("PLWK",)
    noise_percents: tuple = (2.0,)
    solver: SolverConfig = field(default_factory=SolverConfig)
    out_dir: Optional[Path] = None
    seed: int = 0
    lwk_mu: Optional[float] = None
    lwkls_cap: Optional[float] = None

    def validate(self) -> "ExperimentSpec":
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}")
        if not self.methods:
            raise ConfigError("method list is empty")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if not self.noise_percents:
            raise ConfigError("noise level list is empty")
        if any(p < 0 for p in self.noise_percents):
            raise ConfigError("noise percentages must be non-negative")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.out_dir is not None:
            out = Path(self.out_dir)
            if out.exists() and not (out.is_dir() and os.access(out, os.W_OK)):
                raise ConfigError(f"output directory {out} is not writable")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["solver"]["theta"] = list(self.solver.theta.values)
        d["out_dir"] = None if self.out_dir is None else str(self.out_dir)
        d["methods"] = list(self.methods)
        d["noise_percents"] = list(self.noise_percents)
        return d


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    records: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    problem_config: dict = field(default_factory=dict)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_cycles_csv(record: RunRecord, path: Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in record.cycles:
            w.writerow([_fmt(getattr(row, c)) for c in CSV_COLUMNS])
    return path


def _csv_name(problem: str, method: str, pct: float) -> str:
    return f"{problem}_{method}_noise{pct:g}.csv"


def _version() -> str:
    try:
        return importlib_metadata.version("artifact")
    except importlib_metadata.PackageNotFoundError:
        return "unknown"


def run_experiment(spec: ExperimentSpec, problem=None) -> ExperimentResult:
    """Run every (method, noise level) pair of ``spec``.

    One CSV per run and a ``metadata.json`` are written when ``spec.out_dir``
    is set. A run that raises is recorded in ``failures`` and the remaining
    runs continue.
    """
    spec.validate()
    if problem is None:
        problem = get_problem(spec.problem, spec.problem_options)
    sys = problem.system()
    validate_config(spec.solver, sys)
    exact = problem.exact_data()
    out = None
    if spec.out_dir is not None:
        out = Path(spec.out_dir)
        out.mkdir(parents=True, exist_ok=True)

    result = ExperimentResult(spec, problem_config=problem.config.to_dict())
    meta_runs = []
    for pct in spec.noise_percents:
        obs = add_noise(exact, pct, noise_rng(spec.seed, pct), sys.data_norm)
        for tag in spec.methods:
            seed = run_seed(spec.seed, tag, pct)
            cfg = dataclasses.replace(spec.solver, rng_seed=seed)
            method = Method(tag, mu=spec.lwk_mu, ls_cap=spec.lwkls_cap)
            t0 = time.perf_counter()
            entry = {"method": tag, "noise_percent": pct, "rng_seed": seed}
            try:
                rec = run(method, sys, obs, cfg, reference=problem.reference, exact_data=exact)
            except PLWKError as exc:
                log.warning("%s at %g%% noise failed: %s", tag, pct, exc)
                result.failures[(tag, pct)] = exc
                entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            else:
                result.records[(tag, pct)] = rec
                entry.update(
                    status="ok", stop_reason=rec.stop_reason, stop_index=rec.stop_index,
                    cycles_executed=rec.cycles_executed, final_error=rec.cycles[-1].error_ref,
                    cum_pde_solves=rec.cycles[-1].cum_pde_solves,
                    lwk_mu=rec.metadata["mu"], lwkls_cap=rec.metadata["ls_cap"],
                )
                if out is not None:
                    result.paths[(tag, pct)] = write_cycles_csv(rec, out / _csv_name(spec.problem, tag, pct))
            entry["wall_time_s"] = time.perf_counter() - t0
            entry["noise_levels"] = list(obs.noise_levels)
            meta_runs.append(entry)

    if out is not None:
        meta = {
            "spec": spec.to_dict(),
            "problem_config": result.problem_config,
            "derivative_bound": sys.derivative_bound,
            "domain_radius": sys.domain_radius,
            "defaults_note": "LWK step mu = 0.9/C^2 and LWKls cap = 1e4/C^2 unless overridden",
            "software": {"package": _version(), "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "runs": meta_runs,
        }
        (out / "metadata.json").write_text(json.dumps(meta, indent=2, default=str))
    return result


def compare_methods(spec: ExperimentSpec, problem=None) -> dict:
    """Per noise level, a cycle-aligned table with one column group per method."""
    result = run_experiment(spec, problem)
    tables = {}
    for pct in spec.noise_percents:
        recs = {m: result.records.get((m, pct)) for m in spec.methods}
        n_rows = max((len(r.cycles) for r in recs.values() if r is not None), default=0)
        header = ["cycle"]
        for m in spec.methods:
            header += [f"{m}_error_ref", f"{m}_residual_sum", f"{m}_cum_pde_solves"]
        rows = []
        for c in range(n_rows):
            row = [str(c)]
            for m in spec.methods:
                r = recs[m]
                if r is None or c >= len(r.cycles):
                    row += ["", "", ""]
                else:
                    cr = r.cycles[c]
                    row += [_fmt(cr.error_ref), _fmt(cr.residual_sum), _fmt(cr.cum_pde_solves)]
            rows.append(row)
        tables[pct] = (header, rows)
        if spec.out_dir is not None:
            with (Path(spec.out_dir) / f"compare_noise{pct:g}.csv").open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)
    return {"result": result, "tables": tables}


SWEEP_COLUMNS = ("noise_percent", "stop_index", "stop_reason", "error_at_stop", "skipped_fraction")


def sweep_noise(spec: ExperimentSpec, problem=None) -> dict:
    """Stopping index, final error and skipped fraction for each noise level."""
    if len(spec.noise_percents) < 3:
        raise ConfigError("a noise sweep needs at least three levels")
    result = run_experiment(spec, problem)
    tables = {}
    for m in spec.methods:
        rows = []
        for pct in spec.noise_percents:
            rec = result.records.get((m, pct))
            if rec is None:
                rows.append((pct, None, "failed", float("nan"), float("nan")))
                continue
            skipped = sum(1 - s.omega for s in rec.steps)
            rows.append((pct, rec.stop_index, rec.stop_reason, rec.cycles[-1].error_ref,
                         skipped / max(len(rec.steps), 1)))
        tables[m] = rows
        if spec.out_dir is not None:
            with (Path(spec.out_dir) / f"sweep_{spec.problem}_{m}.csv").open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(SWEEP_COLUMNS)
                for pct, k, reason, err, frac in rows:
                    w.writerow([_fmt(pct), "" if k is None else str(k), reason, _fmt(err), _fmt(frac)])
    return {"result": result, "tables": tables}
