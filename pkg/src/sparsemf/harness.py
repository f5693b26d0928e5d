"""Experiment orchestration: synthetic sweeps, image runs, persistence.

Cells of a sweep run independently (optionally across processes); every
run derives its seeds from the base seed through SHA-256 so that distinct
cells and trials never collide and reruns are bit-reproducible.  Ground
truth seeds deliberately ignore sigma and the fixed-k value, so a noise
sweep or a fixed-k ablation reuses one factor ensemble per (rho, H, trial).

Outputs per experiment directory:

* ``trace.csv``      per-iteration trace (single runs only)
* ``results.json``   versioned record of every run
* ``aggregate.csv``  per-cell mean/stddev of the quality measures
* ``timings.csv``    wall-clock per run (kept out of results.json so the
                     deterministic outputs stay byte-identical on rerun)
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics, pgm, specfile
from .generate import ObservationMatrix, observe, sample_ground_truth
from .solver import RunTrace, SolverConfig, run

KINDS = ("single_run", "rho_h_sweep", "sigma_sweep", "fixed_k_ablation",
         "image_run")

TRACE_COLUMNS = ("iter", "k", "z_b", "rmse_a", "rmse_b", "rmse_v",
                 "sparsity_b")


@dataclass
class ExperimentSpec:
    """One experiment: a grid of cells, each run for ``trials`` trials."""

    kind: str
    l_dim: int = 500
    m_dim: int = 500
    h_values: tuple = (20,)
    rho_values: tuple = (0.8,)
    sigma_values: tuple = (0.05,)
    k_values: Optional[tuple] = None      # fixed_k_ablation grid
    trials: int = 20
    epsilon: float = 0.1
    k0: float = 1e7                       # "very large" start for tuning
    zb_threshold: float = 1e-5
    max_iters: int = 1_000_000
    solver_sigma: Optional[float] = None  # overrides data sigma (images: 0.03)
    noiseless: bool = False
    sparsity_threshold: float = metrics.SPARSITY_THRESHOLD
    image_path: Optional[str] = None
    image_noise_sigma: Optional[float] = None
    normalize: bool = True
    per_column_normalize: bool = False
    trace_stride: int = 1
    base_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        for name in ("h_values", "rho_values", "sigma_values", "k_values"):
            val = getattr(self, name)
            if val is not None:
                if not isinstance(val, (list, tuple)):
                    val = (val,)
                setattr(self, name, tuple(val))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.kind == "fixed_k_ablation" and not self.k_values:
            raise ValueError("fixed_k_ablation requires k_values")
        if self.kind == "image_run" and not self.image_path:
            raise ValueError("image_run requires image_path")

    def cells(self) -> list[dict]:
        """Expand the grid into cell dicts (rho, h, sigma, k_fixed)."""
        if self.kind == "single_run":
            grid = [(self.rho_values[0], self.h_values[0],
                     self.sigma_values[0], None)]
        elif self.kind == "rho_h_sweep":
            grid = [(r, h, self.sigma_values[0], None)
                    for r in self.rho_values for h in self.h_values]
        elif self.kind == "sigma_sweep":
            grid = [(self.rho_values[0], self.h_values[0], s, None)
                    for s in self.sigma_values]
        elif self.kind == "fixed_k_ablation":
            grid = [(self.rho_values[0], self.h_values[0],
                     self.sigma_values[0], k) for k in self.k_values]
        else:  # image_run: one cell per H value
            grid = [(None, h, self.sigma_values[0], None)
                    for h in self.h_values]
        return [{"rho": r, "h": h, "sigma": s, "k_fixed": k}
                for (r, h, s, k) in grid]

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["schema_version"] = specfile.SCHEMA_VERSION
        return out

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentSpec":
        values = dict(values)
        values.pop("schema_version", None)
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - fields
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**values)


@dataclass
class ResultRecord:
    """Outcome of one solver run on one cell."""

    kind: str
    rho: Optional[float]
    h: int
    sigma: float
    k_fixed: Optional[float]
    trial: int
    data_seed: Optional[int]
    init_seed: int
    rmse_a: Optional[float] = None
    rmse_b: Optional[float] = None
    rmse_v: Optional[float] = None
    sparsity_b: Optional[float] = None
    gt_zero_fraction: Optional[float] = None
    termination: str = ""
    iterations: int = 0
    final_k: float = math.nan
    final_zb: float = math.nan
    clamped_total: int = 0
    error: Optional[str] = None
    wall_clock_s: float = 0.0

    def cell_key(self) -> tuple:
        return (self.rho, self.h, self.sigma, self.k_fixed)


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------

def derive_seed(base_seed: int, *parts) -> int:
    """Stable 63-bit seed from the base seed and a label tuple.

    SHA-256 over a canonical text encoding: collision-free across any
    realistic grid and independent of Python hash randomization.
    """
    text = ":".join([str(int(base_seed))] + [repr(p) for p in parts])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def cell_seeds(spec: ExperimentSpec, cell: dict, trial: int) -> tuple[int, int]:
    """(data_seed, init_seed) for one run.

    sigma and k_fixed are left out of the data seed so noise sweeps and
    fixed-k ablations reuse the same ground-truth ensemble.
    """
    data_seed = derive_seed(spec.base_seed, "data", cell["rho"], cell["h"],
                            trial)
    init_seed = derive_seed(spec.base_seed, "init", cell["rho"], cell["h"],
                            cell["sigma"], cell["k_fixed"], trial)
    return data_seed, init_seed


# ---------------------------------------------------------------------------
# Single-run execution
# ---------------------------------------------------------------------------

def _solver_config(spec: ExperimentSpec, cell: dict,
                   init_seed: int) -> SolverConfig:
    sigma = spec.solver_sigma if spec.solver_sigma is not None else cell["sigma"]
    mode = "tuned" if cell["k_fixed"] is None else "fixed_k"
    return SolverConfig(
        sigma=sigma,
        epsilon=spec.epsilon,
        k0=spec.k0,
        zb_threshold=spec.zb_threshold,
        max_iters=spec.max_iters,
        mode=mode,
        fixed_k=cell["k_fixed"],
        init_seed=init_seed,
    )


def _metric_hook(v: np.ndarray, gt, threshold: float):
    """Trace hook: full metrics when ground truth exists, else fit-only."""

    def hook(state):
        try:
            if gt is not None:
                rep = metrics.evaluate(v, gt.a_star, gt.b_star,
                                       state.a_bar, state.b_bar, threshold)
                return {"rmse_a": rep.rmse_a, "rmse_b": rep.rmse_b,
                        "rmse_v": rep.rmse_v, "sparsity_b": rep.sparsity_b}
            return {"rmse_v": metrics.rmse_v(v, state.a_bar, state.b_bar),
                    "sparsity_b": metrics.sparsity_b(
                        state.a_bar, state.b_bar, threshold)}
        except metrics.ZeroColumnError:
            return {}

    return hook


def run_cell(spec: ExperimentSpec, cell: dict, trial: int,
             with_trace: bool = False) -> tuple[ResultRecord, Optional[RunTrace]]:
    """Run one (cell, trial): generate or load data, solve, measure."""
    data_seed, init_seed = cell_seeds(spec, cell, trial)
    gt = None
    if spec.kind == "image_run":
        obs = ingest_image(spec.image_path, normalize=spec.normalize,
                           per_column=spec.per_column_normalize)
        if spec.image_noise_sigma:
            rng = np.random.default_rng(np.random.SeedSequence(data_seed))
            obs = ObservationMatrix(
                v=obs.v + spec.image_noise_sigma * rng.standard_normal(obs.v.shape),
                provenance="image", source_path=obs.source_path)
        data_seed = None
    else:
        gt = sample_ground_truth(spec.l_dim, spec.m_dim, cell["h"],
                                 cell["rho"], seed=data_seed)
        obs = observe(gt, sigma=cell["sigma"], noiseless=spec.noiseless)

    cfg = _solver_config(spec, cell, init_seed)
    hook = _metric_hook(obs.v, gt, spec.sparsity_threshold) if with_trace else None

    record = ResultRecord(kind=spec.kind, rho=cell["rho"], h=cell["h"],
                          sigma=cell["sigma"], k_fixed=cell["k_fixed"],
                          trial=trial, data_seed=data_seed,
                          init_seed=init_seed)
    start = time.perf_counter()
    state, trace = run(obs, cfg, h_dim=cell["h"], metric_hook=hook,
                       trace_stride=spec.trace_stride)
    record.wall_clock_s = time.perf_counter() - start
    record.termination = trace.termination.value
    record.iterations = state.iter
    record.final_k = state.k
    record.final_zb = state.z_b
    record.clamped_total = trace.total_clamped
    record.error = trace.error
    try:
        if gt is not None:
            rep = metrics.evaluate(obs.v, gt.a_star, gt.b_star,
                                   state.a_bar, state.b_bar,
                                   spec.sparsity_threshold)
            record.rmse_a = rep.rmse_a
            record.rmse_b = rep.rmse_b
            record.rmse_v = rep.rmse_v
            record.sparsity_b = rep.sparsity_b
            record.gt_zero_fraction = gt.zero_fraction()
        else:
            record.rmse_v = metrics.rmse_v(obs.v, state.a_bar, state.b_bar)
            record.sparsity_b = metrics.sparsity_b(
                state.a_bar, state.b_bar, spec.sparsity_threshold)
    except metrics.ZeroColumnError as exc:
        record.error = (record.error or "") + f" metrics: {exc}"
    return record, (trace if with_trace else None)


def _run_cell_task(args) -> ResultRecord:
    spec_dict, cell, trial = args
    spec = ExperimentSpec.from_dict(spec_dict)
    try:
        record, _ = run_cell(spec, cell, trial)
    except Exception as exc:  # never kill the sweep on one bad cell
        data_seed, init_seed = cell_seeds(spec, cell, trial)
        record = ResultRecord(kind=spec.kind, rho=cell["rho"], h=cell["h"],
                              sigma=cell["sigma"], k_fixed=cell["k_fixed"],
                              trial=trial, data_seed=data_seed,
                              init_seed=init_seed, error=repr(exc))
    return record


# ---------------------------------------------------------------------------
# Experiment drivers
# ---------------------------------------------------------------------------

def run_single(spec: ExperimentSpec, out_dir) -> tuple[ResultRecord, RunTrace]:
    """One trial with a full per-iteration trace, persisted to disk."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cell = spec.cells()[0]
    record, trace = run_cell(spec, cell, trial=0, with_trace=True)
    write_trace_csv(out / "trace.csv", trace)
    write_results_json(out / "results.json", spec, [record])
    write_aggregate_csv(out / "aggregate.csv", [record])
    write_timings_csv(out / "timings.csv", [record])
    return record, trace


def run_sweep(spec: ExperimentSpec, out_dir, workers: int = 1,
              serial: bool = False) -> list[ResultRecord]:
    """All (cell, trial) runs of a sweep; cells are independent."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(spec.to_dict(), cell, trial)
             for cell in spec.cells() for trial in range(spec.trials)]
    if serial or workers <= 1:
        records = [_run_cell_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_cell_task, tasks))
    records.sort(key=lambda r: (str(r.cell_key()), r.trial))
    write_results_json(out / "results.json", spec, records)
    write_aggregate_csv(out / "aggregate.csv", records)
    write_timings_csv(out / "timings.csv", records)
    return records


run_image = run_sweep  # image runs are a sweep over H with trials = inits


# ---------------------------------------------------------------------------
# Image ingestion
# ---------------------------------------------------------------------------

def ingest_image(path, normalize: bool = True,
                 per_column: bool = False) -> ObservationMatrix:
    """Load an 8-bit PGM as an observation matrix.

    With ``normalize`` the pixels are standardized to zero mean and unit
    variance, globally by default or per column with ``per_column``.
    """
    img = pgm.read_pgm(path)
    if normalize:
        if per_column:
            std = img.std(axis=0)
            if np.any(std == 0.0):
                raise pgm.NormalizationDegenerateError(
                    "a column has zero variance")
            img = (img - img.mean(axis=0)) / std
        else:
            img = pgm.standardize(img)
    return ObservationMatrix(v=img, provenance="image", source_path=str(path))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def _atomic_write(path, data: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trace_csv(path, trace: RunTrace) -> None:
    """Fixed column order; absent metrics serialize as empty fields."""
    lines = [",".join(TRACE_COLUMNS)]
    for rec in trace.records:
        lines.append(",".join([
            str(rec.iter), _fmt(rec.k), _fmt(rec.z_b), _fmt(rec.rmse_a),
            _fmt(rec.rmse_b), _fmt(rec.rmse_v), _fmt(rec.sparsity_b),
        ]))
    _atomic_write(path, "\n".join(lines) + "\n")


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isfinite(obj):
            return obj
        return repr(obj)  # 'inf', '-inf', 'nan'
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_results_json(path, spec: ExperimentSpec,
                       records: list[ResultRecord]) -> None:
    """Versioned run records.  Wall-clock lives in timings.csv instead so
    this file is byte-identical across reruns of the same spec."""
    recs = []
    for r in records:
        d = dataclasses.asdict(r)
        d.pop("wall_clock_s")
        recs.append(_json_safe(d))
    payload = {"schema": specfile.SCHEMA_VERSION,
               "spec": _json_safe(spec.to_dict()),
               "records": recs}
    _atomic_write(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")


def write_timings_csv(path, records: list[ResultRecord]) -> None:
    lines = ["rho,h,sigma,k_fixed,trial,iterations,wall_clock_s"]
    for r in records:
        lines.append(",".join([
            _fmt(r.rho), str(r.h), _fmt(r.sigma), _fmt(r.k_fixed),
            str(r.trial), str(r.iterations), _fmt(r.wall_clock_s)]))
    _atomic_write(path, "\n".join(lines) + "\n")


_AGG_FIELDS = ("rmse_a", "rmse_b", "rmse_v", "sparsity_b")


def aggregate(records: list[ResultRecord]) -> list[dict]:
    """Per-cell mean/stddev (population) of each quality measure."""
    cells: dict[tuple, list[ResultRecord]] = {}
    for r in records:
        cells.setdefault(r.cell_key(), []).append(r)
    rows = []
    for key in sorted(cells, key=str):
        group = cells[key]
        row = {"rho": key[0], "h": key[1], "sigma": key[2], "k_fixed": key[3],
               "trials": len(group)}
        for name in _AGG_FIELDS:
            vals = [getattr(r, name) for r in group
                    if getattr(r, name) is not None]
            if vals:
                row[f"{name}_mean"] = float(np.mean(vals))
                row[f"{name}_std"] = float(np.std(vals))
            else:
                row[f"{name}_mean"] = None
                row[f"{name}_std"] = None
        row["iterations_mean"] = float(np.mean([r.iterations for r in group]))
        rows.append(row)
    return rows


def write_aggregate_csv(path, records: list[ResultRecord]) -> None:
    rows = aggregate(records)
    header = ["rho", "h", "sigma", "k_fixed", "trials"]
    for name in _AGG_FIELDS:
        header += [f"{name}_mean", f"{name}_std"]
    header.append("iterations_mean")
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for col in header:
            val = row[col]
            if col in ("h", "trials"):
                cells.append(str(val))
            else:
                cells.append(_fmt(val))
        lines.append(",".join(cells))
    _atomic_write(path, "\n".join(lines) + "\n")


def load_results_json(path) -> tuple[ExperimentSpec, list[ResultRecord]]:
    payload = json.loads(Path(path).read_text())
    if payload.get("schema") != specfile.SCHEMA_VERSION:
        raise ValueError(f"unsupported schema {payload.get('schema')!r}")
    spec = ExperimentSpec.from_dict({
        k: (tuple(v) if isinstance(v, list) else v)
        for k, v in payload["spec"].items()})
    records = []
    for d in payload["records"]:
        d = dict(d)
        for key, val in d.items():
            if isinstance(val, str) and val in ("inf", "-inf", "nan"):
                d[key] = float(val)
        records.append(ResultRecord(**d))
    return spec, records
