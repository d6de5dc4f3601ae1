"""Monte-Carlo experiment configuration, execution and results persistence."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import baselines, dof, rs_wmmse
from .channel import channel_hash, derived_seed, trial_channels
from .model import (
    CONVENTION_TAG,
    STATUS_SOLVER_FAILURE,
    PowerBudget,
    SystemDims,
    ValidationError,
    dims_from_dict,
    dims_to_dict,
    realized_total_power,
    validate,
)

log = logging.getLogger(__name__)

ALGORITHMS = ("rs", "no_rs", "sdr", "sdr_bound", "tdm")
CSV_HEADER = [
    "algo", "snr_db", "trial", "sum_mmf_rate", "per_subcarrier_rates", "iterations",
    "solve_time_ms", "status", "power_used", "channel_hash", "convention_tag",
]
FAILURE_PREFIXES = (STATUS_SOLVER_FAILURE, "error")
DOF_WINDOW_DB = 10.0


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dims: SystemDims
    snr_grid_db: list
    n_trials: int = 20
    master_seed: int = 0
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    rs_config: rs_wmmse.RsConfig = field(default_factory=rs_wmmse.RsConfig)
    sdr_config: baselines.SdrConfig = field(default_factory=baselines.SdrConfig)
    output_path: str = "results.csv"
    noise_var: float = 1.0
    workers: int = 1
    # wall-clock times break byte-identical reruns, so they are opt-in
    record_timing: bool = False

    def __post_init__(self):
        errs = self.dims.errors()
        grid = list(self.snr_grid_db)
        if not grid:
            errs.append("snr_grid_db must be non-empty")
        elif any(b <= a for a, b in zip(grid, grid[1:])):
            errs.append("snr_grid_db must be strictly increasing")
        if self.n_trials < 1:
            errs.append("n_trials must be >= 1")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            errs.append(f"unknown algorithms {unknown}")
        if not self.algorithms:
            errs.append("algorithms must be non-empty")
        if errs:
            raise ConfigError("; ".join(errs))

    def to_dict(self) -> dict:
        return {
            "dims": dims_to_dict(self.dims),
            "snr_grid_db": [float(s) for s in self.snr_grid_db],
            "n_trials": self.n_trials,
            "master_seed": self.master_seed,
            "algorithms": list(self.algorithms),
            "rs_config": asdict(self.rs_config),
            "sdr_config": asdict(self.sdr_config),
            "output_path": str(self.output_path),
            "noise_var": self.noise_var,
            "workers": self.workers,
            "record_timing": self.record_timing,
        }


def config_from_dict(d: dict, base_dir=None) -> ExperimentConfig:
    try:
        dims_spec = d["dims"]
        if isinstance(dims_spec, str):
            dims = SystemDims.from_label(dims_spec)
        else:
            dims = dims_from_dict(dims_spec)
        out = d.get("output_path", "results.csv")
        if base_dir is not None and not os.path.isabs(out):
            out = str(Path(base_dir) / out)
        return ExperimentConfig(
            dims=dims,
            snr_grid_db=[float(s) for s in d["snr_grid_db"]],
            n_trials=int(d.get("n_trials", 20)),
            master_seed=int(d.get("master_seed", 0)),
            algorithms=list(d.get("algorithms", ALGORITHMS)),
            rs_config=rs_wmmse.RsConfig(**(d.get("rs_config") or {})),
            sdr_config=baselines.SdrConfig(**(d.get("sdr_config") or {})),
            output_path=out,
            noise_var=float(d.get("noise_var", 1.0)),
            workers=int(d.get("workers", 1)),
            record_timing=bool(d.get("record_timing", False)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    # relative output paths resolve against the working directory, not the config file
    return config_from_dict(data)


# ------------------------------------------------------------------ work items

def _families(algorithms) -> list:
    fams = []
    if "rs" in algorithms or "no_rs" in algorithms:
        fams.append("wmmse")
    if "sdr" in algorithms or "sdr_bound" in algorithms:
        fams.append("sdr")
    if "tdm" in algorithms:
        fams.append("tdm")
    return fams


FAMILY_ALGOS = {"wmmse": ("rs", "no_rs"), "sdr": ("sdr", "sdr_bound"), "tdm": ("tdm",)}


def _item_seed(master_seed, *keys) -> int:
    return int(derived_seed(master_seed, *keys).generate_state(1)[0])


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".12g")


def _row(algo, snr, trial, rate, per_sub, iterations, elapsed_ms, status, power, chash, record_timing):
    return {
        "algo": algo,
        "snr_db": _fmt(snr),
        "trial": str(trial),
        "sum_mmf_rate": _fmt(rate),
        "per_subcarrier_rates": ";".join(_fmt(v) for v in per_sub),
        "iterations": str(int(iterations)),
        "solve_time_ms": _fmt(elapsed_ms) if record_timing else "",
        "status": status,
        "power_used": _fmt(power),
        "channel_hash": chash,
        "convention_tag": CONVENTION_TAG,
    }


def run_item(cfg: ExperimentConfig, family: str, snr_index: int, trial: int):
    """Compute one (family, snr, trial) cell. Returns (rows, trace_records)."""
    snr = cfg.snr_grid_db[snr_index]
    dims = cfg.dims
    ch = trial_channels(dims, cfg.master_seed, trial, cfg.noise_var)
    chash = channel_hash(ch)
    budget = PowerBudget.from_snr_db(snr, cfg.noise_var)
    wanted = [a for a in FAMILY_ALGOS[family] if a in cfg.algorithms]
    rows, traces = [], []
    t0 = time.perf_counter()
    try:
        errs = validate(dims, ch, budget)
        if errs:
            raise ValidationError(errs)
        if family == "wmmse":
            seed = _item_seed(cfg.master_seed, 1, trial, snr_index)
            results = {}
            t_start = time.perf_counter()
            nr = rs_wmmse.optimize(ch, budget, dims, cfg.rs_config, mode="no_rs", seed=seed)
            results["no_rs"] = (nr, time.perf_counter() - t_start)
            if "rs" in wanted:
                t_start = time.perf_counter()
                rs = rs_wmmse.optimize(ch, budget, dims, cfg.rs_config, mode="rs", seed=seed, warm_start=nr[0])
                results["rs"] = (rs, time.perf_counter() - t_start)
            for algo in wanted:
                (pset, _, rep, _), elapsed = results[algo]
                rows.append(_row(algo, snr, trial, rep.sum_mmf, rep.subcarrier_mmf, rep.iterations,
                                 1e3 * elapsed, rep.status, realized_total_power(pset), chash, cfg.record_timing))
                runs = rep.extras["runs"]
                traces.append({
                    "algo": algo, "snr_db": float(snr), "trial": trial,
                    "max_ascent_violation": max(r.ascent_violation() for r in runs),
                    "run_status": rep.extras["run_status"],
                    "runs": [r.to_dict() for r in runs],
                })
        elif family == "sdr":
            scfg = replace(cfg.sdr_config, seed=_item_seed(cfg.master_seed, 2, trial, snr_index))
            pset, rep, bound = baselines.sdr_mmf(ch, budget, dims, scfg)
            elapsed = 1e3 * (time.perf_counter() - t0)
            bis = rep.extras["bisection"]
            status = rep.status
            if "sdr" in wanted:
                rows.append(_row("sdr", snr, trial, rep.sum_mmf, rep.subcarrier_mmf, rep.iterations, elapsed,
                                 status, realized_total_power(pset), chash, cfg.record_timing))
            if "sdr_bound" in wanted:
                rows.append(_row("sdr_bound", snr, trial, bound, [b.bound for b in bis], rep.iterations, elapsed,
                                 status, sum(rep.extras["caps"]), chash, cfg.record_timing))
            traces.append({
                "algo": "sdr", "snr_db": float(snr), "trial": trial,
                "feasible_le_bound": bool(rep.sum_mmf <= bound + 1e-6),
                "bisection_monotone": all(b.is_monotone() for b in bis),
                "solver_failures": int(rep.extras["failures"]),
                "bisection": [[list(t) for t in b.trace] for b in bis],
            })
        else:
            scfg = replace(cfg.sdr_config, seed=_item_seed(cfg.master_seed, 3, trial, snr_index))
            rep = baselines.tdm_mmf(ch, budget, dims, scfg)
            elapsed = 1e3 * (time.perf_counter() - t0)
            rows.append(_row("tdm", snr, trial, rep.sum_mmf, rep.subcarrier_mmf, rep.iterations, elapsed,
                             rep.status, rep.extras["power_per_slot"], chash, cfg.record_timing))
            bis = rep.extras["bisection"]
            traces.append({
                "algo": "tdm", "snr_db": float(snr), "trial": trial,
                "bisection_monotone": all(b.is_monotone() for b in bis),
                "solver_failures": int(rep.extras["failures"]),
            })
    except Exception as exc:  # a failed cell must not take down the sweep
        log.exception("cell (%s, %s, %s) failed", family, snr, trial)
        elapsed = 1e3 * (time.perf_counter() - t0)
        done = {r["algo"] for r in rows}
        for algo in wanted:
            if algo not in done:
                rows.append(_row(algo, snr, trial, float("nan"), [float("nan")] * dims.n_subcarriers, 0, elapsed,
                                 f"error:{type(exc).__name__}", float("nan"), chash, cfg.record_timing))
    return rows, traces


def _run_item_star(args):
    return run_item(*args)


# ------------------------------------------------------------------ persistence

def _sort_key(row):
    return (row["algo"], float(row["snr_db"]), int(row["trial"]))


def write_rows(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_HEADER, lineterminator="\n")
        w.writeheader()
        for row in sorted(rows, key=_sort_key):
            w.writerow(row)
    os.replace(tmp, path)


def read_rows(path) -> list:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_HEADER:
            raise ConfigError(f"{path} does not have the results header")
        return list(reader)


def traces_path(output_path) -> Path:
    p = Path(output_path)
    return p.with_name(p.name + ".traces.jsonl")


def _trace_key(rec):
    return (rec["algo"], float(rec["snr_db"]), int(rec["trial"]))


def write_traces(path, records) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as f:
        for rec in sorted(records, key=_trace_key):
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_traces(path) -> list:
    path = Path(path)
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


# ------------------------------------------------------------------ driver

@dataclass
class ExperimentResult:
    rows: list
    traces: list
    summary: dict
    n_failures: int
    output_path: str


def _cell_key(algo, snr, trial):
    return (algo, _fmt(snr), str(trial))


def run_experiment(cfg: ExperimentConfig, output_path=None, progress=None) -> ExperimentResult:
    """Run every missing (algo, snr, trial) cell and persist rows after each work item."""
    out = Path(output_path or cfg.output_path)
    rows, traces = [], []
    if out.exists():
        rows = [r for r in read_rows(out)
                if r["algo"] in cfg.algorithms and int(r["trial"]) < cfg.n_trials
                and float(r["snr_db"]) in cfg.snr_grid_db]
        traces = read_traces(traces_path(out))
    done = {(r["algo"], r["snr_db"], r["trial"]) for r in rows}

    items = []
    for trial in range(cfg.n_trials):
        for si, snr in enumerate(cfg.snr_grid_db):
            for fam in _families(cfg.algorithms):
                algos = [a for a in FAMILY_ALGOS[fam] if a in cfg.algorithms]
                if all(_cell_key(a, snr, trial) in done for a in algos):
                    continue
                items.append((fam, si, trial))
    # drop partial leftovers of cells about to be recomputed
    redo = {(fam, _fmt(cfg.snr_grid_db[si]), str(t)) for fam, si, t in items}
    fam_of = {a: f for f, algos in FAMILY_ALGOS.items() for a in algos}
    rows = [r for r in rows if (fam_of[r["algo"]], r["snr_db"], r["trial"]) not in redo]
    traces = [t for t in traces if (fam_of[t["algo"]], _fmt(t["snr_db"]), str(t["trial"])) not in redo]

    def _collect(result, i):
        new_rows, new_traces = result
        rows.extend(new_rows)
        traces.extend(new_traces)
        write_rows(out, rows)
        write_traces(traces_path(out), traces)
        if progress:
            progress(i + 1, len(items))

    if cfg.workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            args = [(cfg, fam, si, t) for fam, si, t in items]
            for i, result in enumerate(pool.map(_run_item_star, args)):
                _collect(result, i)
    else:
        for i, (fam, si, t) in enumerate(items):
            _collect(run_item(cfg, fam, si, t), i)
    if not items:
        write_rows(out, rows)
        write_traces(traces_path(out), traces)

    n_fail = sum(1 for r in rows if r["status"].startswith(FAILURE_PREFIXES))
    return ExperimentResult(sorted(rows, key=_sort_key), sorted(traces, key=_trace_key),
                            summarize(rows, cfg.dims.n_subcarriers), n_fail, str(out))


# ------------------------------------------------------------------ summary

def _stats(values):
    arr = np.asarray(values, dtype=float)
    arr = arr[np.isfinite(arr)]
    if arr.size == 0:
        return float("nan"), float("nan"), 0
    if arr.size == 1:
        return float(arr[0]), 0.0, 1
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size)), int(arr.size)


def summarize(rows, n_subcarriers: int, dof_window_db: float = DOF_WINDOW_DB) -> dict:
    """Per-(algo, snr) mean/stderr, per-subcarrier means, high-SNR DoF fits and RS-TDM gaps."""
    cells = {}
    for r in rows:
        cells.setdefault((r["algo"], float(r["snr_db"])), []).append(r)
    table = []
    for (algo, snr), rs in sorted(cells.items()):
        mean, se, n = _stats([float(r["sum_mmf_rate"]) for r in rs])
        per_sub = np.array([[float(v) for v in r["per_subcarrier_rates"].split(";")] for r in rs])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns from failed cells
            sub_mean = np.nanmean(per_sub, axis=0) if per_sub.size else np.array([])
        table.append({"algo": algo, "snr_db": snr, "n": n, "mean": mean, "stderr": se,
                      "per_subcarrier_mean": [float(v) for v in sub_mean]})
    algos = sorted({a for a, _ in cells})
    dofs = {}
    for algo in algos:
        curve = [(t["snr_db"], t["mean"]) for t in table if t["algo"] == algo]
        try:
            value, window = dof.fit_high_snr(curve, n_subcarriers, dof_window_db)
        except dof.InsufficientPoints:
            value, window = float("nan"), []
        dofs[algo] = {"dof": value, "window_db": window}
    gaps = []
    means = {(t["algo"], t["snr_db"]): t["mean"] for t in table}
    for (algo, snr), mean in sorted(means.items()):
        if algo == "rs" and ("tdm", snr) in means:
            gaps.append({"snr_db": snr, "rs_minus_tdm": mean - means[("tdm", snr)]})
    return {"table": table, "dof": dofs, "gaps": gaps}


def write_summary(path, summary) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["algo", "snr_db", "n", "mean", "stderr", "per_subcarrier_mean"])
        for t in summary["table"]:
            w.writerow([t["algo"], _fmt(t["snr_db"]), t["n"], _fmt(t["mean"]), _fmt(t["stderr"]),
                        ";".join(_fmt(v) for v in t["per_subcarrier_mean"])])


def format_summary(summary) -> str:
    lines = [f"{'algo':<10} {'snr_db':>7} {'n':>4} {'mean':>10} {'stderr':>9}"]
    for t in summary["table"]:
        lines.append(f"{t['algo']:<10} {t['snr_db']:>7.1f} {t['n']:>4d} {t['mean']:>10.4f} {t['stderr']:>9.4f}")
    lines.append("")
    lines.append("high-SNR empirical DoF per subcarrier:")
    for algo, d in summary["dof"].items():
        lines.append(f"  {algo:<10} {d['dof']:.4f}  window={d['window_db']}")
    if summary["gaps"]:
        lines.append("")
        lines.append("RS - TDM gap:")
        for g in summary["gaps"]:
            lines.append(f"  {g['snr_db']:>6.1f} dB  {g['rs_minus_tdm']:+.4f}")
    return "\n".join(lines)
