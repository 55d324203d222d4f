"""Benchmark harness: test-set generation, method comparison, trace export.

Metrics follow the usual geometry-optimization conventions: wall time T,
committed steps N, and energy calls C are averaged over successful runs only
(standard error = sample standard deviation / sqrt(n)); the failure rate P_F
is taken over all runs.
"""

from __future__ import annotations

import json
import logging
import shlex
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .crystal import random_structure
from .optimizers import METHODS, RelaxationReport, TerminationPolicy, relax
from .potential import LennardJonesCalculator
from .xyz import read_xyz, write_xyz

log = logging.getLogger(__name__)

__all__ = [
    "BenchmarkSpec",
    "MetricsRow",
    "make_calculator",
    "gen_testset",
    "load_testset",
    "run_bench",
    "metrics_from_reports",
    "write_metrics_csv",
    "energy_traces",
    "write_traces_csv",
    "minima_histogram",
    "write_histogram_csv",
]

METRICS_COLUMNS = ("method", "T_mean", "T_se", "N_mean", "N_se",
                   "C_mean", "C_se", "P_F")


@dataclass
class BenchmarkSpec:
    species_counts: dict
    sizes: tuple = (1.0,)  # multipliers applied to the base composition
    set_size: int = 300
    methods: tuple = tuple(m for m in METHODS if m != "MACS")
    seed: int = 0
    calculator: str = "lj"
    volume_per_atom: float = 37.0
    min_dist: float = 2.0
    fmax: float = 0.05
    max_steps: int = 1000

    def __post_init__(self):
        if self.set_size < 1:
            raise ValueError("set_size must be at least 1")
        if any(s <= 0 for s in self.sizes):
            raise ValueError("sizes must be positive")
        self.sizes = tuple(self.sizes)
        self.methods = tuple(self.methods)

    def composition(self, size: float) -> dict:
        counts = {
            sym: int(round(n * size)) for sym, n in self.species_counts.items()
        }
        if any(n < 1 for n in counts.values()):
            raise ValueError(f"size multiplier {size} empties a species")
        return counts

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sizes"] = list(self.sizes)
        d["methods"] = list(self.methods)
        return d


@dataclass
class MetricsRow:
    method: str
    T_mean: float
    T_se: float
    N_mean: float
    N_se: float
    C_mean: float
    C_se: float
    P_F: float  # percent

    def as_csv_fields(self) -> list:
        def fmt(x):
            return "" if x is None or not np.isfinite(x) else f"{x:.6f}"

        return [self.method, fmt(self.T_mean), fmt(self.T_se),
                fmt(self.N_mean), fmt(self.N_se), fmt(self.C_mean),
                fmt(self.C_se), fmt(self.P_F)]


def make_calculator(selector: str):
    """Build a calculator from a CLI selector: `lj` or `cmd:<command line>`."""
    if selector == "lj":
        return LennardJonesCalculator()
    if selector.startswith("cmd:"):
        from .bridge import BridgeCalculator, spawn_bridge

        handle = spawn_bridge(shlex.split(selector[4:]))
        return BridgeCalculator(handle)
    raise ValueError(f"unknown calculator selector {selector!r}")


def gen_testset(spec: BenchmarkSpec, outdir) -> Path:
    """Write extended-XYZ structures plus a manifest; fully seed-determined."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = []
    for size_index, size in enumerate(spec.sizes):
        counts = spec.composition(size)
        n_atoms = sum(counts.values())
        for i in range(spec.set_size):
            seed = [spec.seed, size_index, i]
            rng = np.random.default_rng(np.random.SeedSequence(seed))
            s = random_structure(counts, n_atoms * spec.volume_per_atom,
                                 spec.min_dist, rng)
            name = f"{n_atoms:04d}atoms-{i:04d}.xyz"
            write_xyz(outdir / name, s)
            entries.append({"file": name, "seed": seed, "n_atoms": n_atoms})
    manifest = {"spec": spec.to_dict(), "structures": entries}
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return outdir / "manifest.json"


def load_testset(testset_dir):
    """Yield (entry, Structure) pairs in manifest order."""
    testset_dir = Path(testset_dir)
    with open(testset_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    for entry in manifest["structures"]:
        yield entry, read_xyz(testset_dir / entry["file"])


def metrics_from_reports(method: str, reports) -> MetricsRow:
    """Aggregate per-run reports (dicts or RelaxationReports) into one row."""
    rows = [r.to_dict() if isinstance(r, RelaxationReport) else r
            for r in reports]
    if not rows:
        raise ValueError("no reports to aggregate")
    ok = [r for r in rows if r["success"]]

    def stats(values):
        if not values:
            return float("nan"), float("nan")
        arr = np.asarray(values, dtype=float)
        se = arr.std(ddof=1) / np.sqrt(len(arr)) if len(arr) > 1 else 0.0
        return float(arr.mean()), float(se)

    t_mean, t_se = stats([r["wall_time"] for r in ok])
    n_mean, n_se = stats([r["steps"] for r in ok])
    c_mean, c_se = stats([r["energy_calls"] for r in ok])
    p_f = 100.0 * (len(rows) - len(ok)) / len(rows)
    return MetricsRow(method, t_mean, t_se, n_mean, n_se, c_mean, c_se, p_f)


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(row.as_csv_fields()) + "\n")


def run_bench(spec: BenchmarkSpec, testset_dir, outdir, policy=None,
              env_cfg=None, deterministic_timing=False):
    """Relax every structure with every method and persist all artifacts.

    Each relaxation runs sequentially without internal parallelism. With
    `deterministic_timing`, wall times are zeroed so the metrics CSV is
    byte-identical across runs. Returns the list of MetricsRows.
    """
    outdir = Path(outdir)
    reports_dir = outdir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    tp = TerminationPolicy(fmax=spec.fmax, max_steps=spec.max_steps)
    metrics = []
    for method in spec.methods:
        if method == "MACS" and policy is None:
            raise ValueError("MACS benchmarking requires a trained policy")
        reports = []
        for entry, s in load_testset(testset_dir):
            calc = make_calculator(spec.calculator)
            try:
                report = relax(s, method, calc, tp, policy=policy,
                               env_cfg=env_cfg)
            finally:
                close = getattr(calc, "close", None)
                if close is not None:
                    close()
            payload = report.to_dict()
            payload["structure"] = entry["file"]
            if deterministic_timing:
                payload["wall_time"] = 0.0
            stem = Path(entry["file"]).stem
            with open(reports_dir / f"{method}-{stem}.json", "w") as fh:
                json.dump(payload, fh, indent=2)
                fh.write("\n")
            reports.append(payload)
        metrics.append(metrics_from_reports(method, reports))
    write_metrics_csv(outdir / "metrics.csv", metrics)
    return metrics


def energy_traces(reports_by_method: dict) -> dict:
    """Mean energy per step over successful runs, padded by carry-forward.

    Returns {method: list of means}; methods with no successes are omitted
    with a warning.
    """
    out = {}
    for method, reports in reports_by_method.items():
        rows = [r.to_dict() if isinstance(r, RelaxationReport) else r
                for r in reports]
        traces = [r["energy_trace"] for r in rows if r["success"]]
        if not traces:
            log.warning("no successful %s runs; trace row omitted", method)
            continue
        width = max(len(t) for t in traces)
        padded = np.array([t + [t[-1]] * (width - len(t)) for t in traces])
        out[method] = padded.mean(axis=0).tolist()
    return out


def write_traces_csv(path, traces: dict) -> None:
    methods = list(traces)
    width = max((len(t) for t in traces.values()), default=0)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["step"] + methods) + "\n")
        for step in range(width):
            cells = [str(step)]
            for m in methods:
                t = traces[m]
                value = t[step] if step < len(t) else t[-1]
                cells.append(f"{value:.10f}")
            fh.write(",".join(cells) + "\n")


def minima_histogram(reports_by_method: dict, bins: int = 20):
    """Bin final energies of successful runs on a shared axis.

    Returns (bin_edges, {method: counts}).
    """
    if bins < 1:
        raise ValueError("bins must be at least 1")
    finals = {}
    for method, reports in reports_by_method.items():
        rows = [r.to_dict() if isinstance(r, RelaxationReport) else r
                for r in reports]
        finals[method] = [r["energy_trace"][-1] for r in rows if r["success"]]
    everything = [e for v in finals.values() for e in v]
    if not everything:
        return np.array([]), {}
    lo, hi = min(everything), max(everything)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    return edges, {
        m: np.histogram(v, bins=edges)[0].tolist() for m, v in finals.items()
    }


def write_histogram_csv(path, edges, counts_by_method) -> None:
    methods = list(counts_by_method)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["bin_left", "bin_right"] + methods) + "\n")
        for b in range(len(edges) - 1):
            cells = [f"{edges[b]:.10f}", f"{edges[b + 1]:.10f}"]
            cells += [str(counts_by_method[m][b]) for m in methods]
            fh.write(",".join(cells) + "\n")
