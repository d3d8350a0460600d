"""Experiment orchestration: whole-window runs, metrics, CSV/JSON export and
fixed-vs-allocated power comparisons."""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import ScenarioConfig
from .scheduler import METHODS, QOS_TOL, run_window

POWER_MODES = {"fixed": "fixed", "alloc": "alloc", "allocated": "alloc"}
METRICS = ("sum_throughput", "per_user_throughput", "satisfaction_ratio")
SLOT_SUM_HEADER = ["slot", "sum_mbps"]
PER_USER_HEADER = ["user_id", "beam_id", "xi_mb", "served_mb", "ratio"]
SLOT_USERS_HEADER = ["slot", "user_id", "power_w", "rate_mbps"]


@dataclass
class RunReport:
    method: str
    power_mode: str
    seed: int
    slot_sum: np.ndarray  # Mbps per slot
    served: np.ndarray  # Mb per user
    demand: np.ndarray  # xi per user, Mb
    target: np.ndarray  # xi / T_k per user, Mbps
    beam_ids: np.ndarray
    slot_users: list[tuple[int, int, float, float]] = field(default_factory=list)  # (slot, user, W, Mbps)
    config: dict[str, Any] = field(default_factory=dict)
    wall_clock_s: float = 0.0

    @property
    def ratio(self) -> np.ndarray:
        """Satisfaction ratio per user, NaN where the user asks for nothing."""
        return satisfaction_ratio(self.served, self.demand)

    @property
    def demanding(self) -> np.ndarray:
        return self.demand > 0

    @property
    def summary(self) -> dict[str, Any]:
        T = len(self.slot_sum)
        dem = self.demanding
        ratio = self.ratio[dem]
        short = self.served[dem] < self.demand[dem] - QOS_TOL
        slot_viol = [r < self.target[k] - QOS_TOL for _, k, _, r in self.slot_users]
        return {
            "method": self.method,
            "power_mode": self.power_mode,
            "seed": self.seed,
            "slots": T,
            "users": int(len(self.served)),
            "demanding_users": int(dem.sum()),
            "mean_sum_mbps": float(self.slot_sum.mean()) if T else 0.0,
            "std_sum_mbps": float(self.slot_sum.std()) if T else 0.0,
            "mean_user_mbps": float(self.served[dem].mean() / T) if T and dem.any() else 0.0,
            "mean_satisfaction": float(ratio.mean()) if dem.any() else 0.0,
            "qos_violation_fraction": float(short.mean()) if dem.any() else 0.0,
            "slot_violation_fraction": float(np.mean(slot_viol)) if slot_viol else 0.0,
            "satisfied_users": int((~short).sum()),
            "wall_clock_s": self.wall_clock_s,
        }

    def metric(self, name: str) -> float:
        s = self.summary
        return {
            "sum_throughput": s["mean_sum_mbps"],
            "per_user_throughput": s["mean_user_mbps"],
            "satisfaction_ratio": s["mean_satisfaction"],
        }[name]


def satisfaction_ratio(served: np.ndarray | float, demand: np.ndarray | float) -> np.ndarray | float:
    """``served / demand``; NaN marks users with zero demand (excluded from averages).

    A scalar call with zero demand raises instead.
    """
    served = np.asarray(served, dtype=float)
    demand = np.asarray(demand, dtype=float)
    if demand.ndim == 0:
        if demand <= 0:
            raise ValueError("satisfaction ratio is undefined for zero demand")
        return float(served / demand)
    out = np.full(np.broadcast(served, demand).shape, np.nan)
    pos = demand > 0
    np.divide(served, demand, out=out, where=pos)
    return out


def run_benchmark(
    config: ScenarioConfig, method: str, power_mode: str = "fixed", seed: int | None = None
) -> RunReport:
    """Users, QoS, every slot of the window and the resulting report."""
    if power_mode not in POWER_MODES:
        raise ValueError(f"power mode must be one of {', '.join(POWER_MODES)}")
    config.validate()
    mode = "alloc" if method.startswith("alg2") else POWER_MODES[power_mode]
    seed = config.rng_seed if seed is None else seed
    start = time.perf_counter()
    sc, state = run_window(config, method, mode, seed=seed)
    elapsed = time.perf_counter() - start

    slot_users = []
    for s in state.log:
        s.allocation.check(config.max_power_w)
        for k, p in zip(s.allocation.scheduled, s.allocation.powers):
            slot_users.append((s.t, int(k), float(p), s.throughput[k]))
    return RunReport(
        method=method,
        power_mode=mode,
        seed=int(seed),
        slot_sum=np.array([s.sum_throughput for s in state.log]),
        served=state.served.copy(),
        demand=sc.qos.demand_mb.copy(),
        target=sc.qos.target_mbps.copy(),
        beam_ids=np.array([u.beam_id for u in sc.users], dtype=int),
        slot_users=slot_users,
        config=config.to_dict(),
        wall_clock_s=elapsed,
    )


def _num(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def _write_csv(path: Path, header: list[str], rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def export_report(report: RunReport, path: str | Path, fmt: str = "both") -> list[Path]:
    """Write ``slot_sum.csv``, ``per_user.csv``, ``slot_users.csv`` and/or ``summary.json``.

    ``fmt`` is ``csv``, ``json`` or ``both``. CSV files are byte-stable for a given report.
    """
    if fmt not in ("csv", "json", "both"):
        raise ValueError("fmt must be csv, json or both")
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc}") from exc
    written = []
    if fmt in ("csv", "both"):
        _write_csv(out / "slot_sum.csv", SLOT_SUM_HEADER, ((i + 1, _num(v)) for i, v in enumerate(report.slot_sum)))
        ratio = report.ratio
        _write_csv(
            out / "per_user.csv",
            PER_USER_HEADER,
            (
                (k, int(report.beam_ids[k]), _num(report.demand[k]), _num(report.served[k]), _num(ratio[k]))
                for k in range(len(report.served))
            ),
        )
        _write_csv(out / "slot_users.csv", SLOT_USERS_HEADER, ((t, k, _num(p), _num(r)) for t, k, p, r in report.slot_users))
        written += [out / "slot_sum.csv", out / "per_user.csv", out / "slot_users.csv"]
    if fmt in ("json", "both"):
        doc = {"summary": report.summary, "config": report.config}
        try:
            (out / "summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write {out / 'summary.json'}: {exc}") from exc
        written.append(out / "summary.json")
    return written


def read_report(path: str | Path) -> dict[str, Any]:
    """Per-run metrics recomputed from the exported CSVs alone."""
    path = Path(path)
    with open(path / "slot_sum.csv", newline="") as fh:
        sums = np.array([float(r["sum_mbps"]) for r in csv.DictReader(fh)])
    with open(path / "per_user.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    xi = np.array([float(r["xi_mb"]) for r in rows])
    served = np.array([float(r["served_mb"]) for r in rows])
    dem = xi > 0
    T = len(sums)
    return {
        "sum_throughput": float(sums.mean()) if T else 0.0,
        "per_user_throughput": float(served[dem].mean() / T) if T and dem.any() else 0.0,
        "satisfaction_ratio": float((served[dem] / xi[dem]).mean()) if dem.any() else 0.0,
    }


def power_pair(method: str) -> tuple[tuple[str, str], tuple[str, str]]:
    """(fixed, allocated) runs compared for ``method``; Algorithm 1 with allocation is Algorithm 2."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if method.startswith("alg"):
        mode = method.split("-", 1)[1]
        return (f"alg1-{mode}", "fixed"), (f"alg2-{mode}", "alloc")
    return (method, "fixed"), (method, "alloc")


@dataclass
class Comparison:
    methods: list[str]
    seeds: list[int]
    gains: dict[str, dict[str, float]]  # metric -> method -> mean allocated/fixed ratio
    reports: dict[tuple[str, str, int], RunReport]

    def rows(self) -> list[list[Any]]:
        return [[m] + [self.gains[m][meth] for meth in self.methods] for m in METRICS]

    def to_csv(self, path: str | Path) -> None:
        _write_csv(Path(path), ["metric"] + self.methods, ([r[0]] + [_num(v) for v in r[1:]] for r in self.rows()))

    def format(self) -> str:
        width = max(12, *(len(m) for m in self.methods))
        lines = [f"{'gain':<22}" + "".join(f"{m:>{width + 2}}" for m in self.methods)]
        for r in self.rows():
            lines.append(f"{r[0]:<22}" + "".join(f"{v:>{width + 2}.4f}" for v in r[1:]))
        return "\n".join(lines)


def gain_ratios(fixed: Sequence[RunReport], allocated: Sequence[RunReport]) -> dict[str, float]:
    """Seed-averaged allocated/fixed ratio of each metric over paired reports."""
    if len(fixed) != len(allocated) or not fixed:
        raise ValueError("need the same non-zero number of fixed and allocated reports")
    out = {}
    for m in METRICS:
        r = [a.metric(m) / f.metric(m) if f.metric(m) > 0 else np.nan for f, a in zip(fixed, allocated)]
        out[m] = float(np.mean(r))
    return out


def _run_job(job: tuple[ScenarioConfig, str, str, int]) -> RunReport:
    return run_benchmark(*job)


def compare_methods(
    config: ScenarioConfig,
    methods: Sequence[str],
    seeds: Sequence[int],
    workers: int = 1,
    out: str | Path | None = None,
) -> Comparison:
    """Gain of allocated over fixed power per method, averaged over paired seeds.

    Every (method, power, seed) run is independent; ``workers > 1`` spreads them over
    processes. With ``out`` each run is exported to ``<out>/<method>_<power>_seed<n>/``
    and the gain table to ``<out>/comparison.csv``.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    methods = list(methods)
    jobs = []
    for meth in methods:
        for name, mode in power_pair(meth):
            for s in seeds:
                key = (name, mode, s)
                if key not in jobs:
                    jobs.append(key)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, [(config, n, m, s) for n, m, s in jobs]))
    else:
        results = [run_benchmark(config, n, m, s) for n, m, s in jobs]
    reports = dict(zip(jobs, results))

    gains: dict[str, dict[str, float]] = {m: {} for m in METRICS}
    for meth in methods:
        (fn, fm), (an, am) = power_pair(meth)
        g = gain_ratios([reports[(fn, fm, s)] for s in seeds], [reports[(an, am, s)] for s in seeds])
        for m in METRICS:
            gains[m][meth] = g[m]
    table = Comparison(methods, seeds, gains, reports)
    if out is not None:
        out = Path(out)
        for (n, m, s), rep in reports.items():
            export_report(rep, out / f"{n}_{m}_seed{s}")
        table.to_csv(out / "comparison.csv")
    return table
