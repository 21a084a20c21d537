"""Throughput and queue analytics, the capacity protocol and experiment sweeps.

Capacity follows a fixed protocol: saturate every source, run five simulated
hours, drop the first and average hourly stop-bar crossings over the rest.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .engine import SimResult, run
from .network import ScenarioError
from .scenario import ScenarioConfig, apply_parameter, main_intersection, saturated

HOUR = 3600.0
CAPACITY_HOURS = 5
WARMUP_HOURS = 1
ARTERIAL_HEADINGS = ("E", "W")


def stop_detector(lane: str) -> str:
    return f"{lane}/stop"


def approach_lanes(cfg: ScenarioConfig, intersection: str) -> tuple:
    try:
        return tuple(cfg.network.intersections[intersection].incoming_lanes)
    except KeyError:
        raise ScenarioError(f"unknown intersection {intersection!r}") from None


def corridor_lanes(cfg: ScenarioConfig, headings: Sequence[str] = ARTERIAL_HEADINGS) -> tuple:
    """Signal approach lanes travelling along the corridor (east/west by default)."""
    out = []
    for inter in cfg.network.intersections.values():
        for lane in inter.incoming_lanes:
            if cfg.network.lanes[lane].heading in headings:
                out.append(lane)
    return tuple(sorted(out))


@dataclass
class ThroughputSeries:
    """Crossings at one detector with derived flows and windowed totals."""

    detector: str
    times: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)

    @classmethod
    def from_result(cls, result: SimResult, detector: str) -> "ThroughputSeries":
        if detector not in result.detectors:
            raise KeyError(f"no detector {detector!r}")
        return cls(detector, np.asarray(result.crossings(detector), dtype=float))

    @property
    def flows(self) -> np.ndarray:
        """Instantaneous flow [vph] of every crossing after the first."""
        return 3600.0 / np.diff(self.times)

    def count(self, t0: float, t1: float) -> int:
        """Crossings with ``t0 <= t < t1``."""
        lo, hi = np.searchsorted(self.times, [t0, t1], side="left")
        return int(hi - lo)

    def windowed_totals(self, window: float, t_end: float, t_start: float = 0.0) -> np.ndarray:
        if not window > 0:
            raise ValueError("window must be positive")
        n = int(math.ceil((t_end - t_start) / window - 1e-9))
        edges = t_start + window * np.arange(n + 1)
        edges[-1] = max(edges[-1], t_end)
        return np.diff(np.searchsorted(self.times, edges, side="left"))


def first_minute_count(result: SimResult, detector: str) -> int:
    """Crossings strictly before 60 s."""
    return ThroughputSeries.from_result(result, detector).count(-math.inf, 60.0)


def crossings_between(result: SimResult, lanes: Iterable[str], t0: float, t1: float) -> dict:
    return {lane: ThroughputSeries.from_result(result, stop_detector(lane)).count(t0, t1) for lane in lanes}


def total_crossings(result: SimResult, intersection: str | None = None) -> int:
    """Stop-bar crossings into ``intersection`` (the scenario's main one by default) over the run."""
    cfg = result.config
    inter = intersection or main_intersection(cfg)
    return sum(crossings_between(result, approach_lanes(cfg, inter), -math.inf, math.inf).values())


@dataclass(frozen=True)
class Capacity:
    """Mean hourly crossings per approach lane and in total."""

    intersection: str
    per_approach: dict
    total: float
    hours: int


def hourly_means(result: SimResult, lanes: Iterable[str], warmup_hours: int, hours: int) -> dict:
    span = (hours - warmup_hours) * HOUR
    counts = crossings_between(result, lanes, warmup_hours * HOUR, hours * HOUR)
    return {lane: c * HOUR / span for lane, c in counts.items()}


def capacity_run(cfg: ScenarioConfig, hours: int = CAPACITY_HOURS, **run_kw) -> SimResult:
    """Saturated run of ``cfg`` for ``hours`` simulated hours."""
    return run(saturated(cfg).with_(duration=hours * HOUR), **run_kw)


def capacity_of(result: SimResult, intersection: str | None = None, warmup_hours: int = WARMUP_HOURS) -> Capacity:
    cfg = result.config
    hours = int(round(result.clock / HOUR))
    if hours <= warmup_hours:
        raise ValueError(f"run of {result.clock:g} s leaves nothing after a {warmup_hours} h warm-up")
    inter = intersection or main_intersection(cfg)
    per = hourly_means(result, approach_lanes(cfg, inter), warmup_hours, hours)
    return Capacity(inter, per, float(sum(per.values())), hours - warmup_hours)


def measure_intersection_capacity(
    cfg: ScenarioConfig, intersection: str | None = None, hours: int = CAPACITY_HOURS,
    warmup_hours: int = WARMUP_HOURS, **run_kw,
) -> Capacity:
    """Saturate, run ``hours`` simulated hours, discard the warm-up, average the rest."""
    return capacity_of(capacity_run(cfg, hours, **run_kw), intersection, warmup_hours)


def corridor_throughput(result: SimResult, warmup_hours: int = WARMUP_HOURS) -> float:
    """Mean hourly stop-bar crossings summed over the corridor's approach lanes after the warm-up."""
    hours = int(round(result.clock / HOUR))
    if hours <= warmup_hours:
        raise ValueError(f"run of {result.clock:g} s leaves nothing after a {warmup_hours} h warm-up")
    return float(sum(hourly_means(result, corridor_lanes(result.config), warmup_hours, hours).values()))


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float


def linear_fit(x: Sequence[float], y: Sequence[float]) -> LinearFit | None:
    """Ordinary least squares; ``None`` with fewer than two distinct x values."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.unique(x).size < 2:
        return None
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return LinearFit(float(slope), float(intercept), r2)


@dataclass
class SweepResult:
    parameter: str
    values: list
    outcomes: list
    metadata: dict = field(default_factory=dict)
    fit: LinearFit | None = None

    def __post_init__(self):
        if len(self.values) != len(self.outcomes):
            raise ValueError("one outcome per value")

    def rows(self) -> list:
        return list(zip(self.values, self.outcomes))

    def table(self) -> str:
        width = max([len(self.parameter)] + [len(_fmt(v)) for v in self.values])
        lines = [f"{self.parameter:<{width}}  outcome"]
        lines += [f"{_fmt(v):<{width}}  {_fmt(o)}" for v, o in self.rows()]
        if self.fit is not None:
            f = self.fit
            lines.append(f"fit: slope={f.slope:.6g} intercept={f.intercept:.6g} r2={f.r2:.6f}")
        return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:g}"
    return str(v)


def _default_outcome(result: SimResult) -> float:
    return float(total_crossings(result))


def _sweep_one(args):
    cfg, outcome = args
    return outcome(run(cfg, check_invariants=False))


def sweep(
    cfg: ScenarioConfig,
    parameter: str,
    values: Sequence,
    outcome: Callable[[SimResult], float] = _default_outcome,
    workers: int = 1,
) -> SweepResult:
    """One run per value with the seed held fixed.

    ``outcome`` maps a result to the scalar reported per value (default:
    stop-bar crossings into the main intersection over the whole run).
    With ``workers > 1`` runs go to a process pool; results are keyed by
    value, so the outcome does not depend on completion order.
    """
    cfgs = [apply_parameter(cfg, parameter, v) for v in values]
    jobs = [(c, outcome) for c in cfgs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_sweep_one, jobs))
    else:
        outcomes = [_sweep_one(j) for j in jobs]
    return SweepResult(parameter, list(values), outcomes, {"seed": cfg.seed, "scenario": cfg.origin or {}})


def _capacity_outcome(result: SimResult) -> float:
    return capacity_of(result).total


def smart_share_curve(
    cfg: ScenarioConfig, shares: Sequence[float], hours: int = CAPACITY_HOURS, workers: int = 1
) -> SweepResult:
    """Main-intersection capacity per smart share, with an OLS fit when at least two shares differ."""
    for s in shares:
        if not 0.0 <= s <= 1.0:
            raise ScenarioError(f"smart share {s!r} outside [0, 1]")
    base = saturated(cfg).with_(duration=hours * HOUR)
    res = sweep(base, "smart_share", [float(s) for s in shares], _capacity_outcome, workers)
    res.fit = linear_fit(res.values, res.outcomes)
    res.metadata["hours"] = hours
    return res


# --- queues -----------------------------------------------------------------


def queue_series(result: SimResult, lane: str) -> tuple:
    """Sample times and estimated queue counts for ``lane``'s sensor pair."""
    if lane not in result.queue_series:
        raise KeyError(f"no sensor pair on lane {lane!r}")
    counts = np.array([c for c, _ in result.queue_series[lane]], dtype=float)
    return np.asarray(result.queue_times, dtype=float)[: counts.size], counts


def window_max(times: np.ndarray, values: np.ndarray, window: float) -> np.ndarray:
    """Maximum of ``values`` in consecutive windows of ``window`` seconds (empty windows dropped)."""
    idx = np.floor(times / window + 1e-9).astype(np.int64)
    out = np.full(int(idx.max()) + 1 if idx.size else 0, -np.inf)
    np.maximum.at(out, idx, values)
    return out[np.isfinite(out)]


def queue_trend(times: np.ndarray, values: np.ndarray, t0: float, t1: float) -> float:
    """OLS slope [veh/s] of the estimated queue over ``[t0, t1)``."""
    sel = (times >= t0) & (times < t1)
    fit = linear_fit(times[sel], values[sel])
    return 0.0 if fit is None else fit.slope


# --- CSV ----------------------------------------------------------------------


def write_throughput_csv(path, series: Iterable[ThroughputSeries], window: float, t_end: float) -> None:
    """Windowed totals as ``detector_id, window_start_s, window_end_s, vehicles`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["detector_id", "window_start_s", "window_end_s", "vehicles"])
        for s in series:
            for k, n in enumerate(s.windowed_totals(window, t_end)):
                w.writerow([s.detector, repr(k * window), repr(min((k + 1) * window, t_end)), int(n)])


def read_throughput_csv(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.setdefault(r["detector_id"], []).append(
                (float(r["window_start_s"]), float(r["window_end_s"]), int(r["vehicles"]))
            )
    return out


def write_queues_csv(path, result: SimResult) -> None:
    """Queue estimates as ``time_s, lane_id, estimate, clamped`` rows."""
    times = result.queue_times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "lane_id", "estimate", "clamped"])
        for lane in sorted(result.queue_series):
            for t, (c, clamped) in zip(times, result.queue_series[lane]):
                w.writerow([repr(float(t)), lane, int(c), int(bool(clamped))])


def read_queues_csv(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.setdefault(r["lane_id"], []).append((float(r["time_s"]), int(r["estimate"]), bool(int(r["clamped"]))))
    return out


def write_sweep_csv(path, result: SweepResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([result.parameter, "outcome"])
        for v, o in result.rows():
            w.writerow(["None" if v is None else repr(v) if isinstance(v, float) else v, repr(float(o))])


def read_sweep_csv(path) -> SweepResult:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    param = rows[0][0]
    values = [_parse_value(r[0]) for r in rows[1:]]
    return SweepResult(param, values, [float(r[1]) for r in rows[1:]])


def _parse_value(s: str):
    if s in ("True", "False"):
        return s == "True"
    if s == "None":
        return None
    try:
        return float(s)
    except ValueError:
        return s
