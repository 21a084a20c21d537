"""Point detectors and sensor pairs for flow and queue measurement.

A :class:`Detector` logs front-bumper passages with linearly interpolated
times. A :class:`DetectorPair` estimates the queue as the number of vehicles
between its two sensors, optionally perturbed by integer noise and bounded by
empty/full occupancy checks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

DEFAULT_SPACING = 75.0
FOOTPRINT = 2.0


@dataclass(frozen=True)
class SensingConfig:
    """Sensor layout and error model shared by every approach lane.

    Attributes:
        pair_spacing: distance between the two sensors of a pair [m]
        noise: half-width ``e`` of the additive integer noise (0 disables it)
        footprint: occupancy window centred on a sensor [m]
        sample_period: interval between queue estimates [s]
    """

    pair_spacing: float = DEFAULT_SPACING
    noise: int = 0
    footprint: float = FOOTPRINT
    sample_period: float = 1.0

    def __post_init__(self):
        if not self.pair_spacing > 0:
            raise ValueError("pair_spacing must be positive")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if not self.footprint > 0:
            raise ValueError("footprint must be positive")
        if not self.sample_period > 0:
            raise ValueError("sample_period must be positive")


@dataclass
class Detector:
    id: str
    lane: str
    position: float
    log: list = field(default_factory=list)  # (vehicle id, crossing time)

    @property
    def times(self) -> list:
        return [t for _, t in self.log]


def crossing_time(t: float, dt: float, x_old: float, x_new: float, pos: float) -> float:
    """Linear interpolation of the instant the front bumper reaches ``pos``."""
    return t + dt * (pos - x_old) / (x_new - x_old)


def crosses(x_old, x_new, pos):
    """Passage test used everywhere: ``x_old <= pos < x_new``."""
    return (x_old <= pos) & (pos < x_new)


def record_crossings(det: Detector, ids, x_old, x_new, t: float, dt: float) -> Detector:
    """Append every vehicle whose front passes ``det.position`` during ``[t, t+dt)``.

    ``ids``, ``x_old`` and ``x_new`` describe the vehicles on ``det.lane`` in
    lane order (front first); the log keeps that order.
    """
    x_old = np.asarray(x_old, dtype=float)
    x_new = np.asarray(x_new, dtype=float)
    hit = np.flatnonzero(crosses(x_old, x_new, det.position))
    for i in hit:
        det.log.append((ids[i], crossing_time(t, dt, x_old[i], x_new[i], det.position)))
    return det


def instantaneous_flow(det: Detector, index: int) -> float:
    """Flow in vph from the headway between crossing ``index`` and its predecessor."""
    if index < 1:
        raise ValueError("the first crossing has no predecessor")
    headway = det.log[index][1] - det.log[index - 1][1]
    return 3600.0 / headway


@dataclass(frozen=True)
class DetectorPair:
    """Two sensors bracketing the queue region of a lane.

    ``capacity`` is the number of stopped vehicles of length ``l`` and
    standstill gap ``g_min`` that fit between the sensors.
    """

    id: str
    lane: str
    upstream_pos: float
    downstream_pos: float
    veh_length: float = 5.0
    veh_gmin: float = 2.0
    noise: int = 0
    footprint: float = FOOTPRINT

    def __post_init__(self):
        if not self.downstream_pos > self.upstream_pos:
            raise ValueError(f"pair {self.id}: downstream sensor must lie beyond the upstream one")

    @property
    def spacing(self) -> float:
        return self.downstream_pos - self.upstream_pos

    @property
    def capacity(self) -> int:
        return int(math.floor(self.spacing / (self.veh_length + self.veh_gmin) + 1e-9))


class QueueEstimate(NamedTuple):
    count: int
    clamped: bool
    at_time: float


def _occupied(front, rear, pos: float, half: float) -> bool:
    return bool(np.any((front >= pos - half) & (rear <= pos + half)))


def estimate_queue(pair: DetectorPair, front, lengths, rng=None, at_time: float = 0.0) -> QueueEstimate:
    """Queue estimate from the vehicles currently on ``pair.lane``.

    Args:
        pair: the sensor pair.
        front: front-bumper positions of the lane's vehicles.
        lengths: vehicle lengths (scalar or per vehicle).
        rng: generator for the noise draw; required when ``pair.noise > 0``.
        at_time: simulation time stamped on the estimate.
    """
    front = np.asarray(front, dtype=float)
    rear = front - np.asarray(lengths, dtype=float)
    true = int(np.count_nonzero((front >= pair.upstream_pos) & (front <= pair.downstream_pos)))
    raw = true
    if pair.noise > 0:
        raw += int(rng.integers(-pair.noise, pair.noise + 1))
    cap = pair.capacity
    count = min(max(raw, 0), cap)
    clamped = count != raw
    half = pair.footprint / 2.0
    up_occ = _occupied(front, rear, pair.upstream_pos, half)
    down_occ = _occupied(front, rear, pair.downstream_pos, half)
    if true == 0 and not up_occ and not down_occ:
        count = 0
    elif count == cap and not up_occ and not down_occ:
        # a full reading needs a standing vehicle on at least one sensor
        count = cap - 1
    return QueueEstimate(count, clamped, at_time)


def write_crossings_csv(path, detectors: Iterable[Detector]) -> None:
    """Crossing logs as ``time_s, vehicle_id, lane_id, detector_id`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "vehicle_id", "lane_id", "detector_id"])
        for det in detectors:
            for vid, t in det.log:
                w.writerow([repr(float(t)), vid, det.lane, det.id])


def read_crossings_csv(path) -> dict:
    """Inverse of :func:`write_crossings_csv`: detector id -> list of (vehicle id, time)."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["detector_id"], []).append((int(row["vehicle_id"]), float(row["time_s"])))
    return out
