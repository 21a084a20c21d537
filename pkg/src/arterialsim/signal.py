"""Signal controllers: fixed-time, gap-out actuated and max-pressure.

A controller owns a :class:`TimingPlan` (the phase set and red-clear time) and
a mutable :class:`ControllerState`. Fixed control is a pure function of the
clock; actuated and max-pressure control are stepped by the engine with
detector information. Platoons talk to adaptive controllers through
:func:`request_extension`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

MODES = ("fixed", "actuated", "max_pressure")

# tolerance for phase-boundary comparisons on a float clock
_TIME_EPS = 1e-9


class UnsupportedModeError(RuntimeError):
    """Raised when an operation is not available under the controller's mode."""


Movement = tuple  # (from_lane, turn)


@dataclass(frozen=True)
class Phase:
    id: str
    green_movements: frozenset
    nominal_green: float

    def __post_init__(self):
        if not self.green_movements:
            raise ValueError(f"phase {self.id!r} has no movements")
        if not self.nominal_green > 0:
            raise ValueError(f"phase {self.id!r}: nominal_green must be positive")
        object.__setattr__(self, "green_movements", frozenset(tuple(m) for m in self.green_movements))

    @property
    def lanes(self) -> frozenset:
        return frozenset(m[0] for m in self.green_movements)


@dataclass(frozen=True)
class TimingPlan:
    phases: tuple
    red_clear: float
    cycle: float
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        if not self.phases:
            raise ValueError("a timing plan needs at least one phase")
        if self.red_clear < 0:
            raise ValueError("red_clear must be >= 0")
        total = sum(p.nominal_green for p in self.phases) + len(self.phases) * self.red_clear
        if abs(total - self.cycle) > 1e-6:
            raise ValueError(
                f"sum of greens plus red clears ({total:g} s) does not equal cycle ({self.cycle:g} s)"
            )
        if not 0 <= self.offset < self.cycle:
            raise ValueError("offset must lie in [0, cycle)")

    @classmethod
    def two_phase(cls, first, second, cycle, red_clear, offset=0.0, names=("EW", "NS")):
        """Equal-split two-phase plan, e.g. 57/3/57/3 for a 120 s cycle with 3 s clear."""
        green = (cycle - 2 * red_clear) / 2.0
        if green <= 0:
            raise ValueError("cycle must exceed twice the red clear time")
        return cls(
            (Phase(names[0], frozenset(first), green), Phase(names[1], frozenset(second), green)),
            red_clear,
            cycle,
            offset,
        )

    def rescaled(self, cycle=None, red_clear=None) -> "TimingPlan":
        """Same phase split over a new cycle and/or red clear time."""
        cycle = self.cycle if cycle is None else cycle
        red_clear = self.red_clear if red_clear is None else red_clear
        old_green = sum(p.nominal_green for p in self.phases)
        new_green = cycle - len(self.phases) * red_clear
        if new_green <= 0:
            raise ValueError("no green time left in the cycle")
        phases = tuple(
            Phase(p.id, p.green_movements, p.nominal_green * new_green / old_green) for p in self.phases
        )
        return TimingPlan(phases, red_clear, cycle, self.offset % cycle)


@dataclass(frozen=True)
class SignalConfig:
    """Per-intersection control mode, plan and adaptive constants."""

    plan: TimingPlan
    mode: str = "fixed"
    min_green: float = 5.0
    max_green: float = 50.0
    gap_out: float = 3.0
    decision_period: float = 10.0
    ext_size_threshold: int = 4
    ext_increment: float = 5.0
    max_extension: float = 15.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown signal mode {self.mode!r}")
        if self.min_green > self.max_green:
            raise ValueError("min_green exceeds max_green")


@dataclass
class ControllerState:
    config: SignalConfig
    current_phase: int = 0
    phase_elapsed: float = 0.0
    in_red_clear: bool = False
    clear_elapsed: float = 0.0
    next_phase: int = 0
    extension_granted: float = 0.0
    since_passage: float = 0.0
    hold_until: float = 0.0
    next_decision: float = 0.0
    decisions: list = field(default_factory=list)

    @property
    def mode(self) -> str:
        return self.config.mode

    @property
    def plan(self) -> TimingPlan:
        return self.config.plan


def fixed_state(plan: TimingPlan, t: float):
    """Phase index (``None`` during all-red) and seconds remaining in that interval."""
    u = math.fmod(t + plan.offset, plan.cycle)
    if u < 0:
        u += plan.cycle
    start = 0.0
    for i, phase in enumerate(plan.phases):
        end = start + phase.nominal_green
        if u < end - _TIME_EPS:
            return i, end - u
        clear_end = end + plan.red_clear
        if u < clear_end - _TIME_EPS:
            return None, clear_end - u
        start = clear_end
    # u within float noise of the cycle end: start of the first phase
    return 0, plan.phases[0].nominal_green


def _advance_clear(state: ControllerState, dt: float) -> None:
    state.clear_elapsed += dt
    if state.clear_elapsed >= state.plan.red_clear - _TIME_EPS:
        _start_phase(state, state.next_phase)


def _start_phase(state: ControllerState, index: int) -> None:
    state.current_phase = index
    state.phase_elapsed = 0.0
    state.in_red_clear = False
    state.clear_elapsed = 0.0
    state.extension_granted = 0.0
    state.since_passage = 0.0
    state.hold_until = 0.0
    state.next_decision = state.config.min_green


def _end_phase(state: ControllerState, next_index: int) -> None:
    state.next_phase = next_index
    if state.plan.red_clear <= 0:
        _start_phase(state, next_index)
    else:
        state.in_red_clear = True
        state.clear_elapsed = 0.0


def actuated_step(state: ControllerState, detector_occupancy: Mapping, dt: float) -> ControllerState:
    """Advance a gap-out actuated controller by ``dt``.

    ``detector_occupancy`` maps approach lane -> whether a vehicle passed or
    occupied its stop-bar detector during the step. Green is held while a
    passage was seen within ``gap_out`` seconds, always for at least
    ``min_green`` and never beyond ``max_green`` plus granted extensions.
    """
    if state.mode != "actuated":
        raise UnsupportedModeError(f"actuated_step on a {state.mode} controller")
    if dt <= 0:
        return state
    cfg = state.config
    if state.in_red_clear:
        _advance_clear(state, dt)
        return state
    phase = state.plan.phases[state.current_phase]
    state.phase_elapsed += dt
    if any(detector_occupancy.get(lane, False) for lane in phase.lanes):
        state.since_passage = 0.0
    else:
        state.since_passage += dt
    elapsed = state.phase_elapsed + _TIME_EPS
    if elapsed < cfg.min_green or elapsed < state.hold_until:
        return state
    cap = cfg.max_green + state.extension_granted
    if elapsed >= cap or state.since_passage + _TIME_EPS >= cfg.gap_out:
        _end_phase(state, (state.current_phase + 1) % len(state.plan.phases))
    return state


def phase_pressures(plan: TimingPlan, queues: Mapping) -> list:
    """Pressure of every phase: sum over its movements of upstream minus downstream queue."""
    out = []
    for phase in plan.phases:
        total = 0.0
        for m in phase.green_movements:
            up, down = queues.get(m, (0.0, 0.0))
            total += up - down
        out.append(total)
    return out


def choose_phase(pressures: Sequence[float], current: int) -> int:
    """Argmax of pressure; the current phase wins ties."""
    best = current
    for i, p in enumerate(pressures):
        if p > pressures[best]:
            best = i
    return best


def max_pressure_step(state: ControllerState, queues: Mapping, dt: float) -> ControllerState:
    """Advance a max-pressure controller by ``dt``.

    ``queues`` maps movement ``(from_lane, turn)`` to ``(upstream, downstream)``
    queue counts. A decision is taken every ``decision_period`` seconds once
    ``min_green`` has elapsed; decisions are logged on the state as
    ``(phase_elapsed, current, pressures, chosen)``.
    """
    if state.mode != "max_pressure":
        raise UnsupportedModeError(f"max_pressure_step on a {state.mode} controller")
    if dt <= 0:
        return state
    cfg = state.config
    if state.in_red_clear:
        _advance_clear(state, dt)
        return state
    state.phase_elapsed += dt
    elapsed = state.phase_elapsed + _TIME_EPS
    if elapsed < max(cfg.min_green, state.next_decision, state.hold_until):
        return state
    pressures = phase_pressures(state.plan, queues)
    chosen = choose_phase(pressures, state.current_phase)
    state.decisions.append((state.phase_elapsed, state.current_phase, tuple(pressures), chosen, dict(queues)))
    if chosen != state.current_phase:
        _end_phase(state, chosen)
    else:
        state.next_decision = state.phase_elapsed + cfg.decision_period
    return state


def request_extension(
    state: ControllerState, platoon_size: int, opposing_pressure: float, needed: float | None = None
) -> float:
    """Ask to extend the current green for an approaching platoon.

    Returns the granted seconds (0 when rejected). Fixed-time control has no
    way to honour requests and raises :class:`UnsupportedModeError`.
    """
    if state.mode == "fixed":
        raise UnsupportedModeError("fixed-time control cannot extend phases")
    cfg = state.config
    if state.in_red_clear:
        return 0.0
    if platoon_size < cfg.ext_size_threshold or opposing_pressure >= platoon_size:
        return 0.0
    room = cfg.max_extension - state.extension_granted
    if room <= 0:
        return 0.0
    grant = cfg.ext_increment if needed is None else min(needed, cfg.ext_increment)
    grant = max(0.0, min(grant, room))
    state.extension_granted += grant
    state.hold_until = max(state.hold_until, state.phase_elapsed + grant)
    return grant


class Controller:
    """Engine-facing wrapper that hides the mode differences."""

    def __init__(self, intersection_id: str, config: SignalConfig):
        self.id = intersection_id
        self.state = ControllerState(config, next_decision=config.min_green)
        self._fixed_phase = None
        self._fixed_remaining = 0.0

    @property
    def mode(self) -> str:
        return self.state.mode

    @property
    def plan(self) -> TimingPlan:
        return self.state.plan

    def advance(self, t: float, dt: float, occupancy: Mapping | None = None, queues: Mapping | None = None):
        if self.mode == "fixed":
            self._fixed_phase, self._fixed_remaining = fixed_state(self.plan, t)
        elif self.mode == "actuated":
            actuated_step(self.state, occupancy or {}, dt)
        else:
            max_pressure_step(self.state, queues or {}, dt)

    def start(self, t: float) -> None:
        if self.mode == "fixed":
            self._fixed_phase, self._fixed_remaining = fixed_state(self.plan, t)

    @property
    def green_phase(self):
        """Index of the green phase, or ``None`` during red clear."""
        if self.mode == "fixed":
            return self._fixed_phase
        return None if self.state.in_red_clear else self.state.current_phase

    def green_movements(self) -> frozenset:
        idx = self.green_phase
        if idx is None:
            return frozenset()
        return self.plan.phases[idx].green_movements

    def remaining_green(self) -> float:
        """Seconds of green guaranteed to remain (a lower bound under adaptive control)."""
        if self.green_phase is None:
            return 0.0
        if self.mode == "fixed":
            return self._fixed_remaining
        cfg = self.state.config
        st = self.state
        floor = max(cfg.min_green, st.hold_until) - st.phase_elapsed
        if self.mode == "actuated":
            floor = max(floor, cfg.gap_out - st.since_passage)
            floor = min(floor, cfg.max_green + st.extension_granted - st.phase_elapsed)
        else:
            floor = max(floor, st.next_decision - st.phase_elapsed)
        return max(0.0, floor)
