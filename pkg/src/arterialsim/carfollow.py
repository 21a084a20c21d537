"""Car-following kernels: Krauss safe-speed model and the improved IDM.

Every kernel is a pure function. The leading-underscore-free array kernels
(``krauss_safe_speed_array``, ``krauss_update``, ``iidm_accel_array``) accept
numpy arrays or scalars and are what the engine evaluates each step; the
``FollowContext``-based functions are thin scalar wrappers around them so the
two paths cannot drift apart.

Units are SI throughout. Gaps are front bumper to leader's rear bumper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

#: Distinguished "no leader" gap.
NO_LEADER = math.inf

#: Free-acceleration threshold below which the IIDM exponent is treated as singular.
ASTAR_EPS = 1e-9


@dataclass(frozen=True)
class VehicleClassParams:
    """Per-class car-following constants.

    Attributes:
        tau: reaction time [s]
        g_min: standstill gap [m]
        a_max: maximal acceleration [m/s^2]
        b: desired (comfortable) deceleration [m/s^2]
        v_max: speed limit of the class [m/s]
        l: vehicle length [m]
        eps: Krauss driver imperfection in [0, 1]
        delta1, delta2: IIDM exponents
    """

    tau: float
    g_min: float
    a_max: float
    b: float
    v_max: float
    l: float = 5.0
    eps: float = 0.0
    delta1: float = 4.0
    delta2: float = 8.0

    def __post_init__(self):
        for name in ("tau", "g_min", "a_max", "b", "v_max", "l"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value!r}")
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"eps must lie in [0, 1], got {self.eps!r}")
        if not (self.delta1 > 0 and self.delta2 > 0):
            raise ValueError("IIDM exponents delta1, delta2 must be positive")

    def with_(self, **changes) -> "VehicleClassParams":
        return replace(self, **changes)


# Two-class fleet of the arterial study. v_max is 20 m/s rather than the
# 70 m/s quoted for the SUMO runs; see README.
MANUAL = VehicleClassParams(tau=2.5, g_min=2.0, a_max=2.6, b=4.5, v_max=20.0, l=5.0)
SMART = VehicleClassParams(tau=1.0, g_min=0.5, a_max=2.6, b=4.5, v_max=20.0, l=5.0)

# Defaults of the IIDM notation table.
IIDM_DEFAULT = VehicleClassParams(tau=2.05, g_min=4.0, a_max=1.5, b=2.0, v_max=20.0, l=5.0)

# Single-intersection Krauss vehicle: theta = 2.05 + 9/20 = 2.5 s.
KRAUSS_COMPANION = VehicleClassParams(tau=2.05, g_min=4.0, a_max=1.5, b=4.5, v_max=20.0, l=5.0)


@dataclass(frozen=True)
class FollowContext:
    """Inputs of one car-following evaluation.

    ``g`` is ``NO_LEADER`` (infinity) when nothing is ahead.
    """

    v: float
    v_l: float
    g: float
    dt: float

    def __post_init__(self):
        if self.v < 0 or self.v_l < 0:
            raise ValueError("speeds must be non-negative")
        if self.g < 0:
            raise ValueError("gap must be non-negative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def has_leader(self) -> bool:
        return math.isfinite(self.g)


# --------------------------------------------------------------------------
# Krauss


def krauss_safe_speed_array(v, v_l, g, tau, b):
    """v_safe = v_l + (g - v_l*tau) / (vbar/b + tau), vbar = (v + v_l)/2."""
    vbar = 0.5 * (v + v_l)
    return v_l + (g - v_l * tau) / (vbar / b + tau)


def krauss_update(v, v_safe, a_max, v_max, b, eps, u, dt):
    """Krauss speed update from a precomputed safe speed.

    The acceleration bound is ``v + a_max*dt``; the imperfection term pulls
    the speed towards ``max(0, v - b*dt)`` by ``eps*u``. Output is clamped to
    ``[0, v_max]``.
    """
    v1 = np.minimum(np.minimum(v + a_max * dt, v_max), v_safe)
    v0 = v1 - eps * u * (v1 - np.maximum(0.0, v - b * dt))
    return np.maximum(0.0, np.minimum(v1, v0))


def krauss_safe_speed(ctx: FollowContext, p: VehicleClassParams) -> float:
    """Safe speed for a follower; may be negative (the update clamps it)."""
    if not ctx.has_leader:
        return math.inf
    return float(krauss_safe_speed_array(ctx.v, ctx.v_l, ctx.g, p.tau, p.b))


def krauss_step(ctx: FollowContext, p: VehicleClassParams, u: float = 0.0) -> float:
    """Next speed under the Krauss rule, ``u`` being a uniform draw in [0, 1]."""
    v_safe = krauss_safe_speed(ctx, p)
    return float(krauss_update(ctx.v, v_safe, p.a_max, p.v_max, p.b, p.eps, u, ctx.dt))


# --------------------------------------------------------------------------
# IIDM


def iidm_desired_gap_array(v, v_l, tau, g_min, a_max, b):
    return g_min + np.maximum(0.0, v * tau + v * (v - v_l) / (2.0 * np.sqrt(a_max * b)))


def iidm_accel_array(v, v_l, g, a_max, b, tau, g_min, v_max, delta1, delta2):
    """Two-branch IIDM acceleration, vectorised.

    ``g`` may be ``inf`` (no leader), in which case the free branch applies.
    """
    v = np.asarray(v, dtype=float)
    a_free = a_max * (1.0 - (v / v_max) ** delta2)
    gd = iidm_desired_gap_array(v, v_l, tau, g_min, a_max, b)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = gd / g
        braking = a_max * (1.0 - z**delta1)
        regular = a_free > ASTAR_EPS
        exponent = delta1 * a_max / np.where(regular, a_free, 1.0)
        cruising = np.where(regular, a_free * (1.0 - z**exponent), 0.0)
    return np.where(z > 1.0, braking, cruising)


def iidm_desired_gap(ctx: FollowContext, p: VehicleClassParams) -> float:
    return float(iidm_desired_gap_array(ctx.v, ctx.v_l, p.tau, p.g_min, p.a_max, p.b))


def iidm_accel(ctx: FollowContext, p: VehicleClassParams) -> float:
    return float(
        iidm_accel_array(
            ctx.v, ctx.v_l, ctx.g, p.a_max, p.b, p.tau, p.g_min, p.v_max, p.delta1, p.delta2
        )
    )


# --------------------------------------------------------------------------
# equilibrium


class Headway(NamedTuple):
    seconds: float
    vph: float


def equilibrium_headway(p: VehicleClassParams) -> Headway:
    """theta_e = tau + (g_min + l) / v_max, and the matching flow 3600/theta_e."""
    theta = p.tau + (p.g_min + p.l) / p.v_max
    return Headway(theta, 3600.0 / theta)
