"""Planar spring-leg hopper dynamics: RK4 integration with event refinement."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .config import EnvParams
from .terrain import GAP_DEPTH, TerrainProfile

FLIGHT = 0
STANCE = 1

_EVENT_TOL = 1e-11
_BISECT_ITERS = 60


class ActionError(ValueError):
    """Raised for non-finite action components."""


@dataclass
class Action:
    """Physical action: leg angle command (rad), thrust (N), damping (0..1)."""
    leg_angle_cmd: float
    thrust: float
    damping: float


@dataclass
class AgentState:
    x: float
    z: float
    vx: float
    vz: float
    leg_angle: float          # from vertical; positive = foot ahead of CoM
    leg_len: float
    leg_angle_rate: float
    phase: int                # FLIGHT or STANCE
    foot_x: float             # anchor while in stance, foot tip otherwise
    steps_completed: int      # touchdown count
    sim_time: float
    time_in_phase: float
    fallen: bool = False

    def copy(self) -> "AgentState":
        return replace(self)


def standing_state(params: EnvParams, x: float = 0.0,
                   ground: float = 0.0) -> AgentState:
    """Static stance equilibrium: vertical leg, spring carrying the weight."""
    compression = params.mass * params.gravity / params.spring_k
    z = ground + params.rest_length - compression
    return AgentState(
        x=x, z=z, vx=0.0, vz=0.0,
        leg_angle=0.0, leg_len=params.rest_length - compression,
        leg_angle_rate=0.0, phase=STANCE, foot_x=x,
        steps_completed=0, sim_time=0.0, time_in_phase=0.0,
    )


def foot_position(s: AgentState, params: EnvParams) -> tuple[float, float]:
    if s.phase == STANCE:
        raise ValueError("foot is the anchor while in stance")
    return (s.x + params.rest_length * math.sin(s.leg_angle),
            s.z - params.rest_length * math.cos(s.leg_angle))


def _flight_deriv(y, action: Action, params: EnvParams, ext):
    x, z, vx, vz, ang = y
    dang = (action.leg_angle_cmd - ang) / params.leg_servo_tau
    return (vx, vz, ext[0] / params.mass,
            -params.gravity + ext[1] / params.mass, dang)


def _stance_deriv(y, action: Action, params: EnvParams, ext, fx, fz):
    x, z, vx, vz, _ = y
    lx = x - fx
    lz = z - fz
    length = math.sqrt(lx * lx + lz * lz)
    ux = lx / length
    uz = lz / length
    rate = vx * ux + vz * uz
    force = (params.spring_k * (params.rest_length - length)
             + action.thrust
             - action.damping * params.max_damping * rate)
    if force < 0.0:
        force = 0.0  # the leg can only push
    return (vx, vz,
            (force * ux + ext[0]) / params.mass,
            (force * uz + ext[1]) / params.mass - params.gravity,
            0.0)


def _rk4(y, h, deriv):
    k1 = deriv(y)
    k2 = deriv(tuple(y[i] + 0.5 * h * k1[i] for i in range(5)))
    k3 = deriv(tuple(y[i] + 0.5 * h * k2[i] for i in range(5)))
    k4 = deriv(tuple(y[i] + h * k3[i] for i in range(5)))
    return tuple(
        y[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        for i in range(5)
    )


def _pack(s: AgentState):
    return (s.x, s.z, s.vx, s.vz, s.leg_angle)


def _flight_event(y, profile: TerrainProfile, params: EnvParams) -> float:
    """Signed foot clearance; <= 0 means touchdown (only where ground exists)."""
    x, z, _, _, ang = y
    foot_x = x + params.rest_length * math.sin(ang)
    foot_z = z - params.rest_length * math.cos(ang)
    h = profile.height_clamped(foot_x)
    if h == GAP_DEPTH:
        return 1.0  # no ground to touch inside a gap
    return foot_z - h


def _stance_event(y, fx, fz, params: EnvParams) -> float:
    """Signed leg extension; >= 0 means the spring reached rest length."""
    lx = y[0] - fx
    lz = y[1] - fz
    return math.sqrt(lx * lx + lz * lz) - params.rest_length


def _stance_angle(y, fx, fz) -> float:
    return math.atan2(fx - y[0], y[1] - fz)


def _stance_angle_rate(y, fx, fz) -> float:
    lx = y[0] - fx
    lz = y[1] - fz
    l2 = lx * lx + lz * lz
    return (-y[2] * lz + lx * y[3]) / l2


def step_dynamics(
    state: AgentState,
    action: Action,
    profile: TerrainProfile,
    params: EnvParams,
    ext_force: tuple[float, float] = (0.0, 0.0),
) -> AgentState:
    """Advance one control step (params.dt), refining phase-change events.

    Touchdown and liftoff are located by bisection inside the step so stance
    always begins with the foot exactly on the terrain and ends exactly at
    rest length.
    """
    for value in (action.leg_angle_cmd, action.thrust, action.damping):
        if not math.isfinite(value):
            raise ActionError(f"non-finite action component: {action}")
    if state.fallen:
        raise ValueError("cannot step a fallen agent")
    act = Action(
        leg_angle_cmd=min(max(action.leg_angle_cmd, -params.max_leg_angle),
                          params.max_leg_angle),
        thrust=min(max(action.thrust, 0.0), params.max_thrust),
        damping=min(max(action.damping, 0.0), 1.0),
    )

    s = state
    remaining = params.dt
    for _ in range(6):
        if remaining <= 1e-14 or s.fallen:
            break
        s, remaining = _advance_to_event(s, act, profile, params, ext_force,
                                         remaining)
    if remaining > 1e-14 and not s.fallen:
        # Too many transitions in one step (contact chatter): consume the rest
        # of the step without event refinement so time always advances.
        y = _rk4(_pack(s), remaining, _make_deriv(s, act, profile, params,
                                                  ext_force))
        s = _unpack(s, y, remaining, act, profile, params)
    return _check_falls(s, profile, params)


def _make_deriv(s: AgentState, act: Action, profile, params, ext):
    if s.phase == FLIGHT:
        return lambda y: _flight_deriv(y, act, params, ext)
    fx = s.foot_x
    fz = profile.height_clamped(fx)
    return lambda y: _stance_deriv(y, act, params, ext, fx, fz)


def _advance_to_event(s, act, profile, params, ext, h):
    y0 = _pack(s)
    if s.phase == FLIGHT:
        deriv = lambda y: _flight_deriv(y, act, params, ext)

        def crossed(y) -> bool:
            if _flight_event(y, profile, params) >= -1e-12:
                return False
            # require the foot to be descending, not grazing upward
            foot_rate = y[3] + params.rest_length * math.sin(y[4]) * \
                (act.leg_angle_cmd - y[4]) / params.leg_servo_tau
            return foot_rate < 0.0
    else:
        fx = s.foot_x
        fz = profile.height_clamped(fx)
        deriv = lambda y: _stance_deriv(y, act, params, ext, fx, fz)

        def crossed(y) -> bool:
            if _stance_event(y, fx, fz, params) <= 1e-12:
                return False
            lx = y[0] - fx
            lz = y[1] - fz
            length = math.sqrt(lx * lx + lz * lz)
            return (y[2] * lx + y[3] * lz) / length > 0.0  # extending

    y1 = _rk4(y0, h, deriv)
    if not crossed(y1):
        return _unpack(s, y1, h, act, profile, params), 0.0

    # Bisect the event time within (0, h].
    lo, hi = 0.0, h
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if crossed(_rk4(y0, mid, deriv)):
            hi = mid
        else:
            lo = mid
        if hi - lo < _EVENT_TOL:
            break
    y_ev = _rk4(y0, hi, deriv)
    s_ev = _unpack(s, y_ev, hi, act, profile, params)
    s_ev = _switch_phase(s_ev, profile, params)
    return s_ev, h - hi


def _unpack(s: AgentState, y, elapsed, act: Action, profile,
            params) -> AgentState:
    out = s.copy()
    out.x, out.z, out.vx, out.vz = y[0], y[1], y[2], y[3]
    out.sim_time = s.sim_time + elapsed
    out.time_in_phase = s.time_in_phase + elapsed
    if s.phase == FLIGHT:
        out.leg_angle = y[4]
        out.leg_angle_rate = (act.leg_angle_cmd - y[4]) / params.leg_servo_tau
        out.leg_len = params.rest_length
        out.foot_x = out.x + params.rest_length * math.sin(out.leg_angle)
    else:
        fx = s.foot_x
        fz = profile.height_clamped(fx)
        out.leg_angle = _stance_angle(y, fx, fz)
        out.leg_angle_rate = _stance_angle_rate(y, fx, fz)
        lx = out.x - fx
        lz = out.z - fz
        out.leg_len = math.sqrt(lx * lx + lz * lz)
    return out


def _switch_phase(s: AgentState, profile, params) -> AgentState:
    out = s.copy()
    if s.phase == FLIGHT:
        # Touchdown: anchor the foot on the terrain surface.
        foot_x = s.x + params.rest_length * math.sin(s.leg_angle)
        h = profile.height_clamped(foot_x)
        if h == GAP_DEPTH:
            out.fallen = True
            return out
        out.phase = STANCE
        out.foot_x = foot_x
        out.leg_len = params.rest_length
        out.steps_completed += 1
        out.time_in_phase = 0.0
        out.leg_angle = math.atan2(foot_x - s.x, s.z - h)
        out.leg_angle_rate = _stance_angle_rate(_pack(s), foot_x, h)
    else:
        # Liftoff: the spring reached rest length.
        out.phase = FLIGHT
        out.leg_len = params.rest_length
        out.time_in_phase = 0.0
        out.leg_angle_rate = 0.0
        out.foot_x = out.x + params.rest_length * math.sin(out.leg_angle)
    return out


def _check_falls(s: AgentState, profile: TerrainProfile,
                 params: EnvParams) -> AgentState:
    if s.fallen:
        return s
    out = s
    h_com = profile.height_clamped(s.x)
    if s.phase == FLIGHT:
        foot_x = s.x + params.rest_length * math.sin(s.leg_angle)
        foot_z = s.z - params.rest_length * math.cos(s.leg_angle)
        h_foot = profile.height_clamped(foot_x)
        if h_foot == GAP_DEPTH:
            rim = profile.gap_floor_reference(foot_x)
            if foot_z <= rim - 0.02:
                out = s.copy()
                out.fallen = True  # dropped into a gap
                return out
    else:
        if abs(s.leg_angle) > params.max_leg_angle:
            out = s.copy()
            out.fallen = True  # tripped over the stance leg
            return out
    if h_com != GAP_DEPTH and s.z < h_com + params.fall_height_margin:
        out = s.copy()
        out.fallen = True  # body collapsed into the ground
    return out


def mechanical_energy(s: AgentState, profile: TerrainProfile,
                      params: EnvParams) -> float:
    """Kinetic + gravitational + spring energy (spring only loaded in stance)."""
    e = 0.5 * params.mass * (s.vx * s.vx + s.vz * s.vz)
    e += params.mass * params.gravity * s.z
    if s.phase == STANCE:
        c = params.rest_length - s.leg_len
        e += 0.5 * params.spring_k * c * c
    return e
