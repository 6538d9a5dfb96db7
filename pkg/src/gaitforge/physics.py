"""Time stepping at 2 kHz: penalty contact, PD motors, action filter and delay."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .model import RobotModel, RobotState, observe


class NumericalBlowup(RuntimeError):
    pass


@dataclass(frozen=True)
class PhysicsConfig:
    dt: float = 5e-4
    substeps: int = 66
    contact_stiffness: float = 1e5
    contact_damping: float = 1e3
    tangent_damping: float = 1e3
    lpf_alpha: float = 0.3
    kp: float = 300.0
    kd: float = 6.0
    knee_range: tuple = (-2.6, 0.0)
    limit_stiffness: float = 1000.0
    limit_damping: float = 10.0
    sanity_bound: float = 1e3
    policy_rate: float = 30.0

    def __post_init__(self):
        if self.dt <= 0 or self.substeps < 1:
            raise ValueError("dt and substeps must be positive")
        if not 0.0 < self.lpf_alpha <= 1.0:
            raise ValueError("lpf_alpha must lie in (0, 1]")
        object.__setattr__(self, "knee_range", tuple(float(v) for v in self.knee_range))

    @property
    def control_period(self) -> float:
        return self.dt * self.substeps

    def ticks(self, seconds: float) -> int:
        """Policy ticks in ``seconds``, counted at the nominal policy rate.

        66 substeps of 0.5 ms make a 33 ms tick, slightly longer than 1/30 s;
        durations are still quoted as 30 ticks per second.
        """
        return int(round(seconds * self.policy_rate))

    def gains(self) -> PdGains:
        return PdGains(np.full(4, self.kp), np.full(4, self.kd))

    def delay_steps(self, delay: float) -> int:
        """Delay quantized to whole substeps; must fit inside one control period."""
        n = int(round(delay / self.dt))
        if n < 0 or n >= self.substeps:
            raise ValueError(f"delay {delay} s does not fit in one control period")
        return n


@dataclass
class ContactState:
    normal: float
    tangent: float
    penetration: float
    in_contact: bool


@dataclass
class PdGains:
    kp: np.ndarray
    kd: np.ndarray

    def __post_init__(self):
        self.kp = np.broadcast_to(np.asarray(self.kp, dtype=float), (4,)).copy()
        self.kd = np.broadcast_to(np.asarray(self.kd, dtype=float), (4,)).copy()
        if (self.kp < 0).any() or (self.kd < 0).any():
            raise ValueError("PD gains must be nonnegative")


@dataclass
class ActionFilter:
    alpha: float = 0.3
    state: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        self.state = np.array(self.state, dtype=float)


@dataclass
class DelayLine:
    """Targets wait ``delay_steps`` substeps before reaching the filter."""

    delay_steps: int = 0
    queue: deque = field(default_factory=deque)

    def push(self, time_step: int, action) -> None:
        self.queue.append((time_step + self.delay_steps, np.array(action, dtype=float)))

    def current(self, time_step: int, held):
        while self.queue and self.queue[0][0] <= time_step:
            held = self.queue.popleft()[1]
        return held


def pd_torque(gains: PdGains, q_m, qdot_m, target, limits) -> np.ndarray:
    u = np.empty(4)
    K.pd_torque(gains.kp, gains.kd, np.asarray(q_m, float), np.asarray(qdot_m, float),
                np.asarray(target, float), np.asarray(limits, float), u)
    return u


def filter_action(f: ActionFilter, a) -> np.ndarray:
    f.state = f.alpha * np.asarray(a, dtype=float) + (1.0 - f.alpha) * f.state
    return f.state.copy()


def contact_force(model: RobotModel, state: RobotState, friction_ratio: float,
                  stiffness: float = 1e5, damping: float = 1e3,
                  tangent_damping: float = 1e3) -> list[ContactState]:
    """Left and right foot contact forces."""
    out = np.zeros((2, 6))
    K.contact_forces(model.packed(), state.q, state.qdot, friction_ratio,
                     stiffness, damping, tangent_damping, out)
    return [ContactState(out[f, 0], out[f, 1], out[f, 2], bool(out[f, 3])) for f in range(2)]


def step_substep(model: RobotModel, state: RobotState, torques, friction_ratio: float,
                 dt: float, cfg: PhysicsConfig | None = None, contact: bool = True,
                 wrench=(0.0, 0.0, 0.0), contacts_out: np.ndarray | None = None) -> RobotState:
    """Semi-implicit Euler: velocities first, then positions with the new velocities."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    cfg = cfg or PhysicsConfig()
    q = state.q.copy()
    qd = state.qdot.copy()
    contacts = np.zeros((2, 6)) if contacts_out is None else contacts_out
    ok = K.substep(model.packed(), q, qd, np.asarray(torques, float), friction_ratio,
                   np.asarray(wrench, float), cfg.knee_range[0], cfg.knee_range[1],
                   cfg.limit_stiffness, cfg.limit_damping, cfg.contact_stiffness,
                   cfg.contact_damping, cfg.tangent_damping, contact, dt, contacts)
    bad = (not ok or not np.isfinite(q).all() or not np.isfinite(qd).all()
           or np.abs(q[1:]).max() >= cfg.sanity_bound or np.abs(qd).max() >= cfg.sanity_bound)
    if bad:
        raise NumericalBlowup("state left the sanity bounds")
    return RobotState(q, qd)


class SimContext:
    """One robot plus its actuator pipeline (delay line, low-pass filter, PD)."""

    def __init__(self, model: RobotModel, state: RobotState, cfg: PhysicsConfig | None = None,
                 friction_ratio: float = 1.0, delay: float = 0.0):
        self.cfg = cfg or PhysicsConfig()
        self.model = model
        self.P = model.packed()[None, :].copy()
        self.q = state.q[None, :].copy()
        self.qd = state.qdot[None, :].copy()
        self.friction = np.array([friction_ratio], dtype=float)
        self.delay = np.array([self.cfg.delay_steps(delay)], dtype=np.int64)
        # filter and held target start at the current joint pose
        self.filt = state.q[None, 3:].copy()
        self.held = state.q[None, 3:].copy()
        self.wrench = np.zeros((1, 3))
        self.wrench_steps = np.zeros(1, dtype=np.int64)
        self.kp = np.full(4, self.cfg.kp)
        self.kd = np.full(4, self.cfg.kd)
        self.flags = np.zeros(1, dtype=np.int64)
        self.mean_torque = np.zeros((1, 4))

    @property
    def state(self) -> RobotState:
        return RobotState(self.q[0].copy(), self.qd[0].copy())

    def apply_wrench(self, wrench, n_substeps: int) -> None:
        self.wrench[0] = wrench
        self.wrench_steps[0] = n_substeps

    def advance_control_period(self, action):
        """Returns (observable state, mean |u|^2, mean vertical GRF per foot)."""
        pending = np.asarray(action, dtype=float).reshape(1, 4).copy()
        u2 = np.zeros(1)
        grf = np.zeros((1, 2))
        c = self.cfg
        K.advance_period(self.P, self.q, self.qd, self.held, pending, self.filt, self.delay,
                         self.friction, self.wrench, self.wrench_steps, self.kp, self.kd,
                         c.lpf_alpha, c.knee_range[0], c.knee_range[1], c.limit_stiffness,
                         c.limit_damping, c.contact_stiffness, c.contact_damping,
                         c.tangent_damping, c.dt, c.substeps, c.sanity_bound, u2, grf, self.flags,
                         self.mean_torque)
        self.wrench_steps[0] = max(0, self.wrench_steps[0] - c.substeps)
        if self.flags[0] & K.FLAG_BLOWUP:
            raise NumericalBlowup("state left the sanity bounds")
        return observe(self.state), float(u2[0]), grf[0].copy()

    @property
    def knee_on_ground(self) -> bool:
        return bool(self.flags[0] & K.FLAG_KNEE_GROUND)
