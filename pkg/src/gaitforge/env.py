"""Batched locomotion environment.

Each tick the policy emits four motor targets; the simulator runs one
control period and the environment scores it against the gait-library
reference. Observations carry a five-tick history, the goal carries the
command plus reference frames at ticks t, t+1, t+4 and t+7.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .gaitlib import GaitLibrary, reference_frames
from .model import RobotModel, default_model
from .physics import PhysicsConfig
from .randomization import MU_DIM, DynamicsParams, apply_dynamics, observation_noise

TERM_NAMES = ("motor", "pelvis_pos", "pelvis_vel", "pelvis_rot", "pelvis_rate", "torque", "grf")
OBS_DIM = 12
GOAL_OFFSETS = (0, 1, 4, 7)
GOAL_DIM = 2 + 8 * len(GOAL_OFFSETS)
HISTORY = 5
POLICY_DIM = HISTORY * OBS_DIM + (HISTORY - 1) * 4 + GOAL_DIM
VALUE_DIM = 14 + GOAL_DIM + MU_DIM
EXP_CAP = 700.0


@dataclass(frozen=True)
class Command:
    vx_d: float
    hz_d: float

    def __post_init__(self):
        if not (np.isfinite(self.vx_d) and np.isfinite(self.hz_d)):
            raise ValueError("command must be finite")

    def array(self) -> np.ndarray:
        return np.array([self.vx_d, self.hz_d])


@dataclass(frozen=True)
class CommandRanges:
    vx: tuple = (-2.0, 2.0)
    hz: tuple = (0.70, 0.95)
    # opening command of an episode walks at a normal height
    first_hz_fraction: float = 0.9
    height_scale: float = 1.0

    @property
    def first_hz_min(self) -> float:
        return self.first_hz_fraction * self.hz[1] / self.height_scale


def sample_command(rng: np.random.Generator, ranges: CommandRanges = CommandRanges(),
                   first: bool = False) -> Command:
    vx = rng.uniform(*ranges.vx)
    lo = max(ranges.hz[0], ranges.first_hz_min) if first else ranges.hz[0]
    hz = rng.uniform(lo, ranges.hz[1])
    return Command(float(vx), float(hz))


@dataclass(frozen=True)
class RewardWeights:
    omega: tuple = (0.3, 0.24, 0.15, 0.13, 0.06, 0.06, 0.06)
    rho: tuple = (5.0, 5.0, 2.0, 10.0, 0.5, 1e-3, 1e-5)

    def __post_init__(self):
        omega = tuple(float(v) for v in self.omega)
        rho = tuple(float(v) for v in self.rho)
        if len(omega) != 7 or len(rho) != 7:
            raise ValueError("reward needs 7 weights and 7 scales")
        if min(omega) < 0 or abs(sum(omega) - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        if min(rho) <= 0:
            raise ValueError("scales must be positive")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "rho", rho)


def geodesic(a, b):
    """Shortest angular distance between two planar rotations."""
    d = np.mod(np.asarray(a, float) - np.asarray(b, float) + np.pi, 2.0 * np.pi) - np.pi
    return np.abs(d)


def compute_reward(refs: dict, measured: dict, cmd, mean_torque_sq, mean_grf,
                   w: RewardWeights = RewardWeights(), body_weight: float = 1.0):
    """Seven-term tracking reward; broadcasts over any leading batch shape.

    refs: q_m (.., 4), x, z, pitch.  measured: q_m, x, z, vx, vz, pitch, pitch_rate.
    cmd: (.., 2) as [vx, hz]. Returns (r, terms) with terms stacked on the last axis.
    """
    cmd = np.asarray(cmd, float)
    sq = [
        np.sum((np.asarray(refs["q_m"]) - np.asarray(measured["q_m"])) ** 2, axis=-1),
        (np.asarray(refs["x"]) - measured["x"]) ** 2 + (np.asarray(refs["z"]) - measured["z"]) ** 2,
        (cmd[..., 0] - measured["vx"]) ** 2 + np.asarray(measured["vz"]) ** 2,
        geodesic(refs["pitch"], measured["pitch"]) ** 2,
        np.asarray(measured["pitch_rate"], float) ** 2,
        np.asarray(mean_torque_sq, float),
        np.sum((np.asarray(mean_grf, float) / body_weight) ** 2, axis=-1),
    ]
    terms = np.stack([np.exp(-np.minimum(rho * e, EXP_CAP)) for rho, e in zip(w.rho, sq)], axis=-1)
    # the weights sum to one only up to rounding
    return np.minimum(terms @ np.asarray(w.omega), 1.0), terms


@dataclass
class ReferenceIntegrator:
    """Desired pelvis x and pitch, integrated from the commanded velocities."""

    x: float = 0.0
    pitch: float = 0.0

    def reset(self, x: float, pitch: float) -> None:
        self.x, self.pitch = float(x), float(pitch)

    def advance(self, vx: float, dt: float, pitch_rate: float = 0.0) -> None:
        self.x += vx * dt
        self.pitch += pitch_rate * dt


def goal_vector(cmd, coeffs, phase, dphase, step_period, offsets=GOAL_OFFSETS) -> np.ndarray:
    """Command followed by (positions, velocities) at each offset tick."""
    cmd = np.asarray(cmd, float)
    phases = np.asarray(phase, float)[..., None] + dphase * np.asarray(offsets, float)
    pos, vel = reference_frames(coeffs, phases, step_period)
    frames = np.concatenate([pos, vel], axis=-1).reshape(*cmd.shape[:-1], -1)
    return np.concatenate([cmd, frames], axis=-1)


def _goal_batch(cmd, coeffs, phase, dphase, step_period, offsets=GOAL_OFFSETS) -> np.ndarray:
    n, m = cmd.shape[0], len(offsets)
    phases = phase[:, None] + dphase * np.asarray(offsets, float)
    pos = np.empty((n, m, 4))
    vel = np.empty((n, m, 4))
    K.reference_batch(coeffs, phases, step_period, pos, vel)
    return np.concatenate([cmd, np.concatenate([pos, vel], axis=2).reshape(n, -1)], axis=1)


def build_goal(cmd: Command, lib: GaitLibrary, phase: float, tick: int = 0,
               physics: PhysicsConfig = PhysicsConfig()) -> np.ndarray:
    """Goal for one robot. ``phase`` is the phase at ``tick``; the tick itself only matters through it."""
    c = cmd.array()
    coeffs = lib.query_coeffs(c[0], c[1])
    return goal_vector(c, coeffs, phase, physics.control_period / lib.step_period, lib.step_period)


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 2500
    command_period: int = 240
    commands: CommandRanges = field(default_factory=CommandRanges)
    fall_fraction: float = 0.55
    terminate_on_knee: bool = True
    reset_joint_noise: float = 0.05
    reset_height_tol: float = 0.02
    # single-gait training pins the command to one gait
    fixed_command: tuple | None = None
    resample_commands: bool = True

    @property
    def fall_height(self) -> float:
        c = self.commands
        return self.fall_fraction * c.hz[1] / c.height_scale


class BipedEnv:
    """``n`` independent robots stepped together; finished robots wait for ``reset_one``."""

    def __init__(self, library: GaitLibrary, cfg: EnvConfig = EnvConfig(),
                 physics: PhysicsConfig = PhysicsConfig(), model: RobotModel | None = None,
                 reward: RewardWeights = RewardWeights(), n: int = 1, record: bool = False):
        self.lib = library
        self.cfg = cfg
        self.physics = physics
        self.model = model or default_model()
        self.reward_weights = reward
        self.n = n
        self.record = record
        self.dt = physics.control_period
        self.dphase = self.dt / library.step_period

        self.P = np.tile(self.model.packed(), (n, 1))
        self.q = np.zeros((n, K.NQ))
        self.qd = np.zeros((n, K.NQ))
        self.held = np.zeros((n, 4))
        self.filt = np.zeros((n, 4))
        self.delay = np.zeros(n, dtype=np.int64)
        self.friction = np.ones(n)
        self.wrench = np.zeros((n, 3))
        self.wrench_steps = np.zeros(n, dtype=np.int64)
        self.kp = np.full(4, physics.kp)
        self.kd = np.full(4, physics.kd)
        self.flags = np.zeros(n, dtype=np.int64)
        self.u2 = np.zeros(n)
        self.grf = np.zeros((n, 2))
        self.mean_u = np.zeros((n, 4))

        self.cmd = np.zeros((n, 2))
        self.coeffs = np.zeros((n, 4, 2, 6))
        self.phase = np.zeros(n)
        self.tick = np.zeros(n, dtype=np.int64)
        self.seg_ticks = np.zeros(n, dtype=np.int64)
        self.x_anchor = np.zeros(n)
        self.pitch_des = np.zeros(n)
        self.noise = np.zeros((n, 5))
        self.mu = np.zeros((n, MU_DIM))
        self.body_weight = np.ones(n)
        self.obs_hist = np.zeros((n, HISTORY, OBS_DIM))
        self.act_hist = np.zeros((n, HISTORY - 1, 4))
        self.returns = np.zeros(n)
        self.done = np.ones(n, dtype=bool)
        self.rngs = [np.random.default_rng(0) for _ in range(n)]
        self.traces: list[list[dict]] = [[] for _ in range(n)]
        self._goal = None
        self._ref_now = np.empty((n, 1, 4))
        self._ref_vel = np.empty((n, 1, 4))

    # -- commands ---------------------------------------------------------
    def set_command(self, i: int, cmd: Command) -> None:
        self.cmd[i] = cmd.array()
        self.coeffs[i] = self.lib.query_coeffs(cmd.vx_d, cmd.hz_d)
        self._goal = None

    def _draw_command(self, i: int, first: bool) -> Command:
        if self.cfg.fixed_command is not None:
            return Command(*self.cfg.fixed_command)
        return sample_command(self.rngs[i], self.cfg.commands, first=first)

    @property
    def x_des(self) -> np.ndarray:
        return self.x_anchor + self.cmd[:, 0] * self.dt * self.seg_ticks

    def set_wrench(self, i: int, wrench, seconds: float) -> None:
        self.wrench[i] = wrench
        self.wrench_steps[i] = int(round(seconds / self.physics.dt))

    # -- reset ------------------------------------------------------------
    def reset(self, seeds, mus=None, commands=None) -> np.ndarray:
        for i in range(self.n):
            self.reset_one(i, seeds[i], None if mus is None else mus[i],
                           None if commands is None else commands[i])
        return self.policy_input()

    def reset_one(self, i: int, seed, mu: DynamicsParams | None = None,
                  command: Command | None = None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.rngs[i] = rng
        mu = mu or DynamicsParams.nominal()
        model = apply_dynamics(self.model, mu)
        self.P[i] = model.packed()
        self.body_weight[i] = model.total_mass * model.gravity
        self.friction[i] = mu.friction
        self.delay[i] = self.physics.delay_steps(mu.delay)
        self.noise[i] = mu.noise
        self.mu[i] = mu.flat()

        self.set_command(i, command or self._draw_command(i, first=True))
        self.phase[i] = 0.0
        self._goal = None
        self.tick[i] = 0
        self.seg_ticks[i] = 0

        pos, _ = reference_frames(self.coeffs[i], 0.0, self.lib.step_period)
        joints = pos + rng.uniform(-1.0, 1.0, 4) * self.cfg.reset_joint_noise
        q = np.array([0.0, 0.0, 0.0, *joints])
        # lowest foot on the ground, pelvis kept near the commanded height
        hz = self.cmd[i, 1]
        tol = self.cfg.reset_height_tol
        q[1] = min(max(-_lowest_foot(self.P[i], q), hz - tol), hz + tol)
        self.q[i] = q
        self.qd[i] = 0.0
        self.held[i] = joints
        self.filt[i] = joints
        self.wrench[i] = 0.0
        self.wrench_steps[i] = 0
        self.x_anchor[i] = q[0]
        self.pitch_des[i] = q[2]

        obs = self._observe(i)
        self.obs_hist[i] = obs
        self.act_hist[i] = 0.0
        self.returns[i] = 0.0
        self.done[i] = False
        self.traces[i] = []
        return self.policy_input()[i]

    # -- observation ------------------------------------------------------
    def _observe(self, i: int) -> np.ndarray:
        v = np.concatenate([self.q[i, 2:], self.qd[i]])
        v = v + observation_noise(self.rngs[i], self.noise[i])
        return np.nan_to_num(v, nan=0.0, posinf=0.0, neginf=0.0)

    def _observe_all(self, live) -> np.ndarray:
        """Fresh noisy observations for live robots; each robot draws from its own stream."""
        u = np.zeros((self.n, OBS_DIM))
        for i in np.flatnonzero(live):
            u[i] = self.rngs[i].uniform(-1.0, 1.0, OBS_DIM)
        motor_angle, motor_vel, _, gyro_angle, gyro_vel = self.noise.T
        amp = np.zeros((self.n, OBS_DIM))
        amp[:, 0] = gyro_angle
        amp[:, 1:5] = motor_angle[:, None]
        amp[:, 7] = gyro_vel
        amp[:, 8:] = motor_vel[:, None]
        v = np.concatenate([self.q[:, 2:], self.qd], axis=1) + u * amp
        return np.nan_to_num(v, nan=0.0, posinf=0.0, neginf=0.0)

    def goal(self) -> np.ndarray:
        if self._goal is None:
            self._goal = _goal_batch(self.cmd, self.coeffs, self.phase, self.dphase,
                                     self.lib.step_period)
        return self._goal

    def policy_input(self) -> np.ndarray:
        return np.concatenate([self.obs_hist.reshape(self.n, -1),
                               self.act_hist.reshape(self.n, -1), self.goal()], axis=1)

    def value_input(self) -> np.ndarray:
        """Noise-free state with pelvis x relative to its target, plus goal and dynamics draw."""
        gt = np.concatenate([self.q, self.qd], axis=1)
        gt[:, 0] -= self.x_des
        gt = np.nan_to_num(gt, nan=0.0, posinf=0.0, neginf=0.0)
        return np.concatenate([gt, self.goal(), self.mu], axis=1)

    # -- step -------------------------------------------------------------
    def step(self, actions):
        """Advance every live robot one tick. Returns (policy input, reward, done, info)."""
        actions = np.asarray(actions, dtype=float).reshape(self.n, 4)
        live = ~self.done
        pending = np.where(live[:, None], actions, self.held)
        c = self.physics
        K.advance_period(self.P, self.q, self.qd, self.held, pending.copy(), self.filt, self.delay,
                         self.friction, self.wrench, self.wrench_steps, self.kp, self.kd,
                         c.lpf_alpha, c.knee_range[0], c.knee_range[1], c.limit_stiffness,
                         c.limit_damping, c.contact_stiffness, c.contact_damping,
                         c.tangent_damping, c.dt, c.substeps, c.sanity_bound,
                         self.u2, self.grf, self.flags, self.mean_u)
        self.wrench_steps = np.maximum(0, self.wrench_steps - c.substeps)

        self.act_hist[:, :-1] = self.act_hist[:, 1:]
        self.act_hist[:, -1] = actions
        self.tick += live
        self.seg_ticks += live
        self.phase = np.where(live, np.mod(self.phase + self.dphase, 2.0), self.phase)
        self._goal = None
        K.reference_batch(self.coeffs, self.phase[:, None], self.lib.step_period,
                          self._ref_now, self._ref_vel)

        refs = {"q_m": self._ref_now[:, 0],
                "x": self.x_des, "z": np.clip(self.cmd[:, 1], self.lib.hz_axis[0], self.lib.hz_axis[-1]),
                "pitch": self.pitch_des}
        measured = {"q_m": self.q[:, 3:], "x": self.q[:, 0], "z": self.q[:, 1],
                    "vx": self.qd[:, 0], "vz": self.qd[:, 1], "pitch": self.q[:, 2],
                    "pitch_rate": self.qd[:, 2]}
        with np.errstate(invalid="ignore", over="ignore"):
            reward, terms = compute_reward(refs, measured, self.cmd, self.u2, self.grf,
                                           self.reward_weights, self.body_weight[:, None])

        blowup = (self.flags & K.FLAG_BLOWUP) != 0
        knee = ((self.flags & K.FLAG_KNEE_GROUND) != 0) & self.cfg.terminate_on_knee
        fell = self.q[:, 1] < self.cfg.fall_height
        horizon = self.tick >= self.cfg.horizon
        reward = np.where(blowup | ~live, 0.0, np.nan_to_num(reward))
        terms = np.where((blowup | ~live)[:, None], 0.0, np.nan_to_num(terms))
        self.returns += reward

        reasons = [None] * self.n
        done = np.zeros(self.n, dtype=bool)
        for i in np.flatnonzero(live):
            for name, hit in (("blowup", blowup[i]), ("fell", fell[i]), ("knee", knee[i]),
                              ("horizon", horizon[i])):
                if hit:
                    reasons[i] = name
                    done[i] = True
                    break
        episode_returns = {int(i): float(self.returns[i]) for i in np.flatnonzero(done)}

        if self.record:
            self._record(live, reward, terms)

        # commands are piecewise constant with breakpoints every command_period ticks
        switch = live & ~done & (self.tick % self.cfg.command_period == 0)
        if not self.cfg.resample_commands:
            switch[:] = False
        for i in np.flatnonzero(switch):
            self.x_anchor[i] = self.x_des[i]
            self.seg_ticks[i] = 0
            self.set_command(i, self._draw_command(i, first=False))

        fresh = self._observe_all(live)
        self.obs_hist[:, :-1] = self.obs_hist[:, 1:]
        self.obs_hist[:, -1] = np.where(live[:, None], fresh, self.obs_hist[:, -2])
        self.done |= done
        info = {"terms": terms, "reasons": reasons, "episode_returns": episode_returns,
                "truncated": horizon & done, "value_input": self.value_input()}
        return self.policy_input(), reward, done, info

    def _record(self, live, reward, terms) -> None:
        for i in np.flatnonzero(live):
            row = {"tick": int(self.tick[i]), "cmd_vx": self.cmd[i, 0], "cmd_hz": self.cmd[i, 1],
                   "phase": self.phase[i], "reward": reward[i]}
            row.update({f"r_{name}": terms[i, k] for k, name in enumerate(TERM_NAMES)})
            row.update({"x": self.q[i, 0], "z": self.q[i, 1], "pitch": self.q[i, 2],
                        "vx": self.qd[i, 0], "vz": self.qd[i, 1], "pitch_rate": self.qd[i, 2]})
            for k, name in enumerate(("hip_L", "knee_L", "hip_R", "knee_R")):
                row[f"q_{name}"] = self.q[i, 3 + k]
                row[f"qd_{name}"] = self.qd[i, 3 + k]
                row[f"u_{name}"] = self.mean_u[i, k]
            row["grf_L"], row["grf_R"] = self.grf[i]
            self.traces[i].append(row)


def _lowest_foot(P, q) -> float:
    """Lowest foot height for the pose with the pelvis at z = q[1]."""
    phi = np.empty(5)
    K.link_angles(q, phi)
    coef = np.empty(5)
    pos = np.empty(2)
    zs = []
    for left in (True, False):
        K.foot_coefficients(P, left, coef)
        K.point_position(q, coef, phi, pos)
        zs.append(pos[1])
    return min(zs) - q[1]


def write_trace_csv(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if not rows:
            fh.write("tick\n")
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
