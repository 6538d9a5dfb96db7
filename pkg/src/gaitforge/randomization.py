"""Domain randomization with a linear widening curriculum.

Ranges default to the dynamics table: multipliers on link mass, link COM
offset and joint damping, ground friction ratio, uniform sensor noise and
communication delay. At curriculum level 0 every range collapses onto the
nominal value; at level 1 the full table range applies.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .model import ObservableState, RobotModel

NOISE_CHANNELS = ("motor_angle_noise", "motor_velocity_noise", "accelerometer_noise",
                  "gyro_angle_noise", "gyro_velocity_noise")

# value each row anneals from
NOMINAL = {
    "link_mass": 1.0,
    "link_com": 1.0,
    "joint_damping": 1.0,
    "friction": 1.0,
    "motor_angle_noise": 0.0,
    "motor_velocity_noise": 0.0,
    "accelerometer_noise": 0.0,
    "gyro_angle_noise": 0.0,
    "gyro_velocity_noise": 0.0,
    "delay": 0.0,
}


@dataclass(frozen=True)
class RandomizationRanges:
    link_mass: tuple = (0.75, 1.15)
    link_com: tuple = (0.75, 1.15)
    joint_damping: tuple = (0.75, 1.15)
    friction: tuple = (0.5, 3.0)
    motor_angle_noise: tuple = (-0.1, 0.1)
    motor_velocity_noise: tuple = (-0.1, 0.1)
    accelerometer_noise: tuple = (-0.4, 0.4)
    gyro_angle_noise: tuple = (-0.1, 0.1)
    gyro_velocity_noise: tuple = (-0.1, 0.1)
    delay: tuple = (0.0, 0.03)

    def __post_init__(self):
        for f in fields(self):
            lo, hi = (float(v) for v in getattr(self, f.name))
            if lo > hi:
                raise ValueError(f"{f.name}: lower bound {lo} exceeds upper bound {hi}")
            object.__setattr__(self, f.name, (lo, hi))

    def contains(self, other: RandomizationRanges, tol: float = 0.0) -> bool:
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            olo, ohi = getattr(other, f.name)
            if olo < lo - tol or ohi > hi + tol:
                return False
        return True


@dataclass(frozen=True)
class Curriculum:
    anneal_iters: int = 2000
    enabled: bool = True

    def __post_init__(self):
        if self.anneal_iters < 1:
            raise ValueError("anneal_iters must be at least 1")


def curriculum_level(iteration: int, curriculum: Curriculum = Curriculum()) -> float:
    if iteration < 0:
        raise ValueError("iteration must be nonnegative")
    if not curriculum.enabled:
        return 1.0
    return min(1.0, iteration / curriculum.anneal_iters)


def effective_ranges(ranges: RandomizationRanges, level: float) -> RandomizationRanges:
    if not 0.0 <= level <= 1.0:
        raise ValueError("curriculum level must lie in [0, 1]")
    out = {}
    for f in fields(ranges):
        lo, hi = getattr(ranges, f.name)
        d = NOMINAL[f.name]
        out[f.name] = (d + level * (lo - d), d + level * (hi - d))
    return RandomizationRanges(**out)


@dataclass
class DynamicsParams:
    mass_scale: np.ndarray      # per link (5)
    com_scale: np.ndarray       # per link (5)
    damping_scale: np.ndarray   # per joint (4)
    friction: float
    noise: np.ndarray           # half-widths, ordered as NOISE_CHANNELS
    delay: float

    def flat(self) -> np.ndarray:
        return np.concatenate([self.mass_scale, self.com_scale, self.damping_scale,
                               [self.friction], self.noise, [self.delay]])

    @classmethod
    def nominal(cls) -> DynamicsParams:
        return cls(np.ones(5), np.ones(5), np.ones(4), 1.0, np.zeros(5), 0.0)


MU_DIM = 21


def sample_dynamics(rng: np.random.Generator, ranges: RandomizationRanges) -> DynamicsParams:
    """Independent uniform draws; noise rows set the per-tick noise support."""
    def draw(name, n=None):
        lo, hi = getattr(ranges, name)
        return rng.uniform(lo, hi, size=n)

    mass = draw("link_mass", 5)
    com = draw("link_com", 5)
    damping = draw("joint_damping", 4)
    friction = float(draw("friction"))
    delay = float(draw("delay"))
    noise = np.array([max(abs(v) for v in getattr(ranges, name)) for name in NOISE_CHANNELS])
    return DynamicsParams(mass, com, damping, friction, noise, delay)


def apply_dynamics(model: RobotModel, mu: DynamicsParams) -> RobotModel:
    """Scale masses (with inertias), COM offsets and damping. Friction and delay live in the sim."""
    mass = np.asarray(model.link_masses) * mu.mass_scale
    inertia = np.asarray(model.link_inertias) * mu.mass_scale
    com = np.asarray(model.link_com_offsets) * mu.com_scale
    damping = np.asarray(model.joint_damping) * mu.damping_scale
    return replace(model, link_masses=tuple(mass), link_inertias=tuple(inertia),
                   link_com_offsets=tuple(com), joint_damping=tuple(damping))


def observation_noise(rng: np.random.Generator, noise: np.ndarray) -> np.ndarray:
    """Additive noise for a 12-value observation [pitch, 4 joints, xd, zd, pitch rate, 4 joint rates]."""
    motor_angle, motor_vel, _accel, gyro_angle, gyro_vel = noise
    amp = np.array([gyro_angle] + [motor_angle] * 4 + [0.0, 0.0, gyro_vel] + [motor_vel] * 4)
    return rng.uniform(-1.0, 1.0, size=12) * amp


def corrupt_observation(rng: np.random.Generator, obs: ObservableState,
                        mu: DynamicsParams) -> ObservableState:
    """Noisy copy for the policy; the simulator state is never touched."""
    v = obs.vector() + observation_noise(rng, mu.noise)
    return ObservableState(v[:5], v[5:])
