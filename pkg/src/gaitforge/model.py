"""Planar five-link biped: torso, two thighs, two shanks, point feet."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import _kernels as K

LINK_NAMES = ("torso", "thigh_L", "shank_L", "thigh_R", "shank_R")
JOINT_NAMES = ("hip_L", "knee_L", "hip_R", "knee_R")
COORD_NAMES = ("x", "z", "pitch") + JOINT_NAMES


@dataclass(frozen=True)
class RobotModel:
    link_masses: tuple
    link_lengths: tuple
    link_com_offsets: tuple
    link_inertias: tuple
    joint_damping: tuple
    motor_torque_limits: tuple
    gravity: float = 9.81

    def __post_init__(self):
        sizes = {"link_masses": 5, "link_lengths": 5, "link_com_offsets": 5,
                 "link_inertias": 5, "joint_damping": 4, "motor_torque_limits": 4}
        for name, n in sizes.items():
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != n:
                raise ValueError(f"{name} needs {n} entries, got {len(value)}")
            object.__setattr__(self, name, value)
        for name in ("link_masses", "link_lengths", "link_inertias", "motor_torque_limits"):
            if min(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if min(self.joint_damping) < 0:
            raise ValueError("joint_damping must be nonnegative")
        object.__setattr__(self, "gravity", float(self.gravity))

    @property
    def total_mass(self) -> float:
        return float(sum(self.link_masses))

    @property
    def leg_length(self) -> float:
        return self.link_lengths[1] + self.link_lengths[2]

    def packed(self) -> np.ndarray:
        P = np.empty(K.NPARAM)
        P[K.MASS:K.MASS + 5] = self.link_masses
        P[K.LENGTH:K.LENGTH + 5] = self.link_lengths
        P[K.COM:K.COM + 5] = self.link_com_offsets
        P[K.INERTIA:K.INERTIA + 5] = self.link_inertias
        P[K.DAMPING:K.DAMPING + 4] = self.joint_damping
        P[K.TORQUE_LIMIT:K.TORQUE_LIMIT + 4] = self.motor_torque_limits
        P[K.GRAVITY] = self.gravity
        return P

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> RobotModel:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        return cls(**data)


def default_model() -> RobotModel:
    """Nominal model: 10 kg torso, 2 kg thighs, 1 kg shanks, 0.5 m leg links, uniform rods."""
    masses = (10.0, 2.0, 1.0, 2.0, 1.0)
    lengths = (0.6, 0.5, 0.5, 0.5, 0.5)
    return RobotModel(
        link_masses=masses,
        link_lengths=lengths,
        link_com_offsets=tuple(0.5 * l for l in lengths),
        link_inertias=tuple(m * l * l / 12.0 for m, l in zip(masses, lengths)),
        joint_damping=(0.5, 0.5, 0.5, 0.5),
        motor_torque_limits=(100.0, 100.0, 100.0, 100.0),
        gravity=9.81,
    )


def load_model(path) -> RobotModel:
    return RobotModel.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RobotState:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float).reshape(K.NQ)
        self.qdot = np.array(self.qdot, dtype=float).reshape(K.NQ)
        if not (np.isfinite(self.q).all() and np.isfinite(self.qdot).all()):
            raise ValueError("robot state must be finite")

    def copy(self) -> RobotState:
        return RobotState(self.q.copy(), self.qdot.copy())

    def knees_within(self, knee_range, tol: float = 0.0) -> bool:
        lo, hi = knee_range
        knees = self.q[[4, 6]]
        return bool(np.all(knees >= lo - tol) and np.all(knees <= hi + tol))


@dataclass
class ObservableState:
    q_o: np.ndarray     # pitch + 4 joints
    qdot_o: np.ndarray  # all 7 velocities

    def vector(self) -> np.ndarray:
        return np.concatenate([self.q_o, self.qdot_o])


def observe(state: RobotState) -> ObservableState:
    """Drop the pelvis translation, which a real robot cannot measure."""
    return ObservableState(state.q[2:].copy(), state.qdot.copy())


def forward_kinematics(model: RobotModel, q) -> dict:
    """World-frame pelvis, knee and foot positions plus pelvis pitch."""
    q = np.asarray(q, dtype=float)
    P = model.packed()
    phi = np.empty(5)
    K.link_angles(q, phi)
    coef = np.empty(5)
    out = {"pelvis": q[:2].copy(), "pitch": float(q[2])}
    for side, left in (("L", True), ("R", False)):
        pos = np.empty(2)
        K.knee_coefficients(P, left, coef)
        K.point_position(q, coef, phi, pos)
        out[f"knee_{side}"] = pos
        pos = np.empty(2)
        K.foot_coefficients(P, left, coef)
        K.point_position(q, coef, phi, pos)
        out[f"foot_{side}"] = pos
    return out


def foot_jacobian(model: RobotModel, q, left: bool) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    P = model.packed()
    phi = np.empty(5)
    K.link_angles(q, phi)
    coef = np.empty(5)
    K.foot_coefficients(P, left, coef)
    J = np.empty((2, K.NQ))
    K.point_jacobian(coef, phi, J)
    return J


def com_positions(model: RobotModel, q) -> np.ndarray:
    """(5, 2) array of link COM positions."""
    q = np.asarray(q, dtype=float)
    P = model.packed()
    phi = np.empty(5)
    K.link_angles(q, phi)
    A = np.empty((5, 5))
    K.com_coefficients(P, A)
    out = np.empty((5, 2))
    for i in range(5):
        K.point_position(q, A[i], phi, out[i])
    return out


def dynamics_terms(model: RobotModel, state: RobotState):
    """Mass matrix M (7x7), bias h (Coriolis + gravity + damping), actuation map B (7x4)."""
    M = np.empty((K.NQ, K.NQ))
    h = np.empty(K.NQ)
    K.dynamics(model.packed(), state.q, state.qdot, M, h)
    return M, h, actuation_map()


def actuation_map() -> np.ndarray:
    B = np.zeros((K.NQ, K.NU))
    B[3:, :] = np.eye(K.NU)
    return B


def kinetic_energy(model: RobotModel, state: RobotState) -> float:
    M, _, _ = dynamics_terms(model, state)
    return 0.5 * float(state.qdot @ M @ state.qdot)


def potential_energy(model: RobotModel, q) -> float:
    z = com_positions(model, q)[:, 1]
    return float(model.gravity * np.dot(model.link_masses, z))


def standing_configuration(model: RobotModel, height: float, foot_x: float = 0.0,
                           foot_z: float = 0.0) -> np.ndarray:
    """Upright pose with both feet at (pelvis_x + foot_x, foot_z) and the pelvis at ``height``."""
    from .gaitlib import leg_ik

    hip, knee = leg_ik(model, foot_x, foot_z - height)
    return np.array([0.0, height, 0.0, hip, knee, hip, knee])
