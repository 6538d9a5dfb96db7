"""Parameterized gait library: 5th-order Bezier joint profiles indexed by (vx, hz).

A gait holds two steps (right stance, then left stance); each step is one
Bezier curve per actuated joint over a normalized phase s in [0, 1]. Gaits
are synthesized from a planned foot path with two-link leg inverse
kinematics and stored on a (vx, hz) grid queried by bilinear interpolation.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from math import comb
from pathlib import Path

import numpy as np

from .model import JOINT_NAMES, RobotModel

FORMAT_TAG = "gaitforge-library/1"
DEGREE = 5
BINOM = np.array([comb(DEGREE, k) for k in range(DEGREE + 1)], dtype=float)
BINOM_D = np.array([comb(DEGREE - 1, k) for k in range(DEGREE)], dtype=float)

# left-stance step = right-stance step with the legs swapped
MIRROR = np.array([2, 3, 0, 1])


class PhaseOutOfRange(ValueError):
    pass


class Unreachable(ValueError):
    pass


def bernstein(s, degree: int = DEGREE) -> np.ndarray:
    """Bernstein basis values, shape s.shape + (degree + 1,)."""
    s = np.asarray(s, dtype=float)[..., None]
    k = np.arange(degree + 1)
    binom = BINOM if degree == DEGREE else BINOM_D
    return binom * s**k * (1.0 - s) ** (degree - k)


def bezier_eval(coeffs, s):
    """Value and d/ds of a degree-5 Bezier curve with control values ``coeffs[..., 6]``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0.0) or np.any(s_arr > 1.0) or not np.all(np.isfinite(s_arr)):
        raise PhaseOutOfRange(f"phase {s} outside [0, 1]")
    coeffs = np.asarray(coeffs, dtype=float)
    value = np.sum(bernstein(s_arr) * coeffs, axis=-1)
    diffs = DEGREE * np.diff(coeffs, axis=-1)
    deriv = np.sum(bernstein(s_arr, DEGREE - 1) * diffs, axis=-1)
    return value, deriv


def leg_ik(model: RobotModel, dx, dz, left: bool = True):
    """Hip and knee angles placing the foot at (dx, dz) from the hip, pelvis upright.

    Uses the knee-forward branch (knee <= 0).
    """
    l1 = model.link_lengths[1 if left else 3]
    l2 = model.link_lengths[2 if left else 4]
    dx = np.asarray(dx, dtype=float)
    dz = np.asarray(dz, dtype=float)
    r2 = dx * dx + dz * dz
    cos_knee = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if np.any(cos_knee > 1.0) or np.any(cos_knee < -1.0):
        raise Unreachable(f"foot target out of reach (|r| max {np.sqrt(r2.max()):.3f} m)")
    knee = -np.arccos(cos_knee)
    gamma = np.arctan2(dx, -dz)
    hip = gamma - np.arctan2(l2 * np.sin(knee), l1 + l2 * np.cos(knee))
    return hip, knee


@dataclass(frozen=True)
class GaitParams:
    vx: float
    hz: float

    def __post_init__(self):
        if not self.hz > 0:
            raise ValueError("walking height must be positive")


@dataclass(frozen=True)
class GaitConfig:
    swing_height: float = 0.08
    step_period: float = 0.4
    fit_samples: int = 50
    lift_ramp_velocity: float = 0.2


@dataclass
class Gait:
    coeffs: np.ndarray  # (joint, step, control value) = (4, 2, 6)
    step_period: float
    params: GaitParams | None = None
    fit_residual: float = 0.0


def foot_paths(p: GaitParams, cfg: GaitConfig, s):
    """Right-stance step: stance and swing foot positions relative to the pelvis.

    Returns (stance_x, stance_z, swing_x, swing_z) sampled at phases s, with z
    measured from the pelvis (negative is below).
    """
    stride = p.vx * cfg.step_period
    lift = cfg.swing_height * min(1.0, abs(p.vx) / cfg.lift_ramp_velocity)
    stance_x = (0.5 - s) * stride
    stance_z = np.full_like(s, -p.hz)
    swing_x = -0.5 * stride + stride * 0.5 * (1.0 - np.cos(np.pi * s))
    swing_z = -p.hz + lift * np.sin(np.pi * s) ** 2
    return stance_x, stance_z, swing_x, swing_z


def fit_bezier(s, y):
    """Least-squares degree-5 fit with both endpoints pinned to y[0], y[-1]."""
    B = bernstein(s)
    a0, a5 = y[0], y[-1]
    rhs = y - B[:, 0] * a0 - B[:, 5] * a5
    inner, *_ = np.linalg.lstsq(B[:, 1:5], rhs, rcond=None)
    coeffs = np.concatenate([[a0], inner, [a5]])
    residual = float(np.max(np.abs(B @ coeffs - y)))
    return coeffs, residual


def synthesize_gait(model: RobotModel, p: GaitParams, cfg: GaitConfig = GaitConfig()) -> Gait:
    s = np.linspace(0.0, 1.0, cfg.fit_samples)
    stance_x, stance_z, swing_x, swing_z = foot_paths(p, cfg, s)
    hip_r, knee_r = leg_ik(model, stance_x, stance_z, left=False)
    hip_l, knee_l = leg_ik(model, swing_x, swing_z, left=True)
    coeffs = np.empty((4, 2, DEGREE + 1))
    worst = 0.0
    for j, y in enumerate((hip_l, knee_l, hip_r, knee_r)):
        coeffs[j, 0], res = fit_bezier(s, y)
        worst = max(worst, res)
    coeffs[:, 1] = coeffs[MIRROR, 0]
    return Gait(coeffs, cfg.step_period, p, worst)


def reference_frame(g: Gait, phase):
    """Reference motor positions and velocities at global phase in [0, 2)."""
    q, qd = reference_frames(g.coeffs, np.asarray(phase, dtype=float), g.step_period)
    return q, qd


def reference_frames(coeffs, phase, step_period):
    """Vectorized reference lookup.

    coeffs has shape (*B, 4, 2, 6) and phase (*B, m); a scalar phase with a
    single gait also works. Returns positions and velocities of shape
    phase.shape + (4,).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    phase = np.mod(np.asarray(phase, dtype=float), 2.0)
    step = np.minimum(np.floor(phase), 1.0)
    s = np.clip(phase - step, 0.0, 1.0)[..., None]
    if phase.ndim == 0:
        right = bezier_eval(coeffs[..., 0, :], s)
        left = bezier_eval(coeffs[..., 1, :], s)
    else:
        right = bezier_eval(coeffs[..., None, :, 0, :], s)
        left = bezier_eval(coeffs[..., None, :, 1, :], s)
    on_left = (step == 1.0)[..., None]
    value = np.where(on_left, left[0], right[0])
    deriv = np.where(on_left, left[1], right[1])
    return value, deriv / step_period


@dataclass
class GaitLibrary:
    vx_axis: np.ndarray
    hz_axis: np.ndarray
    coeffs: np.ndarray  # (n_vx, n_hz, 4, 2, 6)
    step_period: float
    fit_residuals: np.ndarray | None = None

    def __post_init__(self):
        self.vx_axis = np.asarray(self.vx_axis, dtype=float)
        self.hz_axis = np.asarray(self.hz_axis, dtype=float)
        for axis in (self.vx_axis, self.hz_axis):
            if axis.size == 0 or np.any(np.diff(axis) <= 0):
                raise ValueError("grid axes must be nonempty and strictly increasing")
        expected = (self.vx_axis.size, self.hz_axis.size, 4, 2, DEGREE + 1)
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient array {self.coeffs.shape} != {expected}")

    def __len__(self):
        return self.vx_axis.size * self.hz_axis.size

    def gait(self, i: int, j: int) -> Gait:
        return Gait(self.coeffs[i, j].copy(), self.step_period,
                    GaitParams(self.vx_axis[i], self.hz_axis[j]))

    def clamp(self, vx, hz):
        return (np.clip(vx, self.vx_axis[0], self.vx_axis[-1]),
                np.clip(hz, self.hz_axis[0], self.hz_axis[-1]))

    def query_coeffs(self, vx, hz) -> np.ndarray:
        """Bilinear interpolation of coefficients; works on arrays of commands."""
        vx, hz = self.clamp(np.asarray(vx, float), np.asarray(hz, float))
        i0, wx = _cell(self.vx_axis, vx)
        j0, wz = _cell(self.hz_axis, hz)
        i1 = np.minimum(i0 + 1, self.vx_axis.size - 1)
        j1 = np.minimum(j0 + 1, self.hz_axis.size - 1)
        wx = wx[..., None, None, None]
        wz = wz[..., None, None, None]
        c = self.coeffs
        return ((1 - wx) * (1 - wz) * c[i0, j0] + wx * (1 - wz) * c[i1, j0]
                + (1 - wx) * wz * c[i0, j1] + wx * wz * c[i1, j1])

    def single(self, p: GaitParams) -> GaitLibrary:
        """One-gait library holding the nearest grid gait."""
        i = int(np.argmin(np.abs(self.vx_axis - p.vx)))
        j = int(np.argmin(np.abs(self.hz_axis - p.hz)))
        return GaitLibrary(self.vx_axis[i:i + 1], self.hz_axis[j:j + 1],
                           self.coeffs[i:i + 1, j:j + 1].copy(), self.step_period)


def _cell(axis, x):
    """Lower grid index and fractional weight; exact nodes get weight 0."""
    x = np.asarray(x, dtype=float)
    if axis.size == 1:
        return np.zeros(x.shape, dtype=int), np.zeros(x.shape)
    i = np.clip(np.searchsorted(axis, x, side="right") - 1, 0, axis.size - 2)
    w = (x - axis[i]) / (axis[i + 1] - axis[i])
    return i, w


def query(lib: GaitLibrary, p: GaitParams) -> Gait:
    return Gait(lib.query_coeffs(p.vx, p.hz), lib.step_period, p)


def build_library(model: RobotModel, vx_axis, hz_axis, cfg: GaitConfig = GaitConfig()) -> GaitLibrary:
    vx_axis = np.asarray(vx_axis, dtype=float)
    hz_axis = np.asarray(hz_axis, dtype=float)
    for axis in (vx_axis, hz_axis):
        if axis.size == 0 or np.any(np.diff(axis) <= 0):
            raise ValueError("grid axes must be nonempty and strictly increasing")
    coeffs = np.empty((vx_axis.size, hz_axis.size, 4, 2, DEGREE + 1))
    residuals = np.empty((vx_axis.size, hz_axis.size))
    for i, vx in enumerate(vx_axis):
        for j, hz in enumerate(hz_axis):
            p = GaitParams(float(vx), float(hz))
            try:
                g = synthesize_gait(model, p, cfg)
            except Unreachable as exc:
                raise Unreachable(f"cell vx={vx:g}, hz={hz:g}: {exc}") from None
            coeffs[i, j] = g.coeffs
            residuals[i, j] = g.fit_residual
    return GaitLibrary(vx_axis, hz_axis, coeffs, cfg.step_period, residuals)


def default_axes():
    """Eleven velocities in [-1, 1] and eleven heights in [0.70, 0.95] m."""
    return np.linspace(-1.0, 1.0, 11), np.linspace(0.70, 0.95, 11)


def save_library(lib: GaitLibrary, path) -> None:
    payload = np.ascontiguousarray(lib.coeffs, dtype="<f8")
    doc = {
        "format": FORMAT_TAG,
        "joint_order": list(JOINT_NAMES),
        "step_order": ["right_stance", "left_stance"],
        "step_period": lib.step_period,
        "vx_axis": lib.vx_axis.tolist(),
        "hz_axis": lib.hz_axis.tolist(),
        "shape": list(payload.shape),
        "coeffs_b64": base64.b64encode(payload.tobytes()).decode("ascii"),
    }
    if lib.fit_residuals is not None:
        doc["fit_residuals"] = lib.fit_residuals.tolist()
    Path(path).write_text(json.dumps(doc, indent=1))


def load_library(path) -> GaitLibrary:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT_TAG:
        raise ValueError(f"unsupported library format {doc.get('format')!r}")
    if doc["joint_order"] != list(JOINT_NAMES):
        raise ValueError("joint order mismatch")
    raw = base64.b64decode(doc["coeffs_b64"])
    coeffs = np.frombuffer(raw, dtype="<f8").reshape(doc["shape"]).astype(float)
    res = doc.get("fit_residuals")
    return GaitLibrary(np.array(doc["vx_axis"]), np.array(doc["hz_axis"]), coeffs,
                       float(doc["step_period"]), None if res is None else np.array(res))
