import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaitforge.gaitlib import (MIRROR, GaitConfig, GaitParams, PhaseOutOfRange, Unreachable,
                               bernstein, bezier_eval, build_library, default_axes, foot_paths,
                               load_library, query, reference_frame, save_library, synthesize_gait)
from gaitforge.model import default_model, forward_kinematics


def de_casteljau(ctrl, s):
    pts = list(ctrl)
    while len(pts) > 1:
        pts = [(1 - s) * a + s * b for a, b in zip(pts[:-1], pts[1:])]
    return pts[0]


@pytest.fixture(scope="module")
def lib():
    return build_library(default_model(), *default_axes())


def test_bezier_matches_de_casteljau():
    rng = np.random.default_rng(0)
    coeffs = rng.normal(size=(10_000, 6))
    s = rng.uniform(0, 1, 10_000)
    value, deriv = bezier_eval(coeffs, s)
    ref = np.array([de_casteljau(c, x) for c, x in zip(coeffs, s)])
    assert np.max(np.abs(value - ref)) <= 1e-12
    # derivative of the degree-5 curve is a degree-4 curve on the scaled differences
    dref = np.array([de_casteljau(5 * np.diff(c), x) for c, x in zip(coeffs[:200], s[:200])])
    assert np.max(np.abs(deriv[:200] - dref)) <= 1e-12


def test_bezier_endpoints_and_constant_curve():
    c = np.array([0.3, -1.0, 2.0, 0.5, 0.1, 1.7])
    assert bezier_eval(c, 0.0)[0] == c[0]
    assert bezier_eval(c, 1.0)[0] == c[5]
    value, deriv = bezier_eval(np.full(6, 0.42), np.linspace(0, 1, 17))
    assert np.allclose(value, 0.42, rtol=0, atol=1e-15) and np.all(np.abs(deriv) < 1e-14)


def test_bernstein_partition_of_unity():
    s = np.linspace(0, 1, 1001)
    assert np.max(np.abs(bernstein(s).sum(axis=-1) - 1.0)) <= 1e-15


@pytest.mark.parametrize("s", [-1e-9, 1.0 + 1e-9, 2.0])
def test_phase_out_of_range(s):
    with pytest.raises(PhaseOutOfRange):
        bezier_eval(np.zeros(6), s)


def test_standing_gait_is_constant():
    g = synthesize_gait(default_model(), GaitParams(0.0, 0.9))
    for joint in range(4):
        assert np.ptp(g.coeffs[joint]) <= 1e-12
    pos, vel = reference_frame(g, 0.37)
    assert not np.any(np.abs(vel) > 1e-12)


def test_gait_invariants(lib):
    for i in range(lib.vx_axis.size):
        for j in range(lib.hz_axis.size):
            c = lib.coeffs[i, j]
            # right stance ends where left stance starts, and vice versa
            assert np.max(np.abs(c[:, 0, -1] - c[:, 1, 0])) <= 1e-9
            assert np.max(np.abs(c[:, 1, -1] - c[:, 0, 0])) <= 1e-9
            assert np.max(np.abs(c[:, 1, :] - c[MIRROR, 0, :])) <= 1e-9


@pytest.mark.parametrize("vx,hz", [(0.5, 0.85), (-1.0, 0.7), (1.0, 0.95), (0.2, 0.8)])
def test_fitted_gait_reproduces_foot_path(vx, hz):
    m = default_model()
    p = GaitParams(vx, hz)
    g = synthesize_gait(m, p)
    s = np.linspace(0, 1, 50)
    sx, sz, wx, wz = foot_paths(p, GaitConfig(), s)
    # paths are relative to the pelvis, which sits at (0, hz)
    stance = np.array([sx, hz + sz])
    swing = np.array([wx, hz + wz])
    for k, sk in enumerate(s):
        pos, _ = reference_frame(g, min(sk, 1 - 1e-12))
        fk = forward_kinematics(m, [0.0, hz, 0.0, *pos])
        # right stance step: right foot is the stance foot
        assert np.hypot(*(fk["foot_R"] - stance[:, k])) <= 0.02
        assert np.hypot(*(fk["foot_L"] - swing[:, k])) <= 0.02


def test_pelvis_advance_over_one_step():
    m = default_model()
    g = synthesize_gait(m, GaitParams(0.5, 0.85))
    start = forward_kinematics(m, [0, 0.85, 0, *reference_frame(g, 0.0)[0]])["foot_R"][0]
    end = forward_kinematics(m, [0, 0.85, 0, *reference_frame(g, 1 - 1e-12)[0]])["foot_R"][0]
    # the stance foot is fixed in the world, so the pelvis moves by start - end
    assert abs((start - end) - 0.5 * g.step_period) <= 0.02


def test_unreachable_height():
    with pytest.raises(Unreachable):
        synthesize_gait(default_model(), GaitParams(0.5, 1.2))


def test_library_size_and_shared_period(lib):
    assert len(lib) == 121
    assert lib.coeffs.shape == (11, 11, 4, 2, 6)
    assert lib.step_period == 0.4


def test_degenerate_library_returns_its_gait():
    one = build_library(default_model(), [0.3], [0.85])
    assert len(one) == 1
    for vx, hz in ((0.3, 0.85), (-2, 0.7), (2, 0.95)):
        assert np.array_equal(query(one, GaitParams(vx, hz)).coeffs, one.coeffs[0, 0])


def test_query_exact_at_nodes(lib):
    for i, j in ((0, 0), (3, 7), (10, 10), (5, 0)):
        g = query(lib, GaitParams(lib.vx_axis[i], lib.hz_axis[j]))
        assert np.array_equal(g.coeffs, lib.coeffs[i, j])


def test_query_midpoint_is_corner_mean(lib):
    for i, j in ((0, 0), (4, 6), (9, 9)):
        vx = 0.5 * (lib.vx_axis[i] + lib.vx_axis[i + 1])
        hz = 0.5 * (lib.hz_axis[j] + lib.hz_axis[j + 1])
        corners = lib.coeffs[i:i + 2, j:j + 2].reshape(4, 4, 2, 6).mean(axis=0)
        assert np.max(np.abs(query(lib, GaitParams(vx, hz)).coeffs - corners)) <= 1e-12


def test_query_clamps_outside_hull(lib):
    hz = 0.8
    assert np.array_equal(query(lib, GaitParams(5.0, hz)).coeffs, query(lib, GaitParams(1.0, hz)).coeffs)
    assert np.array_equal(query(lib, GaitParams(-5.0, hz)).coeffs, query(lib, GaitParams(-1.0, hz)).coeffs)
    assert np.array_equal(query(lib, GaitParams(0.3, 3.0)).coeffs, query(lib, GaitParams(0.3, 0.95)).coeffs)
    assert np.array_equal(query(lib, GaitParams(0.3, 0.1)).coeffs, query(lib, GaitParams(0.3, 0.70)).coeffs)


@settings(max_examples=60, deadline=None)
@given(st.floats(-1.2, 1.2), st.floats(0.68, 0.97))
def test_query_is_continuous(vx, hz):
    lib = _shared()
    a = query(lib, GaitParams(vx, hz)).coeffs
    b = query(lib, GaitParams(vx + 1e-7, hz + 1e-7)).coeffs
    assert np.max(np.abs(a - b)) < 1e-4


_LIB = []


def _shared():
    if not _LIB:
        _LIB.append(build_library(default_model(), *default_axes()))
    return _LIB[0]


def test_reference_periodicity_and_continuity(lib):
    g = lib.gait(8, 5)
    p0, v0 = reference_frame(g, 0.0)
    p2, v2 = reference_frame(g, 2.0)
    assert np.array_equal(p0, p2) and np.array_equal(v0, v2)
    for eps in (1e-6, 1e-9):
        a, _ = reference_frame(g, 1 - eps)
        b, _ = reference_frame(g, 1 + eps)
        assert np.max(np.abs(a - b)) <= 1e-6 + 10 * eps


def test_reference_velocity_uses_step_period(lib):
    g = lib.gait(9, 4)
    h = 1e-6
    (pa, _), (pb, _), (_, v) = (reference_frame(g, 0.4 - h), reference_frame(g, 0.4 + h),
                                reference_frame(g, 0.4))
    assert np.allclose((pb - pa) / (2 * h) / g.step_period, v, atol=1e-5)


def test_library_roundtrip_is_bitwise(lib, tmp_path):
    path = tmp_path / "lib.json"
    save_library(lib, path)
    back = load_library(path)
    assert back.coeffs.tobytes() == lib.coeffs.tobytes()
    assert np.array_equal(back.vx_axis, lib.vx_axis) and np.array_equal(back.hz_axis, lib.hz_axis)
    assert back.step_period == lib.step_period
    save_library(back, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_library_axes_must_increase():
    with pytest.raises(ValueError):
        build_library(default_model(), [0.2, 0.1], [0.8])
