from dataclasses import fields

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaitforge.model import ObservableState, RobotState, default_model, observe
from gaitforge.randomization import (MU_DIM, Curriculum, DynamicsParams, RandomizationRanges,
                                     apply_dynamics, corrupt_observation, curriculum_level,
                                     effective_ranges, observation_noise, sample_dynamics)

# Dynamics table rows, transcribed independently of the package defaults
TABLE = {
    "link_mass": (0.75, 1.15),
    "link_com": (0.75, 1.15),
    "joint_damping": (0.75, 1.15),
    "friction": (0.5, 3.0),
    "motor_angle_noise": (-0.1, 0.1),
    "motor_velocity_noise": (-0.1, 0.1),
    "accelerometer_noise": (-0.4, 0.4),
    "gyro_angle_noise": (-0.1, 0.1),
    "gyro_velocity_noise": (-0.1, 0.1),
    "delay": (0.0, 0.03),
}


def test_default_ranges_match_table():
    r = RandomizationRanges()
    assert {f.name: getattr(r, f.name) for f in fields(r)} == TABLE


def test_inverted_range_rejected():
    with pytest.raises(ValueError):
        RandomizationRanges(friction=(3.0, 0.5))


def test_curriculum_level_schedule():
    c = Curriculum()
    assert c.anneal_iters == 2000
    assert curriculum_level(0, c) == 0.0
    assert curriculum_level(1000, c) == 0.5
    assert curriculum_level(2000, c) == 1.0
    assert curriculum_level(10_000, c) == 1.0
    assert curriculum_level(0, Curriculum(enabled=False)) == 1.0
    with pytest.raises(ValueError):
        curriculum_level(-1)
    with pytest.raises(ValueError):
        Curriculum(anneal_iters=0)


def test_effective_ranges_examples():
    r = RandomizationRanges()
    zero = effective_ranges(r, 0.0)
    for f in fields(zero):
        lo, hi = getattr(zero, f.name)
        assert lo == hi
    assert zero.link_mass == (1.0, 1.0) and zero.friction == (1.0, 1.0) and zero.delay == (0.0, 0.0)
    assert effective_ranges(r, 1.0).friction == (0.5, 3.0)
    half = effective_ranges(r, 0.5).link_mass
    assert half == pytest.approx((0.875, 1.075), abs=1e-15)
    with pytest.raises(ValueError):
        effective_ranges(r, 1.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_effective_ranges_are_nested(a, b):
    lo, hi = sorted((a, b))
    r = RandomizationRanges()
    assert effective_ranges(r, hi).contains(effective_ranges(r, lo), tol=1e-15)


def test_zero_level_sample_is_nominal():
    mu = sample_dynamics(np.random.default_rng(0), effective_ranges(RandomizationRanges(), 0.0))
    nominal = DynamicsParams.nominal()
    assert np.array_equal(mu.flat(), nominal.flat())
    assert mu.flat().size == MU_DIM


def test_friction_samples_cover_range():
    rng = np.random.default_rng(1)
    r = effective_ranges(RandomizationRanges(), 1.0)
    f = np.array([sample_dynamics(rng, r).friction for _ in range(100_000)])
    assert abs(f.min() - 0.5) <= 0.02 * 0.5 and abs(f.max() - 3.0) <= 0.02 * 3.0
    assert f.min() >= 0.5 and f.max() <= 3.0


def test_samples_stay_in_range_and_are_seeded():
    r = effective_ranges(RandomizationRanges(), 0.6)
    a = sample_dynamics(np.random.default_rng(9), r)
    b = sample_dynamics(np.random.default_rng(9), r)
    assert np.array_equal(a.flat(), b.flat())
    rng = np.random.default_rng(2)
    for _ in range(500):
        mu = sample_dynamics(rng, r)
        assert np.all((mu.mass_scale >= r.link_mass[0]) & (mu.mass_scale <= r.link_mass[1]))
        assert r.delay[0] <= mu.delay <= r.delay[1]
        assert r.friction[0] <= mu.friction <= r.friction[1]
    # per-link multipliers are independent draws
    assert np.unique(mu.mass_scale).size == 5


def test_apply_dynamics_identity_and_scaling():
    m = default_model()
    assert apply_dynamics(m, DynamicsParams.nominal()) == m
    mu = DynamicsParams.nominal()
    mu.mass_scale = np.array([1.15, 1, 1, 1, 1])
    out = apply_dynamics(m, mu)
    assert out.link_masses[0] == pytest.approx(1.15 * m.link_masses[0])
    assert out.link_inertias[0] == pytest.approx(1.15 * m.link_inertias[0])
    assert out.link_masses[1:] == m.link_masses[1:]


def test_extreme_draws_give_valid_models():
    rng = np.random.default_rng(3)
    r = RandomizationRanges()
    for _ in range(200):
        out = apply_dynamics(default_model(), sample_dynamics(rng, r))
        assert min(out.link_masses) > 0 and min(out.link_inertias) > 0


def test_noise_bounds_and_channels():
    rng = np.random.default_rng(4)
    amp = np.array([0.1, 0.1, 0.4, 0.1, 0.1])
    draws = np.array([observation_noise(rng, amp) for _ in range(100_000)])
    assert np.max(np.abs(draws)) <= 0.1
    assert np.max(np.abs(draws)) > 0.099
    # planar pelvis translation rates carry no noise channel
    assert not draws[:, 5:7].any()


def test_zero_noise_is_identity_and_state_untouched():
    s = RobotState(np.array([0.0, 0.9, 0.1, 0.2, -0.3, 0.1, -0.4]), np.arange(7.0))
    obs = observe(s)
    q_before = s.q.copy()
    same = corrupt_observation(np.random.default_rng(0), obs, DynamicsParams.nominal())
    assert np.array_equal(same.vector(), obs.vector())
    mu = DynamicsParams.nominal()
    mu.noise = np.full(5, 0.1)
    noisy = corrupt_observation(np.random.default_rng(0), obs, mu)
    assert isinstance(noisy, ObservableState)
    assert not np.array_equal(noisy.vector(), obs.vector())
    assert np.array_equal(s.q, q_before)
