import math

import numpy as np
import pytest

from gaitforge.env import POLICY_DIM, BipedEnv
from gaitforge.gaitlib import build_library
from gaitforge.learner import (MOTOR_HI, MOTOR_LO, REF_SLICE, Adam, DimensionMismatch, MlpNet,
                               Policy, PpoConfig, forward, gae, gaussian_log_prob, load_checkpoint,
                               make_policy, make_value, normalize_advantages, ppo_update,
                               sample_action, save_checkpoint, surrogate_grad, train,
                               write_curve_csv)
from gaitforge.model import default_model
from gaitforge.randomization import Curriculum


def numeric_grads(net, x, dy, h=1e-5):
    out = []
    for p in net.params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = np.sum(dy * net.forward(x))
            p[idx] = old - h
            down = np.sum(dy * net.forward(x))
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    widths = tuple(rng.integers(2, 6, size=4))
    net = MlpNet(widths, squash=bool(seed % 2), rng=rng)
    for p in net.params[1::2]:
        p[...] = rng.normal(0, 0.5, p.shape)
    x = rng.normal(size=(3, widths[0]))
    dy = rng.normal(size=(3, widths[-1]))
    _, cache = net.forward(x, cache=True)
    analytic = net.backward(cache, dy)
    for a, n in zip(analytic, numeric_grads(net, x, dy)):
        assert np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-8) < 1e-4


def test_zero_net_outputs_zero():
    net = MlpNet((3, 4, 4, 2), squash=True)
    net.set_flat(np.zeros(net.flat().size))
    assert not forward(net, np.ones(3)).any()
    tiny = MlpNet((1, 1, 1, 1), squash=True)
    assert forward(tiny, np.zeros(1))[0] == 0.0


def test_dimension_mismatch():
    net = MlpNet((3, 4, 4, 2))
    with pytest.raises(DimensionMismatch):
        net.forward(np.ones(5))
    with pytest.raises(DimensionMismatch):
        net.set_flat(np.zeros(3))


def test_log_prob_at_mean_is_closed_form():
    lp = gaussian_log_prob(np.zeros(4), np.zeros(4), 0.1)
    assert lp == pytest.approx(-2.0 * math.log(2 * math.pi * 0.01), abs=1e-12)
    assert lp == pytest.approx(5.5346, abs=1e-4)


def test_log_density_integrates_to_one():
    a = np.linspace(-1.0, 1.0, 20001)
    dens = np.exp(gaussian_log_prob(a[:, None], np.zeros(1), 0.1))
    assert abs(np.trapezoid(dens, a) - 1.0) < 1e-3


def zero_policy(mode):
    net = MlpNet((POLICY_DIM, 8, 8, 4), squash=True)
    net.set_flat(np.zeros(net.flat().size))
    return Policy(net, mode)


def test_rc_and_nrc_at_zero_output():
    x = np.random.default_rng(0).normal(size=(5, POLICY_DIM))
    assert np.array_equal(zero_policy("RC").act(x), x[:, REF_SLICE])
    mid = 0.5 * (MOTOR_LO + MOTOR_HI)
    assert np.array_equal(zero_policy("NRC").act(x), np.broadcast_to(mid, (5, 4)))


def test_rc_log_prob_is_of_the_residual():
    rng = np.random.default_rng(1)
    p = zero_policy("RC")
    x = rng.normal(size=POLICY_DIM)
    a, lp = sample_action(p, x[:76], x[76:], rng)
    assert lp == pytest.approx(gaussian_log_prob(a - x[REF_SLICE], np.zeros(4), 0.1), abs=1e-12)


def test_deterministic_action_is_mean():
    p = make_policy(PpoConfig(), np.random.default_rng(2))
    x = np.random.default_rng(3).normal(size=POLICY_DIM)
    a, _ = sample_action(p, x[:76], x[76:], np.random.default_rng(0), deterministic=True)
    assert np.array_equal(a, p.mean(x))


def brute_force_advantages(r, v, d, gamma, lam):
    T = len(r)
    adv = np.zeros(T)
    for t in range(T):
        total, discount = 0.0, 1.0
        for k in range(t, T):
            delta = r[k] + gamma * v[k + 1] * (1 - d[k]) - v[k]
            total += discount * delta
            if d[k]:
                break
            discount *= gamma * lam
        adv[t] = total
    return adv


def test_gae_single_step_and_td0():
    adv, ret = gae([1.0], [0.0, 0.0], [1.0])
    assert adv[0] == 1.0 and ret[0] == 1.0
    rng = np.random.default_rng(4)
    r, v, d = rng.normal(size=6), rng.normal(size=7), np.zeros(6)
    adv, _ = gae(r, v, d, 0.9, 0.0)
    assert np.allclose(adv, r + 0.9 * v[1:] - v[:-1], rtol=0, atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_gae_matches_nested_sums(seed):
    rng = np.random.default_rng(seed)
    r, v = rng.normal(size=10), rng.normal(size=11)
    d = (rng.uniform(size=10) < 0.2).astype(float)
    gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0.5, 1.0)
    adv, ret = gae(r, v, d, gamma, lam)
    assert np.max(np.abs(adv - brute_force_advantages(r, v, d, gamma, lam))) <= 1e-10
    assert np.allclose(ret, adv + v[:-1], atol=1e-15)


def test_advantage_normalization():
    adv = normalize_advantages(np.random.default_rng(5).normal(3.0, 7.0, size=4096))
    assert abs(adv.mean()) < 1e-10
    assert abs(adv.std() - 1.0) < 1e-6


def test_surrogate_clip_arithmetic():
    _, loss = surrogate_grad(np.array([1.5]), np.array([2.0]), 0.2)
    assert loss == pytest.approx(-1.2 * 2.0)
    g, _ = surrogate_grad(np.array([1.5]), np.array([2.0]), 0.2)
    assert g[0] == 0.0
    adv = np.array([0.3, -1.0, 2.0])
    g, loss = surrogate_grad(np.ones(3), adv, 0.2)
    # ratio one: d/dr of the mean surrogate is the vanilla policy-gradient weight
    assert np.array_equal(g, -adv / 3)
    assert loss == pytest.approx(-adv.mean())


def make_batch(rng, policy, value, n=64, adv=None):
    obs = rng.normal(size=(n, POLICY_DIM))
    a, lp = policy.sample(obs, rng)
    return {"obs": obs, "vobs": rng.normal(size=(n, value.net.widths[0])), "actions": a,
            "logp": lp, "adv": rng.normal(size=n) if adv is None else adv,
            "returns": rng.normal(size=n)}


def test_zero_advantage_leaves_policy_unchanged():
    cfg = PpoConfig(minibatch=32, epochs=2)
    rng = np.random.default_rng(6)
    policy, value = make_policy(cfg, rng), make_value(cfg, rng)
    before = policy.net.flat()
    batch = make_batch(rng, policy, value, adv=np.zeros(64))
    ppo_update(batch, policy, value, cfg, Adam(policy.net.params), Adam(value.net.params), rng)
    assert np.array_equal(policy.net.flat(), before)


def test_policy_gradient_direction_at_unit_ratio():
    # one plain gradient step along the analytic gradient lowers the surrogate loss
    cfg = PpoConfig(minibatch=64, epochs=1, max_grad_norm=0.0)
    rng = np.random.default_rng(7)
    policy, value = make_policy(cfg, rng), make_value(cfg, rng)
    batch = make_batch(rng, policy, value)
    adv = normalize_advantages(batch["adv"])

    def surrogate(pol):
        ratio = np.exp(pol.log_prob(batch["obs"], batch["actions"]) - batch["logp"])
        return -np.mean(np.minimum(ratio * adv, np.clip(ratio, 0.8, 1.2) * adv))

    start = surrogate(policy)
    ppo_update(batch, policy, value, cfg, Adam(policy.net.params, lr=1e-4),
               Adam(value.net.params), rng)
    assert surrogate(policy) < start


@pytest.fixture(scope="module")
def lib():
    return build_library(default_model(), [-0.5, 0.0, 0.5], [0.8, 0.9])


def small_cfg(**kw):
    base = dict(iterations=2, workers=1, rollout_steps=48, minibatch=16, epochs=1, seed=3)
    base.update(kw)
    return PpoConfig(**base)


def test_zero_iterations_returns_initial_policy(lib):
    res = train(small_cfg(iterations=0), lambda n: BipedEnv(lib, n=n))
    again = train(small_cfg(iterations=0), lambda n: BipedEnv(lib, n=n))
    assert res.curve == []
    assert np.array_equal(res.policy.net.flat(), again.policy.net.flat())


def test_training_is_bitwise_reproducible(lib, tmp_path):
    outs = []
    for k in range(2):
        res = train(small_cfg(), lambda n: BipedEnv(lib, n=n), Curriculum(10))
        write_curve_csv(res.curve, tmp_path / f"c{k}.csv")
        outs.append(res)
    assert (tmp_path / "c0.csv").read_bytes() == (tmp_path / "c1.csv").read_bytes()
    assert outs[0].policy.net.flat().tobytes() == outs[1].policy.net.flat().tobytes()
    assert [p.level for p in outs[0].curve] == [0.0, 0.1]


def test_ncr_uses_full_ranges_from_start(lib):
    res = train(small_cfg(iterations=1), lambda n: BipedEnv(lib, n=n), Curriculum(enabled=False))
    assert res.curve[0].level == 1.0


def test_checkpoint_roundtrip(tmp_path, lib):
    cfg = small_cfg(control_mode="RC")
    res = train(cfg, lambda n: BipedEnv(lib, n=n))
    save_checkpoint(tmp_path / "ck.json", res.policy, res.value, cfg, 2, {"mode": "rc-sg"})
    policy, value, meta = load_checkpoint(tmp_path / "ck.json")
    x = np.random.default_rng(0).normal(size=(4, POLICY_DIM))
    assert np.array_equal(policy.act(x), res.policy.act(x))
    xv = np.random.default_rng(1).normal(size=(4, value.net.widths[0]))
    assert np.array_equal(value(xv), res.value(xv))
    assert meta["control_mode"] == "RC" and meta["mode"] == "rc-sg" and meta["iteration"] == 2
    assert meta["policy_widths"] == [POLICY_DIM, 64, 64, 4]
    assert len(meta["config_hash"]) == 16
