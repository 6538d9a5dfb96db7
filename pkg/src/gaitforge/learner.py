"""Proximal policy optimization in plain numpy.

Two-hidden-layer tanh networks with hand-written backprop, a Gaussian policy
with a fixed standard deviation, a critic that sees privileged simulator
state, and a clipped surrogate objective over generalized advantages.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .env import GOAL_DIM, POLICY_DIM, VALUE_DIM, BipedEnv
from .randomization import (Curriculum, RandomizationRanges, curriculum_level,
                            effective_ranges, sample_dynamics)

SIGMA = 0.1
# motor target ranges for the non-residual head: hip, knee, hip, knee
MOTOR_LO = np.array([-0.5, -2.0, -0.5, -2.0])
MOTOR_HI = np.array([1.5, 0.0, 1.5, 0.0])
REF_SLICE = slice(POLICY_DIM - GOAL_DIM + 2, POLICY_DIM - GOAL_DIM + 6)


class DimensionMismatch(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


class MlpNet:
    """affine -> tanh -> affine -> tanh -> affine (-> tanh if ``squash``)."""

    def __init__(self, widths, squash: bool = False, rng: np.random.Generator | None = None,
                 out_scale: float = 1.0):
        widths = tuple(int(w) for w in widths)
        if len(widths) != 4 or min(widths) < 1:
            raise ValueError("MlpNet takes four positive widths (in, h1, h2, out)")
        self.widths = widths
        self.squash = squash
        rng = rng or np.random.default_rng(0)
        self.params = []
        for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            gain = out_scale if k == 2 else 1.0
            W = rng.normal(0.0, gain / math.sqrt(a), size=(a, b))
            self.params += [W, np.zeros(b)]

    def check(self) -> None:
        for k, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            if self.params[2 * k].shape != (a, b) or self.params[2 * k + 1].shape != (b,):
                raise DimensionMismatch(f"layer {k} shape does not match widths {self.widths}")
            if not all(np.isfinite(p).all() for p in self.params[2 * k:2 * k + 2]):
                raise ValueError("non-finite network parameters")

    def forward(self, x, cache: bool = False):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.widths[0]:
            raise DimensionMismatch(f"expected input width {self.widths[0]}, got {x.shape[-1]}")
        W1, b1, W2, b2, W3, b3 = self.params
        h1 = np.tanh(x @ W1 + b1)
        h2 = np.tanh(h1 @ W2 + b2)
        y = h2 @ W3 + b3
        if self.squash:
            y = np.tanh(y)
        return (y, (x, h1, h2, y)) if cache else y

    __call__ = forward

    def backward(self, cache, dy) -> list[np.ndarray]:
        """Gradients of sum(dy * y) with respect to every parameter."""
        x, h1, h2, y = cache
        W1, b1, W2, b2, W3, b3 = self.params
        dz3 = dy * (1.0 - y * y) if self.squash else dy
        x2 = x.reshape(-1, x.shape[-1])
        h1 = h1.reshape(-1, h1.shape[-1])
        h2 = h2.reshape(-1, h2.shape[-1])
        dz3 = dz3.reshape(-1, dz3.shape[-1])
        dz2 = (dz3 @ W3.T) * (1.0 - h2 * h2)
        dz1 = (dz2 @ W2.T) * (1.0 - h1 * h1)
        return [x2.T @ dz1, dz1.sum(0), h1.T @ dz2, dz2.sum(0), h2.T @ dz3, dz3.sum(0)]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, v) -> None:
        v = np.asarray(v, dtype=float)
        need = sum(p.size for p in self.params)
        if v.size != need:
            raise DimensionMismatch(f"blob has {v.size} values, network needs {need}")
        i = 0
        for p in self.params:
            p[...] = v[i:i + p.size].reshape(p.shape)
            i += p.size

    def copy(self) -> MlpNet:
        net = MlpNet.__new__(MlpNet)
        net.widths, net.squash = self.widths, self.squash
        net.params = [p.copy() for p in self.params]
        return net


def forward(net: MlpNet, x):
    return net.forward(x)


class Adam:
    def __init__(self, params, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class RunningNorm:
    """Per-feature input standardization from accumulated batch moments."""

    def __init__(self, dim: int, clip: float = 10.0):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip

    def update(self, x) -> None:
        x = np.asarray(x, dtype=float).reshape(-1, self.mean.size)
        n = x.shape[0]
        bm, bv = x.mean(0), x.var(0)
        total = self.count + n
        delta = bm - self.mean
        self.mean = self.mean + delta * n / total
        self.var = (self.var * self.count + bv * n + delta ** 2 * self.count * n / total) / total
        self.count = total

    def __call__(self, x):
        return np.clip((x - self.mean) / np.sqrt(self.var + 1e-8), -self.clip, self.clip)

    def state(self) -> np.ndarray:
        return np.concatenate([self.mean, self.var, [self.count]])

    def load(self, v) -> None:
        d = self.mean.size
        self.mean, self.var, self.count = v[:d].copy(), v[d:2 * d].copy(), float(v[2 * d])


def gaussian_log_prob(a, mean, sigma: float = SIGMA):
    d = np.asarray(a) - np.asarray(mean)
    k = d.shape[-1]
    return -0.5 * np.sum(d * d, axis=-1) / sigma ** 2 - 0.5 * k * math.log(2.0 * math.pi * sigma ** 2)


class Policy:
    """Gaussian policy head over an MlpNet.

    NRC maps the squashed output onto the motor ranges. RC adds a bounded
    residual to the current reference positions read from the goal.
    """

    def __init__(self, net: MlpNet, mode: str = "NRC", residual_scale: float = 0.5,
                 sigma: float = SIGMA, norm: RunningNorm | None = None):
        if mode not in ("NRC", "RC"):
            raise ValueError("control mode must be NRC or RC")
        self.net = net
        self.mode = mode
        self.residual_scale = residual_scale
        self.sigma = sigma
        self.norm = norm or RunningNorm(net.widths[0])

    def _affine(self, x):
        """Returns (offset, scale) so that mean = offset + scale * net output."""
        x = np.asarray(x, dtype=float)
        if self.mode == "NRC":
            mid = 0.5 * (MOTOR_LO + MOTOR_HI)
            return np.broadcast_to(mid, x.shape[:-1] + (4,)), 0.5 * (MOTOR_HI - MOTOR_LO)
        return x[..., REF_SLICE], np.full(4, self.residual_scale)

    def mean(self, x, cache: bool = False):
        y, c = self.net.forward(self.norm(x), cache=True)
        off, scale = self._affine(x)
        m = off + scale * y
        return (m, c) if cache else m

    def log_prob(self, x, a):
        return gaussian_log_prob(a, self.mean(x), self.sigma)

    def sample(self, x, rng: np.random.Generator):
        m = self.mean(x)
        a = m + self.sigma * rng.standard_normal(m.shape)
        return a, gaussian_log_prob(a, m, self.sigma)

    def act(self, x):
        """Deterministic action for evaluation."""
        return self.mean(x)


def sample_action(policy: Policy, s, g, rng: np.random.Generator, deterministic: bool = False):
    """Action and its log-density from separate state and goal parts."""
    x = np.concatenate([np.asarray(s, float), np.asarray(g, float)], axis=-1)
    if deterministic:
        m = policy.mean(x)
        return m, gaussian_log_prob(m, m, policy.sigma)
    return policy.sample(x, rng)


class ValueFn:
    def __init__(self, net: MlpNet, norm: RunningNorm | None = None):
        self.net = net
        self.norm = norm or RunningNorm(net.widths[0])

    def __call__(self, x):
        return self.net.forward(self.norm(x))[..., 0]


def gae(rewards, values, dones, gamma: float = 0.99, lam: float = 0.95):
    """``values`` carries one extra bootstrap entry at the end (time is axis 0)."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    T = rewards.shape[0]
    if values.shape[0] != T + 1 or dones.shape[0] != T:
        raise ValueError("need len(values) == len(rewards) + 1 == len(dones) + 1")
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0])
    for t in range(T - 1, -1, -1):
        keep = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * keep - values[t]
        last = delta + gamma * lam * keep * last
        adv[t] = last
    return adv, adv + values[:-1]


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 256
    lr: float = 3e-4
    value_lr: float = 1e-3
    iterations: int = 488
    rollout_steps: int = 256
    workers: int = 16
    hidden: tuple = (64, 64)
    control_mode: str = "NRC"
    residual_scale: float = 0.5
    max_grad_norm: float = 0.5
    value_scale: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ValueError("gamma and lam must lie in (0, 1]")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if self.control_mode not in ("NRC", "RC"):
            raise ValueError("control_mode must be NRC or RC")
        if self.iterations < 0 or self.epochs < 1 or self.minibatch < 1:
            raise ValueError("iterations, epochs and minibatch must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def steps_per_iteration(self) -> int:
        return self.rollout_steps * self.workers


def make_policy(cfg: PpoConfig, rng: np.random.Generator) -> Policy:
    net = MlpNet((POLICY_DIM, *cfg.hidden, 4), squash=True, rng=rng, out_scale=0.01)
    return Policy(net, cfg.control_mode, cfg.residual_scale)


def make_value(cfg: PpoConfig, rng: np.random.Generator) -> ValueFn:
    return ValueFn(MlpNet((VALUE_DIM, *cfg.hidden, 1), rng=rng, out_scale=0.1))


def _clip_grads(grads, max_norm: float):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if not math.isfinite(norm):
        raise NonFiniteLoss("gradient norm is not finite")
    if max_norm and norm > max_norm:
        grads = [g * (max_norm / norm) for g in grads]
    return grads, norm


def surrogate_grad(ratio, adv, clip: float):
    """d(-mean min(r A, clip(r) A)) / d r per sample."""
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    active = unclipped <= clipped
    return np.where(active, -adv, 0.0) / adv.size, -np.minimum(unclipped, clipped).mean()


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=float)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_update(batch: dict, policy: Policy, value: ValueFn, cfg: PpoConfig,
               pi_opt: Adam, v_opt: Adam, rng: np.random.Generator) -> dict:
    """One PPO update; batch keys: obs, vobs, actions, logp, adv, returns."""
    n = batch["obs"].shape[0]
    if n == 0:
        raise ValueError("empty batch")
    adv_all = normalize_advantages(batch["adv"])
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "clip_frac": 0.0, "approx_kl": 0.0}
    count = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            x, a, adv = batch["obs"][idx], batch["actions"][idx], adv_all[idx]

            m, cache = policy.mean(x, cache=True)
            logp = gaussian_log_prob(a, m, policy.sigma)
            ratio = np.exp(np.clip(logp - batch["logp"][idx], -20.0, 20.0))
            d_ratio, loss = surrogate_grad(ratio, adv, cfg.clip)
            _, scale = policy._affine(x)
            d_mean = (d_ratio * ratio)[:, None] * (a - m) / policy.sigma ** 2
            grads = policy.net.backward(cache, d_mean * scale)
            grads, _ = _clip_grads(grads, cfg.max_grad_norm)
            pi_opt.step(grads)

            target = batch["returns"][idx] / cfg.value_scale
            v, vc = value.net.forward(value.norm(batch["vobs"][idx]), cache=True)
            err = v[:, 0] - target
            v_loss = float(np.mean(err ** 2))
            vgrads = value.net.backward(vc, (2.0 * err / err.size)[:, None])
            vgrads, _ = _clip_grads(vgrads, cfg.max_grad_norm)
            v_opt.step(vgrads)

            if not (math.isfinite(loss) and math.isfinite(v_loss)):
                raise NonFiniteLoss(f"policy loss {loss}, value loss {v_loss}")
            stats["policy_loss"] += loss
            stats["value_loss"] += v_loss
            stats["clip_frac"] += float(np.mean(np.abs(ratio - 1.0) > cfg.clip))
            stats["approx_kl"] += float(np.mean(batch["logp"][idx] - logp))
            count += 1
    return {k: v / count for k, v in stats.items()}


@dataclass
class CurvePoint:
    iteration: int
    mean_return: float
    level: float
    wall_clock: float
    episodes: int = 0
    mean_length: float = float("nan")


@dataclass
class TrainResult:
    policy: Policy
    value: ValueFn
    curve: list = field(default_factory=list)
    config: PpoConfig | None = None


def episode_seed(master: int, worker: int, episode: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, worker, episode])


def train(cfg: PpoConfig, env_factory: Callable[[int], BipedEnv],
          curriculum: Curriculum = Curriculum(), ranges: RandomizationRanges | None = None,
          randomize: bool = True, log: Callable[[str], None] | None = None) -> TrainResult:
    """Train a policy; ``env_factory(n)`` builds an environment with ``n`` robots.

    With ``randomize`` off, every episode uses nominal dynamics.
    """
    ranges = ranges or RandomizationRanges()
    root = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xC0FFEE]))
    policy = make_policy(cfg, root)
    value = make_value(cfg, root)
    result = TrainResult(policy, value, [], cfg)
    if cfg.iterations == 0:
        return result

    pi_opt = Adam(policy.net.params, cfg.lr)
    v_opt = Adam(value.net.params, cfg.value_lr)
    env = env_factory(cfg.workers)
    W, T = cfg.workers, cfg.rollout_steps
    episodes = np.zeros(W, dtype=np.int64)
    act_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xAC7]))
    upd_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x9D]))
    t0 = time.perf_counter()

    def start_episode(i: int, level: float) -> None:
        rng = np.random.default_rng(episode_seed(cfg.seed, i, int(episodes[i])))
        mu = sample_dynamics(rng, effective_ranges(ranges, level)) if randomize else None
        env.reset_one(i, rng.integers(2 ** 63), mu)
        episodes[i] += 1

    level = curriculum_level(0, curriculum) if randomize else 0.0
    for i in range(W):
        start_episode(i, level)
    lengths = np.zeros(W, dtype=np.int64)

    for it in range(cfg.iterations):
        level = curriculum_level(it, curriculum) if randomize else 0.0
        obs = np.empty((T, W, POLICY_DIM))
        vobs = np.empty((T + 1, W, VALUE_DIM))
        acts = np.empty((T, W, 4))
        logps = np.empty((T, W))
        rews = np.empty((T, W))
        dones = np.empty((T, W))
        finished, finished_len = [], []

        x = env.policy_input()
        xv = env.value_input()
        for t in range(T):
            obs[t], vobs[t] = x, xv
            a, lp = policy.sample(x, act_rng)
            acts[t], logps[t] = a, lp
            x, r, d, info = env.step(a)
            rews[t], dones[t] = r, d
            lengths += 1
            xv = info["value_input"]
            for i in np.flatnonzero(d):
                finished.append(info["episode_returns"][int(i)])
                finished_len.append(int(lengths[i]))
                if info["truncated"][i]:
                    # horizon cut: fold the bootstrap value into the reward
                    vobs_end = xv[i]
                    rews[t, i] += cfg.gamma * value(vobs_end[None])[0] * cfg.value_scale
                lengths[i] = 0
                start_episode(int(i), level)
            if d.any():
                x = env.policy_input()
                xv = env.value_input()
        vobs[T] = xv

        policy.norm.update(obs.reshape(-1, POLICY_DIM))
        value.norm.update(vobs[:T].reshape(-1, VALUE_DIM))
        values = value(vobs) * cfg.value_scale
        adv, ret = gae(rews, values, dones, cfg.gamma, cfg.lam)
        batch = {"obs": obs.reshape(-1, POLICY_DIM), "vobs": vobs[:T].reshape(-1, VALUE_DIM),
                 "actions": acts.reshape(-1, 4), "logp": logps.reshape(-1),
                 "adv": adv.reshape(-1), "returns": ret.reshape(-1)}
        stats = ppo_update(batch, policy, value, cfg, pi_opt, v_opt, upd_rng)

        mean_ret = float(np.mean(finished)) if finished else float("nan")
        mean_len = float(np.mean(finished_len)) if finished_len else float("nan")
        result.curve.append(CurvePoint(it, mean_ret, level, time.perf_counter() - t0,
                                       len(finished), mean_len))
        if log:
            log(f"iter {it:4d} lambda {level:.3f} return {mean_ret:8.3f} len {mean_len:7.1f} "
                f"vloss {stats['value_loss']:.4f} kl {stats['approx_kl']:.4f}")
    return result


def final_return(curve, fraction: float = 0.1) -> float:
    """Mean episode return over the last ``fraction`` of the iterations."""
    if not curve:
        return float("nan")
    k = max(1, int(round(len(curve) * fraction)))
    vals = [p.mean_return for p in curve[-k:] if math.isfinite(p.mean_return)]
    return float(np.mean(vals)) if vals else float("nan")


def evaluate_return(policy: Policy, env: BipedEnv, seeds, mus=None, max_ticks: int | None = None,
                    commands=None) -> np.ndarray:
    """Deterministic episode returns, one robot slot per seed."""
    n = len(seeds)
    if env.n != n:
        raise ValueError("environment batch size must equal the number of seeds")
    env.reset(seeds, mus, commands)
    limit = max_ticks or env.cfg.horizon
    total = np.zeros(n)
    for _ in range(limit):
        if env.done.all():
            break
        _, r, _, _ = env.step(policy.act(env.policy_input()))
        total += r
    return total


# -- persistence ----------------------------------------------------------

def config_hash(cfg: PpoConfig) -> str:
    return hashlib.sha256(json.dumps(asdict(cfg), sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path, policy: Policy, value: ValueFn | None = None,
                    cfg: PpoConfig | None = None, iteration: int = 0, extra: dict | None = None):
    """Writes ``path`` (JSON metadata) and ``path`` with ``.bin`` (float64 little-endian blob)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    parts = [policy.net.flat(), policy.norm.state()]
    meta = {
        "format": "gaitforge-checkpoint/1",
        "policy_widths": list(policy.net.widths),
        "control_mode": policy.mode,
        "residual_scale": policy.residual_scale,
        "sigma": policy.sigma,
        "iteration": iteration,
        "config": asdict(cfg) if cfg else None,
        "config_hash": config_hash(cfg) if cfg else None,
        "sizes": [int(parts[0].size), int(parts[1].size)],
    }
    if value is not None:
        parts += [value.net.flat(), value.norm.state()]
        meta["value_widths"] = list(value.net.widths)
        meta["sizes"] += [int(parts[2].size), int(parts[3].size)]
    if extra:
        meta.update(extra)
    blob = np.concatenate(parts).astype("<f8")
    path.with_suffix(".bin").write_bytes(blob.tobytes())
    path.write_text(json.dumps(meta, indent=2))


def load_checkpoint(path):
    """Returns (policy, value or None, metadata)."""
    path = Path(path)
    meta = json.loads(path.read_text())
    blob = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    if blob.size != sum(meta["sizes"]):
        raise ValueError("checkpoint blob size does not match its metadata")
    cuts = np.cumsum([0] + meta["sizes"])
    pieces = [blob[a:b].copy() for a, b in zip(cuts[:-1], cuts[1:])]
    net = MlpNet(meta["policy_widths"], squash=True)
    net.set_flat(pieces[0])
    policy = Policy(net, meta["control_mode"], meta["residual_scale"], meta["sigma"])
    policy.norm.load(pieces[1])
    value = None
    if "value_widths" in meta:
        vnet = MlpNet(meta["value_widths"])
        vnet.set_flat(pieces[2])
        value = ValueFn(vnet)
        value.norm.load(pieces[3])
    return policy, value, meta


def write_curve_csv(curve, path, wall_clock: bool = False) -> None:
    """Wall-clock time is opt-in so that same-seed curves compare byte for byte."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "mean_return", "lambda", "episodes", "mean_length"]
                   + (["wall_clock"] if wall_clock else []))
        for p in curve:
            row = [p.iteration, repr(p.mean_return), repr(p.level), p.episodes, repr(p.mean_length)]
            w.writerow(row + ([f"{p.wall_clock:.3f}"] if wall_clock else []))
