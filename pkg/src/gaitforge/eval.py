"""Evaluation protocols: rollouts, command-set sweeps and pelvis perturbations."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels as K
from .env import BipedEnv, Command
from .randomization import DynamicsParams


class WindowTooLong(ValueError):
    pass


class MissingCheckpoint(FileNotFoundError):
    pass


@dataclass
class Trajectory:
    """Per-tick record of one rollout, sampled after each control period."""

    dt: float
    x: list = field(default_factory=list)
    z: list = field(default_factory=list)
    vx: list = field(default_factory=list)
    pitch: list = field(default_factory=list)
    reward: list = field(default_factory=list)
    cmd: list = field(default_factory=list)
    failure_tick: int | None = None
    reason: str | None = None
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.reward)

    @property
    def total_return(self) -> float:
        return float(np.sum(self.reward))


def _as_schedule(commands, n: int):
    """A Command, a list of n Commands, or a callable tick -> list of n Commands."""
    if callable(commands):
        return commands
    if isinstance(commands, Command):
        return lambda tick: [commands] * n if tick == 0 else None
    cmds = list(commands)
    return lambda tick: cmds if tick == 0 else None


def run_batch(policy, env: BipedEnv, commands, max_ticks: int, seeds, mus=None,
              hook: Callable | None = None, before_step: Callable | None = None):
    """Deterministic rollouts of ``policy`` in every slot of ``env``.

    ``hook(env)`` runs after each step (kinematic test doubles use it);
    ``before_step(env, tick)`` runs before each step (perturbations use it).
    Returns one Trajectory per slot.
    """
    n = env.n
    schedule = _as_schedule(commands, n)
    env.reset(seeds, mus, schedule(0))
    trajs = [Trajectory(env.dt) for _ in range(n)]
    hook = hook or getattr(policy, "after_step", None)
    for tick in range(max_ticks):
        if env.done.all():
            break
        if tick > 0:
            new = schedule(tick)
            if new is not None:
                for i in np.flatnonzero(~env.done):
                    # keep the pelvis target continuous across a command switch
                    env.x_anchor[i] = env.x_des[i]
                    env.seg_ticks[i] = 0
                    env.set_command(int(i), new[i])
        if before_step:
            before_step(env, tick)
        live = ~env.done
        _, r, d, info = env.step(policy.act(env.policy_input()))
        if hook:
            hook(env)
        for i in np.flatnonzero(live):
            t = trajs[i]
            t.x.append(env.q[i, 0])
            t.z.append(env.q[i, 1])
            t.vx.append(env.qd[i, 0])
            t.pitch.append(env.q[i, 2])
            t.reward.append(r[i])
            t.cmd.append(tuple(env.cmd[i]))
            if d[i] and info["reasons"][i] != "horizon":
                t.failure_tick = int(env.tick[i])
                t.reason = info["reasons"][i]
    if env.record:
        for i in range(n):
            trajs[i].rows = env.traces[i]
    return trajs


def eval_env(env: BipedEnv, ticks: int, n: int | None = None, record: bool = False) -> BipedEnv:
    """Copy of ``env``'s setup with a fixed command and a horizon past ``ticks``."""
    cfg = replace(env.cfg, resample_commands=False, fixed_command=None,
                  horizon=max(env.cfg.horizon, ticks + 1))
    return BipedEnv(env.lib, cfg, env.physics, env.model, env.reward_weights,
                    n or env.n, record=record)


def rollout(policy, env: BipedEnv, schedule, max_ticks: int, seed=0,
            mu: DynamicsParams | None = None):
    """Single deterministic rollout. Returns (trajectory, total return, survived)."""
    if env.n != 1:
        raise ValueError("rollout runs a single robot; use run_batch for more")
    if max_ticks == 0:
        return Trajectory(env.dt), 0.0, True
    (traj,) = run_batch(policy, env, schedule, max_ticks, [seed], None if mu is None else [mu])
    return traj, traj.total_return, traj.failure_tick is None and len(traj) == max_ticks


def achieved_params(traj: Trajectory, window: float = 5.0):
    """Mean forward velocity and mean pelvis height over the final ``window`` seconds."""
    k = int(round(window / traj.dt))
    if k < 1 or k > len(traj.vx):
        raise WindowTooLong(f"window of {k} ticks exceeds the {len(traj.vx)}-tick trajectory")
    return float(np.mean(traj.vx[-k:])), float(np.mean(traj.z[-k:]))


@dataclass(frozen=True)
class CommandGrid:
    vx: tuple
    hz: tuple

    def __post_init__(self):
        vx = tuple(float(v) for v in self.vx)
        hz = tuple(float(v) for v in self.hz)
        for name, axis in (("vx", vx), ("hz", hz)):
            if not axis or np.any(np.diff(axis) <= 0):
                raise ValueError(f"{name} axis must be nonempty and strictly increasing")
        object.__setattr__(self, "vx", vx)
        object.__setattr__(self, "hz", hz)

    @classmethod
    def regular(cls, vx_range=(-2.0, 2.0), hz_range=(0.70, 0.95), vx_step: float = 0.1,
                hz_step: float = 0.05) -> CommandGrid:
        nvx = int(round((vx_range[1] - vx_range[0]) / vx_step)) + 1
        nhz = int(round((hz_range[1] - hz_range[0]) / hz_step)) + 1
        return cls(tuple(np.round(np.linspace(*vx_range, nvx), 10)),
                   tuple(np.round(np.linspace(*hz_range, nhz), 10)))

    def points(self):
        return [(i, j, vx, hz) for i, vx in enumerate(self.vx) for j, hz in enumerate(self.hz)]

    def __len__(self):
        return len(self.vx) * len(self.hz)


@dataclass
class PointOutcome:
    vx: float
    hz: float
    survived: bool
    achieved_vx: float = float("nan")
    achieved_hz: float = float("nan")
    failure_tick: int | None = None


@dataclass
class SetResult:
    outcomes: list

    @property
    def feasible(self) -> set:
        return {(o.vx, o.hz) for o in self.outcomes if o.survived}

    @property
    def safe(self) -> list:
        return [(o.achieved_vx, o.achieved_hz) for o in self.outcomes if o.survived]


def sweep_sets(policy, grid: CommandGrid, env: BipedEnv, seed: int = 0, seconds: float = 15.0,
               window: float = 5.0, order=None, batch: int = 32) -> SetResult:
    """Run every grid command from a fresh nominal standing reset.

    Each point's randomness is keyed by its grid index, so the evaluation
    order (``order`` permutes the points) cannot change the outcome.
    """
    ticks = env.physics.ticks(seconds)
    pts = grid.points()
    if order is not None:
        pts = [pts[k] for k in order]
    found = {}
    for start in range(0, len(pts), batch):
        chunk = pts[start:start + batch]
        benv = eval_env(env, ticks, n=len(chunk))
        seeds = [np.random.SeedSequence([seed, i, j]) for i, j, _, _ in chunk]
        cmds = [Command(vx, hz) for _, _, vx, hz in chunk]
        trajs = run_batch(policy, benv, cmds, ticks, seeds)
        for (i, j, vx, hz), tr in zip(chunk, trajs):
            ok = tr.failure_tick is None and len(tr) == ticks
            out = PointOutcome(vx, hz, ok, failure_tick=tr.failure_tick)
            if ok:
                out.achieved_vx, out.achieved_hz = achieved_params(tr, window)
            found[(i, j)] = out
    return SetResult([found[(i, j)] for i, j, _, _ in grid.points()])


class KinematicOracle:
    """Test double that places the robot on its reference every tick.

    After each control period the pelvis is put at the target x, the commanded
    height and zero pitch, with joints on the reference at the current phase.
    """

    def __init__(self, hover: float = 0.0):
        self.hover = hover

    def act(self, x):
        from .learner import REF_SLICE
        return np.asarray(x)[..., REF_SLICE]

    def after_step(self, env: BipedEnv) -> None:
        pos = np.empty((env.n, 1, 4))
        vel = np.empty((env.n, 1, 4))
        K.reference_batch(env.coeffs, env.phase[:, None], env.lib.step_period, pos, vel)
        live = ~env.done
        env.q[live, 0] = env.x_des[live]
        env.q[live, 1] = env.cmd[live, 1] + self.hover
        env.q[live, 2] = 0.0
        env.q[live, 3:] = pos[live, 0]
        env.qd[live] = 0.0
        env.qd[live, 0] = env.cmd[live, 0]
        env.qd[live, 3:] = vel[live, 0]
        env.held[live] = pos[live, 0]
        env.filt[live] = pos[live, 0]


@dataclass(frozen=True)
class PerturbationConfig:
    beta: float = 1.0
    trigger_prob: float = 0.0015
    max_duration: float = 0.8
    force: tuple = (40.0, 40.0)
    torque: float = 10.0
    rollouts: int = 32
    ticks: int = 2500
    command: tuple = (0.4, 0.85)

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not 0.0 <= self.trigger_prob * self.beta <= 1.0:
            raise ValueError("trigger probability must lie in [0, 1]")

    @property
    def probability(self) -> float:
        return self.trigger_prob * self.beta


class Perturber:
    """Random pelvis wrenches. One stream per rollout, shared across intensities.

    Every tick consumes the same draws regardless of beta, so rollout k sees
    coupled disturbances at every intensity: a trigger at low beta is also a
    trigger at any higher beta.
    """

    def __init__(self, cfg: PerturbationConfig, seeds):
        self.cfg = cfg
        self.rngs = [np.random.default_rng(s) for s in seeds]
        self.triggers = np.zeros(len(self.rngs), dtype=np.int64)

    def __call__(self, env: BipedEnv, tick: int) -> None:
        c = self.cfg
        for i, rng in enumerate(self.rngs):
            u, dur, fx, fz, tq = rng.random(5)
            if env.done[i] or u >= c.probability:
                continue
            wrench = (c.force[0] * (2 * fx - 1), c.force[1] * (2 * fz - 1), c.torque * (2 * tq - 1))
            env.set_wrench(i, wrench, dur * c.max_duration * c.beta)
            self.triggers[i] += 1


def _perturbed_returns(policy, env: BipedEnv, cfg: PerturbationConfig, seed: int) -> np.ndarray:
    n = cfg.rollouts
    benv = eval_env(env, cfg.ticks, n=n)
    seeds = [np.random.SeedSequence([seed, k]) for k in range(n)]
    pert = Perturber(cfg, [np.random.SeedSequence([seed, k, 0xBEEF]) for k in range(n)])
    trajs = run_batch(policy, benv, Command(*cfg.command), cfg.ticks, seeds, before_step=pert)
    return np.array([t.total_return for t in trajs])


@dataclass
class PerturbResult:
    beta: float
    normalized: float
    stderr: float
    median: float
    per_rollout: np.ndarray


def perturbation_eval(policy, cfg: PerturbationConfig, env: BipedEnv, seed: int = 0,
                      baseline: np.ndarray | None = None) -> PerturbResult:
    """Mean perturbed return over the unperturbed mean, paired by rollout seed."""
    base = baseline if baseline is not None else _perturbed_returns(
        policy, env, replace(cfg, beta=0.0), seed)
    ref = float(np.mean(base))
    if cfg.beta == 0.0:
        ratios = base / ref
        return PerturbResult(0.0, ref / ref, float(np.std(ratios) / math.sqrt(len(ratios))),
                             float(np.median(ratios)), ratios)
    ratios = _perturbed_returns(policy, env, cfg, seed) / ref
    return PerturbResult(cfg.beta, float(np.mean(ratios)),
                         float(np.std(ratios) / math.sqrt(len(ratios))),
                         float(np.median(ratios)), ratios)


def perturbation_sweep(policy, env: BipedEnv, betas, cfg: PerturbationConfig = PerturbationConfig(),
                       seed: int = 0) -> list[PerturbResult]:
    base = _perturbed_returns(policy, env, replace(cfg, beta=0.0), seed)
    return [perturbation_eval(policy, replace(cfg, beta=float(b)), env, seed, base) for b in betas]


def compare_models(checkpoints: dict, betas, env_for: Callable, cfg: PerturbationConfig =
                   PerturbationConfig(), seed: int = 0) -> dict:
    """Perturbation table per model. ``env_for(meta)`` builds the evaluation env for a checkpoint."""
    from .learner import load_checkpoint

    for name, path in checkpoints.items():
        if not Path(path).exists() or not Path(path).with_suffix(".bin").exists():
            raise MissingCheckpoint(f"{name}: no checkpoint at {path}")
    table = {}
    for name, path in checkpoints.items():
        policy, _, meta = load_checkpoint(path)
        table[name] = perturbation_sweep(policy, env_for(meta), betas, cfg, seed)
    return table


def write_sets_csv(result: SetResult, path, seed: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# master_seed={seed}\n")
        w = csv.writer(fh)
        w.writerow(["vx", "hz", "survived", "achieved_vx", "achieved_hz", "failure_tick"])
        for o in result.outcomes:
            w.writerow([repr(o.vx), repr(o.hz), int(o.survived), repr(o.achieved_vx),
                        repr(o.achieved_hz), "" if o.failure_tick is None else o.failure_tick])


def write_perturb_csv(table: dict, path, seed: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# master_seed={seed}\n")
        w = csv.writer(fh)
        w.writerow(["model", "beta", "normalized_return", "stderr", "median"])
        for name, rows in table.items():
            for r in rows:
                w.writerow([name, repr(r.beta), repr(r.normalized), repr(r.stderr), repr(r.median)])
