"""Command-line entry point: gen-gaits, train, eval, rollout.

Exit codes: 0 ok, 2 configuration error, 3 missing artifact, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, save_config
from .env import BipedEnv, Command, write_trace_csv
from .eval import (CommandGrid, MissingCheckpoint, eval_env, perturbation_sweep, rollout,
                   sweep_sets, write_perturb_csv, write_sets_csv)
from .gaitlib import GaitLibrary, GaitParams, Unreachable, build_library, load_library, save_library
from .learner import NonFiniteLoss, load_checkpoint, save_checkpoint, train, write_curve_csv
from .physics import NumericalBlowup

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4
NOMINAL_GAIT = (0.4, 0.85)

# mode -> (control mode, single gait)
MODES = {
    "nrc-gl": ("NRC", False),
    "nrc-sg": ("NRC", True),
    "rc-sg": ("RC", True),
    "ncr": ("NRC", False),
}


class MissingArtifact(FileNotFoundError):
    pass


def effective_config(path: str | None) -> RunConfig:
    cfg = load_config(path) if path else RunConfig()
    if "GAITFORGE_SEED" in os.environ:
        try:
            seed = int(os.environ["GAITFORGE_SEED"])
        except ValueError:
            raise ConfigError("GAITFORGE_SEED must be an integer")
        cfg = replace(cfg, seed=seed, ppo=replace(cfg.ppo, seed=seed))
    return cfg


def library_for(cfg: RunConfig, path: str | None) -> GaitLibrary:
    if path:
        if not Path(path).exists():
            raise MissingArtifact(f"library file {path} not found")
        return load_library(path)
    return build_library(cfg.model, cfg.library.vx_axis, cfg.library.hz_axis, cfg.library.gait)


def make_env_factory(cfg: RunConfig, lib: GaitLibrary, single: bool):
    env_cfg = cfg.env
    if single:
        lib = lib.single(GaitParams(*NOMINAL_GAIT))
        env_cfg = replace(env_cfg, fixed_command=NOMINAL_GAIT)
    return lambda n: BipedEnv(lib, env_cfg, cfg.physics, cfg.model, cfg.reward, n)


def cmd_gen_gaits(args) -> int:
    cfg = effective_config(args.config)
    try:
        lib = build_library(cfg.model, cfg.library.vx_axis, cfg.library.hz_axis, cfg.library.gait)
    except Unreachable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    save_library(lib, args.out)
    print(f"{len(lib)} gaits ({lib.vx_axis.size} x {lib.hz_axis.size}) -> {args.out}")
    for i, vx in enumerate(lib.vx_axis):
        for j, hz in enumerate(lib.hz_axis):
            print(f"  vx={vx:+.2f} hz={hz:.3f} residual={lib.fit_residuals[i, j]:.2e}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = effective_config(args.config)
    control, single = MODES[args.mode]
    ppo = replace(cfg.ppo, control_mode=control)
    if args.iterations is not None:
        ppo = replace(ppo, iterations=args.iterations)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        ppo = replace(ppo, workers=args.workers)
    curriculum = cfg.curriculum
    if args.mode == "ncr":
        curriculum = replace(curriculum, enabled=False)
    cfg = replace(cfg, ppo=ppo, curriculum=curriculum)
    lib = library_for(cfg, args.library)
    out = Path(args.out or Path(cfg.output_dir) / args.mode)
    save_config(cfg, out / "config.json")
    log = None if args.quiet else print
    result = train(ppo, make_env_factory(cfg, lib, single), curriculum, cfg.randomization,
                   randomize=not args.no_randomization, log=log)
    extra = {"mode": args.mode, "single_gait": single, "randomized": not args.no_randomization,
             "nominal_gait": list(NOMINAL_GAIT) if single else None}
    save_checkpoint(out / "checkpoint.json", result.policy, result.value, ppo, ppo.iterations, extra)
    write_curve_csv(result.curve, out / "curve.csv")
    write_curve_csv(result.curve, out / "timing.csv", wall_clock=True)
    print(f"checkpoint -> {out / 'checkpoint.json'}")
    return EXIT_OK


def _load(args):
    path = Path(args.checkpoint)
    if not path.exists() or not path.with_suffix(".bin").exists():
        raise MissingCheckpoint(f"checkpoint {path} not found")
    return load_checkpoint(path)


def _parse_pair(text: str, what: str):
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"{what} must look like 'a,b', got {text!r}")
    return a, b


def _eval_env(cfg: RunConfig, lib: GaitLibrary, meta: dict, n: int = 1, record=False) -> BipedEnv:
    if meta.get("single_gait"):
        lib = lib.single(GaitParams(*meta["nominal_gait"]))
    return BipedEnv(lib, cfg.env, cfg.physics, cfg.model, cfg.reward, n, record=record)


def _rollout(cfg, lib, policy, meta, args, out: Path) -> int:
    vx, hz = _parse_pair(args.command, "--command")
    ticks = cfg.physics.ticks(args.seconds)
    env = eval_env(_eval_env(cfg, lib, meta), ticks, n=1, record=True)
    traj, total, survived = rollout(policy, env, Command(vx, hz), ticks, seed=cfg.seed)
    write_trace_csv(traj.rows, out)
    print(f"{len(traj)} ticks, return {total:.3f}, survived={survived} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = effective_config(args.config)
    policy, _, meta = _load(args)
    lib = library_for(cfg, args.library)
    out = Path(args.out or cfg.output_dir)
    if args.protocol == "rollout":
        return _rollout(cfg, lib, policy, meta, args, out / "trace.csv")
    if args.protocol == "sets":
        e = cfg.eval
        if args.grid:
            nvx, nhz = (int(v) for v in args.grid.lower().split("x"))
            grid = CommandGrid(tuple(np.linspace(*e.vx_range, nvx)), tuple(np.linspace(*e.hz_range, nhz)))
        else:
            grid = CommandGrid.regular(e.vx_range, e.hz_range, e.vx_step, e.hz_step)
        result = sweep_sets(policy, grid, _eval_env(cfg, lib, meta), cfg.seed, e.seconds, e.window)
        write_sets_csv(result, out / "sets.csv", cfg.seed)
        print(f"{len(result.feasible)}/{len(grid)} commands feasible -> {out / 'sets.csv'}")
        return EXIT_OK
    betas = args.beta if args.beta else list(cfg.eval.betas)
    pcfg = cfg.eval.perturbation
    if args.rollouts:
        pcfg = replace(pcfg, rollouts=args.rollouts)
    rows = perturbation_sweep(policy, _eval_env(cfg, lib, meta), betas, pcfg, cfg.seed)
    write_perturb_csv({meta.get("mode", "model"): rows}, out / "perturb.csv", cfg.seed)
    for r in rows:
        print(f"beta {r.beta:.2f}: normalized return {r.normalized:.4f} +- {r.stderr:.4f}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    cfg = effective_config(args.config)
    policy, _, meta = _load(args)
    lib = library_for(cfg, args.library)
    return _rollout(cfg, lib, policy, meta, args, Path(args.out or "trace.csv"))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaitforge")
    sub = p.add_subparsers(dest="command_name", required=True)

    g = sub.add_parser("gen-gaits", help="build and save the gait library")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_gaits)

    t = sub.add_parser("train", help="train a policy")
    t.add_argument("--config")
    t.add_argument("--mode", choices=sorted(MODES), default="nrc-gl")
    t.add_argument("--library")
    t.add_argument("--out")
    t.add_argument("--iterations", type=int)
    t.add_argument("--workers", type=int, help="parallel robot slots per rollout")
    t.add_argument("--no-randomization", action="store_true")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    for name, func in (("eval", cmd_eval), ("rollout", cmd_rollout)):
        e = sub.add_parser(name, help=f"{name} a trained checkpoint")
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--config")
        e.add_argument("--library")
        e.add_argument("--out")
        e.add_argument("--command", default="0.5,0.9")
        e.add_argument("--seconds", type=float, default=15.0)
        if name == "eval":
            e.add_argument("--protocol", choices=("sets", "perturb", "rollout"), required=True)
            e.add_argument("--grid", help="coarse grid such as 3x3")
            e.add_argument("--beta", type=float, action="append")
            e.add_argument("--rollouts", type=int)
        e.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingCheckpoint, MissingArtifact) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (NonFiniteLoss, NumericalBlowup, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
