"""
A short training run and two probes
===================================

Train a small policy for a few PPO iterations, then put it through the two
evaluation protocols: a coarse feasible-set sweep and the perturbation study.
Forty iterations is far too few to walk; a few hundred are needed, which is
what the ``gaitforge train`` command does by default.
"""

import numpy as np

from gaitforge.env import BipedEnv
from gaitforge.eval import CommandGrid, PerturbationConfig, perturbation_sweep, sweep_sets
from gaitforge.gaitlib import build_library, default_axes
from gaitforge.learner import PpoConfig, final_return, train
from gaitforge.model import default_model
from gaitforge.randomization import Curriculum

lib = build_library(default_model(), *default_axes())
cfg = PpoConfig(iterations=40, workers=8, rollout_steps=256, seed=1)

result = train(cfg, lambda n: BipedEnv(lib, n=n), Curriculum(20),
               log=lambda line: print(line) if line.startswith(("iter    0", "iter   39")) else None)
print("curriculum level at the end:", result.curve[-1].level)
print("mean return over the last iterations:", round(final_return(result.curve), 2))

###############################################################################
# Feasible set: which commands can the policy hold for 15 s from a standing start?

grid = CommandGrid((-0.5, 0.0, 0.5), (0.75, 0.85))
sets = sweep_sets(result.policy, grid, BipedEnv(lib, n=1), seed=1)
for o in sets.outcomes:
    print(f"vx={o.vx:+.1f} hz={o.hz:.2f} survived={o.survived} failure tick={o.failure_tick}")

###############################################################################
# Perturbation study: random pelvis pushes at growing intensity, returns
# normalized by the push-free run over the same seeds. A policy this young
# usually falls before the first push arrives, so expect the rows to agree.

pcfg = PerturbationConfig(rollouts=8, ticks=300)
for row in perturbation_sweep(result.policy, BipedEnv(lib, n=1), [0.0, 0.5, 1.0], pcfg, seed=1):
    print(f"beta {row.beta:.1f}: normalized return {row.normalized:.3f}"
          f" (median {row.median:.3f}, spread {np.ptp(row.per_rollout):.3f})")
