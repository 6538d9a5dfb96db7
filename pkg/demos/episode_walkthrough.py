"""
Anatomy of an episode
=====================

Step the walking environment with a test double that sits exactly on the
reference motion, then knock it off the reference and watch the seven reward
terms react. The robot is simulated at 2 kHz underneath a 30 Hz policy tick.
"""

import numpy as np

from gaitforge.env import TERM_NAMES, BipedEnv
from gaitforge.eval import KinematicOracle
from gaitforge.gaitlib import build_library, default_axes
from gaitforge.model import default_model

lib = build_library(default_model(), *default_axes())
env = BipedEnv(lib, n=1)
obs = env.reset([0])
print("policy input", obs.shape, " value input", env.value_input().shape)
print("first command vx=%.2f hz=%.3f" % tuple(env.cmd[0]))

###############################################################################
# The oracle reads the current reference out of the goal vector and then
# teleports the robot onto it after each tick, so tracking terms stay near 1.

oracle = KinematicOracle()
for tick in range(1, 481):
    obs, r, done, info = env.step(oracle.act(obs))
    oracle.after_step(env)
    obs = env.policy_input()
    if tick % 120 == 0:
        terms = "  ".join(f"{k} {v:.3f}" for k, v in zip(TERM_NAMES, info["terms"][0]))
        print(f"tick {tick}: reward {r[0]:.3f} cmd {np.round(env.cmd[0], 3)}\n    {terms}")

###############################################################################
# Commands switch every 240 ticks (8 s). Now hold a stiff pose that ignores
# the reference and let physics take over until a termination fires.

pose = env.q[0, 3:].copy()
for tick in range(1, 2000):
    obs, r, done, info = env.step(pose[None])
    if done[0]:
        print(f"terminated after {tick} more ticks: {info['reasons'][0]}")
        break
