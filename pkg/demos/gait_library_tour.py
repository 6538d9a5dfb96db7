"""
A tour of the gait library
==========================

Build the 11 x 11 library of walking gaits, pull one gait out by
interpolation and check that its joint trajectory really puts the feet
where the foot-path design said they would go.
"""

import numpy as np

from gaitforge.gaitlib import (GaitConfig, GaitParams, build_library, default_axes, foot_paths,
                               query, reference_frame)
from gaitforge.model import default_model, forward_kinematics

model = default_model()
vx_axis, hz_axis = default_axes()
lib = build_library(model, vx_axis, hz_axis)
print(f"{len(lib)} gaits, step period {lib.step_period} s")
print("worst fit residual:", float(lib.fit_residuals.max()))

###############################################################################
# Off-grid commands are blended from the four surrounding gaits.

p = GaitParams(0.55, 0.83)
gait = query(lib, p)

# a full stride is two steps, phase 0..2; print a handful of reference frames
for phase in np.linspace(0.0, 2.0, 9)[:-1]:
    pos, vel = reference_frame(gait, phase)
    print(f"phase {phase:.2f}  q_m {np.round(pos, 3)}  qd_m {np.round(vel, 2)}")

###############################################################################
# Forward kinematics closes the loop: the stance foot should follow the
# designed path relative to the pelvis during the right-stance step.

s = np.linspace(0.0, 1.0, 6)
sx, sz, wx, wz = foot_paths(p, GaitConfig(), s)
for k, sk in enumerate(s):
    pos, _ = reference_frame(gait, min(sk, 1 - 1e-12))
    fk = forward_kinematics(model, [0.0, p.hz, 0.0, *pos])
    err = np.hypot(fk["foot_R"][0] - sx[k], fk["foot_R"][1] - (p.hz + sz[k]))
    print(f"s={sk:.1f}  stance foot error {err * 1000:.1f} mm")
