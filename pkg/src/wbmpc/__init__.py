"""Whole-body MPC toolkit for bipedal walking.

Pieces: a floating-base rigid-body layer, a point-mass-plus-flywheel walking
model coupled to full-body kinematics, gait reference generation, a
box-constrained feasibility-driven DDP solver, a ZMP-distributing whole-body
controller, a learned warm-start memory, and a closed-loop simulation harness.
"""

__version__ = "0.1.0"
