"""Built-in parametric biped: 19 actuated joints (12 leg, 3 waist, 4 shoulder)
on a floating pelvis, roughly 100 kg total.

Link masses and segment lengths are generic humanoid values, not measurements
of any particular robot; everything can be overridden by loading a JSON model
file with the same schema.  The nominal posture stands with slightly bent
knees; the builder solves the base height so the soles touch z = 0 and places
the foot-center frames under the standing COM so the nominal pose is a static
equilibrium.
"""

from __future__ import annotations

import copy

import numpy as np

KNEE_BEND = 0.3  # rad; hip -b, knee +2b, ankle -b keeps the foot flat
SOLE_DROP = 0.10  # m from ankle axis down to the sole plane


def _link(name, mass, com, inertia):
    return {"name": name, "mass": mass, "com": list(com), "inertia": list(inertia)}


def _joint(name, parent, child, xyz, axis):
    return {
        "name": name,
        "type": "revolute",
        "parent": parent,
        "child": child,
        "axis": list(axis),
        "origin": {"xyz": list(xyz), "rpy": [0.0, 0.0, 0.0]},
    }


def _leg(side: str, sign: float):
    s = side
    links = [
        _link(f"{s}_hip_yaw_link", 1.5, (0, 0, -0.02), [0.008, 0.008, 0.008, 0, 0, 0]),
        _link(f"{s}_hip_roll_link", 1.5, (0, 0, -0.02), [0.008, 0.008, 0.008, 0, 0, 0]),
        _link(f"{s}_thigh", 7.0, (0, 0, -0.175), [0.10, 0.10, 0.02, 0, 0, 0]),
        _link(f"{s}_shank", 4.0, (0, 0, -0.175), [0.06, 0.06, 0.01, 0, 0, 0]),
        _link(f"{s}_ankle_link", 1.2, (0, 0, -0.02), [0.004, 0.004, 0.004, 0, 0, 0]),
        _link(f"{s}_foot", 1.8, (0.02, 0, -0.05), [0.004, 0.008, 0.010, 0, 0, 0]),
    ]
    joints = [
        _joint(f"{s}_hip_yaw", "pelvis", f"{s}_hip_yaw_link", (0, sign * 0.10, -0.08), (0, 0, 1)),
        _joint(f"{s}_hip_roll", f"{s}_hip_yaw_link", f"{s}_hip_roll_link", (0, 0, -0.04), (1, 0, 0)),
        _joint(f"{s}_hip_pitch", f"{s}_hip_roll_link", f"{s}_thigh", (0, 0, -0.04), (0, 1, 0)),
        _joint(f"{s}_knee_pitch", f"{s}_thigh", f"{s}_shank", (0, 0, -0.35), (0, 1, 0)),
        _joint(f"{s}_ankle_pitch", f"{s}_shank", f"{s}_ankle_link", (0, 0, -0.35), (0, 1, 0)),
        _joint(f"{s}_ankle_roll", f"{s}_ankle_link", f"{s}_foot", (0, 0, 0), (1, 0, 0)),
    ]
    return links, joints


def _arm(side: str, sign: float):
    s = side
    links = [
        _link(f"{s}_shoulder_link", 2.5, (0, sign * 0.05, 0), [0.01, 0.01, 0.01, 0, 0, 0]),
        _link(f"{s}_upper_arm", 3.2, (0, 0, -0.15), [0.05, 0.05, 0.008, 0, 0, 0]),
    ]
    joints = [
        _joint(f"{s}_shoulder_pitch", "torso", f"{s}_shoulder_link", (0, sign * 0.22, 0.32), (0, 1, 0)),
        _joint(f"{s}_shoulder_roll", f"{s}_shoulder_link", f"{s}_upper_arm", (0, sign * 0.10, 0), (1, 0, 0)),
    ]
    return links, joints


def _base_dict() -> dict:
    links = [
        _link("pelvis", 14.0, (0, 0, 0.02), [0.20, 0.15, 0.18, 0, 0, 0]),
        _link("waist_link_1", 2.0, (0, 0, 0.05), [0.05, 0.05, 0.05, 0, 0, 0]),
        _link("waist_link_2", 2.0, (0, 0, 0.05), [0.05, 0.05, 0.05, 0, 0, 0]),
        _link("torso", 36.6, (0, 0, 0.18), [1.00, 0.80, 0.50, 0, 0, 0]),
    ]
    joints = [
        {"name": "floating_base", "type": "floating", "parent": None, "child": "pelvis",
         "origin": {"xyz": [0, 0, 0], "rpy": [0, 0, 0]}},
        _joint("waist_yaw", "pelvis", "waist_link_1", (0, 0, 0.15), (0, 0, 1)),
        _joint("waist_roll", "waist_link_1", "waist_link_2", (0, 0, 0.05), (1, 0, 0)),
        _joint("waist_pitch", "waist_link_2", "torso", (0, 0, 0.05), (0, 1, 0)),
    ]
    for side, sign in (("right", -1.0), ("left", 1.0)):
        l, j = _arm(side, sign)
        links += l
        joints += j
    for side, sign in (("right", -1.0), ("left", 1.0)):
        l, j = _leg(side, sign)
        links += l
        joints += j

    nominal_joints = {}
    for s in ("right", "left"):
        nominal_joints[f"{s}_hip_pitch"] = -KNEE_BEND
        nominal_joints[f"{s}_knee_pitch"] = 2 * KNEE_BEND
        nominal_joints[f"{s}_ankle_pitch"] = -KNEE_BEND

    return {
        "links": links,
        "joints": joints,
        "frames": {
            "pelvis": {"parent": "pelvis", "xyz": [0, 0, 0]},
            "right_foot": {"parent": "right_foot", "xyz": [0.0, 0, -SOLE_DROP]},
            "left_foot": {"parent": "left_foot", "xyz": [0.0, 0, -SOLE_DROP]},
        },
        "limits": {
            "torque": {
                "default": [-300.0, 300.0],
                "right_ankle_pitch": [-200.0, 200.0], "right_ankle_roll": [-200.0, 200.0],
                "left_ankle_pitch": [-200.0, 200.0], "left_ankle_roll": [-200.0, 200.0],
                "waist_yaw": [-200.0, 200.0], "waist_roll": [-200.0, 200.0], "waist_pitch": [-200.0, 200.0],
                "right_shoulder_pitch": [-100.0, 100.0], "right_shoulder_roll": [-100.0, 100.0],
                "left_shoulder_pitch": [-100.0, 100.0], "left_shoulder_roll": [-100.0, 100.0],
            }
        },
        "constants": {"gravity": 9.81},
        "groups": {
            "upper_body": [
                "waist_yaw", "waist_roll", "waist_pitch",
                "right_shoulder_pitch", "right_shoulder_roll",
                "left_shoulder_pitch", "left_shoulder_roll",
            ]
        },
        "nominal": {"base_xyz": [0, 0, 1.0], "joints": nominal_joints},
    }


def default_biped_dict() -> dict:
    """Finished model document: base height and foot frames solved numerically."""
    from wbmpc.robot import algorithms as alg
    from wbmpc.robot.model import RobotModel

    doc = _base_dict()
    draft = RobotModel.from_dict(copy.deepcopy(doc))
    q0 = draft.nominal_q
    kin = alg.fk_pass(draft, q0[None])
    sole = alg.frame_placement(draft, kin, "right_foot")[0]
    # drop the base so the soles sit exactly on z = 0
    doc["nominal"]["base_xyz"][2] = float(q0[2] - sole[2, 3])
    # put the foot-center frame under the standing COM (static equilibrium)
    com = alg.com_from_kin(draft, kin)[0]
    dx = float(com[0] - sole[0, 3])
    doc["frames"]["right_foot"]["xyz"][0] = dx
    doc["frames"]["left_foot"]["xyz"][0] = dx
    return doc
