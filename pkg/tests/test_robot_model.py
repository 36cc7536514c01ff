import copy

import numpy as np
import pytest

from wbmpc.robot.biped import default_biped_dict
from wbmpc.robot.model import ModelError, RobotModel


def test_biped_dimensions(biped):
    assert biped.nact == 19
    assert biped.nq == 26
    assert biped.nv == 25
    assert len(biped.upper_body_joints) == 7  # 3 waist + 4 shoulder


def test_total_mass_is_link_sum(biped):
    assert biped.total_mass == pytest.approx(np.sum(biped.mass), rel=1e-12)
    assert biped.total_mass == pytest.approx(100.0, abs=1e-9)


def test_tree_is_ordered_and_single_rooted(biped):
    assert biped.parent[0] == -1
    assert np.all(biped.parent[1:] < np.arange(1, biped.njoint))
    assert np.all(biped.jtype[1:] == 1)


def test_nominal_feet_on_ground_under_com(biped):
    placements, com = biped.forward_kinematics(biped.nominal_q)
    for foot in ("right_foot", "left_foot"):
        assert placements[foot][2, 3] == pytest.approx(0.0, abs=1e-12)
        assert placements[foot][0, 3] == pytest.approx(com[0], abs=1e-9)
    assert biped.z_c == pytest.approx(com[2], abs=1e-12)


def test_json_roundtrip(tmp_path, biped):
    import json

    path = tmp_path / "model.json"
    path.write_text(json.dumps(default_biped_dict()))
    m = RobotModel.from_json(str(path))
    assert m.joint_names == biped.joint_names
    np.testing.assert_allclose(m.nominal_q, biped.nominal_q)


@pytest.mark.parametrize(
    "mutate, path_fragment",
    [
        (lambda d: d["links"][3].update(mass=-1.0), ".mass"),
        (lambda d: d["links"][3].update(inertia=[1, 1, 1, 2, 0, 0]), ".inertia"),
        (lambda d: d["joints"][2].update(parent="nonexistent"), ".parent"),
        (lambda d: d["joints"][2].update(axis=[0, 0, 0]), ".axis"),
        (lambda d: d["frames"].pop("left_foot"), "frames.left_foot"),
        (lambda d: d["limits"]["torque"].update(default=[100.0, -100.0]), "limits.torque"),
        (lambda d: d["constants"].update(total_mass=90.0), "total_mass"),
        (lambda d: d["joints"].__setitem__(0, {**d["joints"][0], "type": "revolute", "parent": "torso",
                                               "axis": [0, 0, 1]}), "joints"),
    ],
)
def test_loader_reports_first_violation_with_path(mutate, path_fragment):
    doc = default_biped_dict()
    mutate(doc)
    with pytest.raises(ModelError) as exc:
        RobotModel.from_dict(doc)
    assert path_fragment in str(exc.value)


def test_inertia_accepts_stated_total_mass():
    doc = default_biped_dict()
    doc["constants"]["total_mass"] = 100.0
    RobotModel.from_dict(doc)  # should not raise


def test_check_q_rejects_bad_inputs(biped):
    with pytest.raises(ValueError):
        biped.check_q(np.zeros(biped.nq - 1))
    q = biped.nominal_q.copy()
    q[3:7] *= 1.1
    with pytest.raises(ValueError):
        biped.check_q(q)


def test_configuration_increment_roundtrip(biped, rng):
    q = biped.random_configuration(rng)
    d = rng.normal(size=biped.nv) * 0.3
    q2 = biped.integrate_q(q, d)
    np.testing.assert_allclose(biped.difference_q(q, q2), d, atol=1e-10)
    # dim(qv) = dim(q) - 1
    assert d.shape[0] == q.shape[0] - 1
