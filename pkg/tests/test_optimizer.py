"""Tests for the multi-seed optimizer and grasp result files."""

import numpy as np
import pytest
from numpy.random import default_rng

from springgrasp.objective import DecisionVars, EnergyWeights, total_energy
from springgrasp.optimizer import (
    OptimizedGrasp,
    OptimizerOptions,
    default_gains,
    grasp_to_dict,
    initial_seeds,
    is_feasible,
    load_grasp_dict,
    optimize_seed,
    plan,
    save_grasp,
    seed_decision_vars,
)
from springgrasp.pointcloud import oriented_bbox


@pytest.fixture(scope="module")
def seed_vars(sphere_cloud, hand):
    pose = initial_seeds(oriented_bbox(sphere_cloud), hand)[0]
    return seed_decision_vars(hand, pose)


@pytest.fixture(scope="module")
def short_opts():
    return OptimizerOptions(max_iterations=40, repair_iterations=20)


class TestOptions:
    def test_defaults_valid(self):
        OptimizerOptions()

    def test_bad_step(self):
        with pytest.raises(ValueError):
            OptimizerOptions(step=0.0)

    def test_bad_decay(self):
        with pytest.raises(ValueError):
            OptimizerOptions(decay=1.0)

    def test_bad_iterations(self):
        with pytest.raises(ValueError):
            OptimizerOptions(max_iterations=0)


class TestSeeding:
    def test_default_gains(self):
        np.testing.assert_allclose(default_gains(4), [80.0, 80.0, 80.0, 160.0])

    def test_seed_targets_halfway_to_centroid(self, hand, sphere_cloud):
        pose = initial_seeds(oriented_bbox(sphere_cloud), hand)[0]
        from springgrasp.hand import forward_kinematics

        fk = forward_kinematics(hand, pose)
        centroid = fk.fingertips.mean(axis=0)
        vars = seed_decision_vars(hand, pose)
        np.testing.assert_allclose(vars.targets,
                                   0.5 * (fk.fingertips + centroid),
                                   atol=1e-12)

    def test_seed_gains_are_defaults(self, seed_vars, hand):
        np.testing.assert_allclose(seed_vars.gains,
                                   default_gains(hand.n_fingers))


class TestFeasibility:
    def _grasp_like(self, seed_vars, sphere_model, hand, **overrides):
        bd = total_energy(seed_vars, sphere_model, hand, EnergyWeights())
        from dataclasses import replace

        return replace(bd, **overrides)

    def test_requires_nonnegative_margins(self, seed_vars, sphere_model, hand):
        bd = self._grasp_like(seed_vars, sphere_model, hand,
                              margins_t0=np.array([0.1, 0.2, -0.01, 0.3]),
                              margins_teq=np.full(4, 0.1),
                              terms={"col": 0.0})
        assert not is_feasible(bd)

    def test_requires_zero_collision(self, seed_vars, sphere_model, hand):
        bd = self._grasp_like(seed_vars, sphere_model, hand,
                              margins_t0=np.full(4, 0.1),
                              margins_teq=np.full(4, 0.1),
                              terms={"col": 5.0})
        assert not is_feasible(bd)

    def test_accepts_margins_and_no_collision(self, seed_vars, sphere_model,
                                              hand):
        bd = self._grasp_like(seed_vars, sphere_model, hand,
                              margins_t0=np.full(4, 0.0),
                              margins_teq=np.full(4, 0.2),
                              terms={"col": 0.0})
        assert is_feasible(bd)


class TestOptimizeSeed:
    def test_energy_decreases(self, seed_vars, sphere_model, hand, short_opts):
        w = EnergyWeights()
        grasp = optimize_seed(seed_vars.copy(), sphere_model, hand, w,
                              short_opts)
        trace = grasp.energy_trace
        assert len(trace) > 5
        assert trace[-1] < trace[0]

    def test_deterministic(self, seed_vars, sphere_model, hand, short_opts):
        w = EnergyWeights()
        a = optimize_seed(seed_vars.copy(), sphere_model, hand, w, short_opts)
        b = optimize_seed(seed_vars.copy(), sphere_model, hand, w, short_opts)
        np.testing.assert_array_equal(a.vars.flatten(), b.vars.flatten())
        assert a.breakdown.total == b.breakdown.total

    def test_divergent_seed_reported(self, seed_vars, sphere_model, hand,
                                     short_opts):
        bad = seed_vars.copy()
        bad.log_gains = np.full(hand.n_fingers, 400.0)  # exp overflow
        grasp = optimize_seed(bad, sphere_model, hand, EnergyWeights(),
                              short_opts)
        assert grasp.diverged
        assert not grasp.feasible

    def test_worst_margin_property(self, seed_vars, sphere_model, hand,
                                   short_opts):
        grasp = optimize_seed(seed_vars.copy(), sphere_model, hand,
                              EnergyWeights(), short_opts)
        expected = min(grasp.breakdown.margins_t0.min(),
                       grasp.breakdown.margins_teq.min())
        assert grasp.worst_margin == pytest.approx(expected)


class TestPlan:
    def test_seed_count_contract(self, sphere_cloud, hand, short_opts):
        res = plan(sphere_cloud, hand, opts=short_opts, n_seeds=2)
        assert len(res.grasps) == 2
        assert [g.seed_index for g in res.grasps] == [0, 1]

    def test_ranked_subset_sorted(self, sphere_cloud, hand, short_opts):
        res = plan(sphere_cloud, hand, opts=short_opts, n_seeds=3)
        assert all(g.feasible for g in res.ranked)
        energies = [g.breakdown.total for g in res.ranked]
        assert energies == sorted(energies)

    def test_diagnostics_shape(self, sphere_cloud, hand, short_opts):
        res = plan(sphere_cloud, hand, opts=short_opts, n_seeds=2)
        diags = res.diagnostics()
        assert len(diags) == 2
        for d in diags:
            assert {"seed", "feasible", "diverged", "worst_margin",
                    "collision_residual", "energy"} <= set(d)

    def test_deterministic_ranking(self, sphere_cloud, hand, short_opts):
        a = plan(sphere_cloud, hand, opts=short_opts, n_seeds=2)
        b = plan(sphere_cloud, hand, opts=short_opts, n_seeds=2)
        assert [g.breakdown.total for g in a.grasps] == \
            [g.breakdown.total for g in b.grasps]


class TestResultFiles:
    def test_roundtrip(self, seed_vars, sphere_model, hand, short_opts,
                       tmp_path):
        w = EnergyWeights()
        grasp = optimize_seed(seed_vars.copy(), sphere_model, hand, w,
                              short_opts)
        path = str(tmp_path / "grasp.json")
        save_grasp(grasp, w, path)
        data = load_grasp_dict(path)
        np.testing.assert_allclose(data["q_init"], grasp.vars.q)
        np.testing.assert_allclose(data["targets"], grasp.vars.targets)
        np.testing.assert_allclose(data["gains"], grasp.vars.gains)
        np.testing.assert_allclose(data["margins_t0"],
                                   grasp.breakdown.margins_t0)
        assert data["mu"] == w.mu
        assert data["feasible"] == grasp.feasible

    def test_quaternion_matches_rotation(self, seed_vars, sphere_model, hand,
                                         short_opts):
        from scipy.spatial.transform import Rotation

        w = EnergyWeights()
        grasp = optimize_seed(seed_vars.copy(), sphere_model, hand, w,
                              short_opts)
        data = grasp_to_dict(grasp, w)
        rot = Rotation.from_quat(data["equilibrium_quat_xyzw"]).as_matrix()
        np.testing.assert_allclose(rot, grasp.breakdown.equilibrium_rotation,
                                   atol=1e-12)

    def test_load_rejects_non_result(self, tmp_path):
        from springgrasp.errors import SpringGraspError

        path = tmp_path / "junk.json"
        path.write_text("{\"hello\": 1}")
        with pytest.raises(SpringGraspError, match="not a grasp result"):
            load_grasp_dict(str(path))

    def test_load_rejects_bad_version(self, seed_vars, sphere_model, hand,
                                      short_opts, tmp_path):
        import json

        w = EnergyWeights()
        grasp = optimize_seed(seed_vars.copy(), sphere_model, hand, w,
                              short_opts)
        data = grasp_to_dict(grasp, w)
        data["schema_version"] = 99
        path = tmp_path / "grasp.json"
        path.write_text(json.dumps(data))
        with pytest.raises(Exception, match="schema version"):
            load_grasp_dict(str(path))
