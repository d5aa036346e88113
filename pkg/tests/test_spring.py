import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from springgrasp.errors import DegenerateRotationError, UndefinedMarginError
from springgrasp.spring import (LOG_BRANCH_DELTA, SpringSystem,
                                contact_margin, contact_margins,
                                fingertips_at_equilibrium, margin_energy_term,
                                solve_equilibrium, spring_force,
                                spring_potential)

from conftest import random_spring_system


def brute_force_best(sys, n_rot=2000, rng=None):
    """Oracle: random rotations, each with its closed-form best translation."""
    rng = rng or np.random.default_rng(0)
    w = sys.gains / sys.gains.sum()
    po = sys.object_frame_contacts()
    best = np.inf
    rots = Rotation.random(n_rot, random_state=rng).as_matrix()
    rots = np.concatenate([rots, np.eye(3)[None]])
    for rot in rots:
        # optimal translation for a fixed rotation: weighted residual mean
        trans = w @ (sys.targets - po @ rot.T)
        best = min(best, spring_potential(sys, rot, trans))
    return best


class TestSolveEquilibrium:
    def test_beats_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            sys = random_spring_system(rng)
            eq = solve_equilibrium(sys)
            assert eq.energy <= brute_force_best(sys, rng=rng) + 1e-9

    def test_targets_equal_contacts_is_identity(self):
        rng = np.random.default_rng(2)
        p = rng.uniform(-1, 1, size=(4, 3))
        sys = SpringSystem(contacts=p, targets=p.copy(),
                           gains=np.full(4, 50.0))
        eq = solve_equilibrium(sys)
        np.testing.assert_allclose(eq.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(eq.translation, 0.0, atol=1e-12)
        assert eq.energy == pytest.approx(0.0, abs=1e-15)

    def test_pure_translation_offset(self):
        rng = np.random.default_rng(3)
        p = rng.uniform(-1, 1, size=(5, 3))
        shift = np.array([0.03, -0.01, 0.02])
        sys = SpringSystem(contacts=p, targets=p + shift,
                           gains=rng.uniform(10, 100, size=5))
        eq = solve_equilibrium(sys)
        np.testing.assert_allclose(eq.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(eq.translation, shift, atol=1e-9)

    def test_known_rigid_motion_recovered(self):
        rng = np.random.default_rng(4)
        p = rng.uniform(-1, 1, size=(6, 3))
        rot = Rotation.from_rotvec([0.3, -0.2, 0.5]).as_matrix()
        trans = np.array([0.05, 0.02, -0.04])
        sys = SpringSystem(contacts=p, targets=p @ rot.T + trans,
                           gains=rng.uniform(10, 500, size=6))
        eq = solve_equilibrium(sys)
        np.testing.assert_allclose(eq.rotation, rot, atol=1e-9)
        np.testing.assert_allclose(eq.translation, trans, atol=1e-9)
        assert eq.energy == pytest.approx(0.0, abs=1e-12)

    def test_gain_weighting_matters(self):
        # two configurations differing only in gains must generally give
        # different equilibria; the unweighted algorithm cannot see this
        p = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]])
        o = np.array([[1.0, 0.2, 0], [-1.0, -0.2, 0], [0.3, 1.0, 0]])
        eq_a = solve_equilibrium(SpringSystem(p, o, np.array([10.0, 10, 10])))
        eq_b = solve_equilibrium(SpringSystem(p, o, np.array([500.0, 10, 10])))
        assert np.abs(eq_a.rotation - eq_b.rotation).max() > 1e-4

    def test_collinear_contacts_degenerate(self):
        p = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
        sys = SpringSystem(contacts=p, targets=p + [0, 0.1, 0],
                           gains=np.full(3, 10.0))
        with pytest.raises(DegenerateRotationError):
            solve_equilibrium(sys)

    def test_uniform_gain_scaling_invariance(self):
        rng = np.random.default_rng(5)
        sys = random_spring_system(rng)
        scaled = SpringSystem(sys.contacts, sys.targets, sys.gains * 7.5)
        eq1, eq2 = solve_equilibrium(sys), solve_equilibrium(scaled)
        np.testing.assert_allclose(eq1.rotation, eq2.rotation, atol=1e-9)
        np.testing.assert_allclose(eq1.translation, eq2.translation,
                                   atol=1e-9)

    def test_rigid_frame_equivariance(self):
        rng = np.random.default_rng(6)
        sys = random_spring_system(rng)
        eq = solve_equilibrium(sys)
        g_rot = Rotation.from_rotvec([0.1, 0.7, -0.3]).as_matrix()
        g_trans = np.array([0.5, -0.2, 0.1])
        moved = SpringSystem(sys.contacts @ g_rot.T + g_trans,
                             sys.targets @ g_rot.T + g_trans, sys.gains,
                             rotation0=g_rot @ sys.rotation0,
                             translation0=g_rot @ sys.translation0 + g_trans)
        eq_m = solve_equilibrium(moved)
        np.testing.assert_allclose(eq_m.rotation @ moved.rotation0.T,
                                   g_rot @ (eq.rotation @ sys.rotation0.T)
                                   @ g_rot.T, atol=1e-9)
        np.testing.assert_allclose(
            eq_m.fingertips, eq.fingertips @ g_rot.T + g_trans, atol=1e-9)


class TestFingertips:
    def test_matches_equilibrium_tips(self):
        rng = np.random.default_rng(7)
        sys = random_spring_system(rng)
        eq = solve_equilibrium(sys)
        tips = fingertips_at_equilibrium(sys, eq.rotation, eq.translation)
        np.testing.assert_allclose(tips, eq.fingertips, atol=1e-12)

    def test_identity_pose_returns_contacts(self):
        rng = np.random.default_rng(8)
        sys = random_spring_system(rng)
        tips = fingertips_at_equilibrium(sys, np.eye(3), np.zeros(3))
        np.testing.assert_allclose(tips, sys.contacts, atol=1e-12)


class TestSpringForce:
    def test_static_force(self):
        f = spring_force([0.1, 0, 0], [0.0, 0, 0], np.zeros(3), 100.0)
        np.testing.assert_allclose(f, [10.0, 0, 0])

    def test_damping_term(self):
        f = spring_force(np.zeros(3), np.zeros(3), [1.0, 0, 0], 100.0)
        np.testing.assert_allclose(f, [-20.0, 0, 0])

    def test_rejects_nonpositive_gain(self):
        with pytest.raises(ValueError):
            spring_force(np.zeros(3), np.zeros(3), np.zeros(3), 0.0)


class TestContactMargin:
    def test_perfectly_inward_force(self):
        n = np.array([0.0, 0, 1.0])
        eps = contact_margin(-n, n, mu=0.5)
        assert eps == pytest.approx(1.0 - 1.0 / np.sqrt(1.25))

    def test_boundary_of_cone_is_zero(self):
        # force tilted from -n by exactly the half cone angle atan(mu)
        mu = 0.5
        ang = np.arctan(mu)
        force = np.array([np.sin(ang), 0.0, -np.cos(ang)])
        eps = contact_margin(force, [0.0, 0, 1.0], mu)
        assert eps == pytest.approx(0.0, abs=1e-12)

    def test_zero_force_raises(self):
        with pytest.raises(UndefinedMarginError):
            contact_margin(np.zeros(3), [0, 0, 1.0], 0.5)
        with pytest.raises(UndefinedMarginError):
            contact_margins(np.zeros((3, 3)), np.tile([0, 0, 1.0], (3, 1)),
                            0.5)

    @given(st.floats(0.05, 5.0), st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_margin_range_property(self, mu, seed):
        rng = np.random.default_rng(seed)
        f = rng.normal(size=3)
        if np.linalg.norm(f) < 1e-6:
            return
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        eps = contact_margin(f, n, mu)
        a = 1.0 / np.sqrt(1.0 + mu ** 2)
        assert -1.0 - a - 1e-12 <= eps <= 1.0 - a + 1e-12

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(9)
        f = rng.normal(size=(5, 3))
        n = rng.normal(size=(5, 3))
        n /= np.linalg.norm(n, axis=1)[:, None]
        vec = contact_margins(f, n, 0.5)
        for i in range(5):
            assert vec[i] == pytest.approx(contact_margin(f[i], n[i], 0.5))


class TestMarginEnergy:
    def test_log_branch_values(self):
        assert margin_energy_term(0.0) == pytest.approx(0.0)
        assert margin_energy_term(np.e - 1.0) == pytest.approx(-1.0)

    def test_branch_continuity(self):
        d = LOG_BRANCH_DELTA
        switch = -1.0 + d
        below = margin_energy_term(switch - 1e-9)
        above = margin_energy_term(switch + 1e-9)
        assert abs(below - above) < 1e-4

    def test_monotone_decreasing_everywhere(self):
        eps = np.linspace(-1.9, 0.1, 4001)
        vals = margin_energy_term(eps)
        assert np.all(np.diff(vals) < 0)

    def test_finite_on_full_range(self):
        vals = margin_energy_term(np.linspace(-2.0, 1.0, 100))
        assert np.isfinite(vals).all()


class TestSpringSystemValidation:
    def test_too_few_fingers(self):
        with pytest.raises(ValueError):
            SpringSystem(np.zeros((2, 3)), np.zeros((2, 3)), np.ones(2))

    def test_negative_gain(self):
        with pytest.raises(ValueError):
            SpringSystem(np.eye(3), np.eye(3), np.array([1.0, -1.0, 1.0]))

    def test_bad_rotation0(self):
        with pytest.raises(ValueError):
            SpringSystem(np.eye(3), np.eye(3), np.ones(3),
                         rotation0=np.eye(3) * 2.0)
