import numpy as np
import pytest

from octoarm.errors import DegenerateFrame, OctoarmError
from octoarm.muscles import ActivationProfile, build_muscles
from octoarm.rod import build_properties
from octoarm.se3 import Grid, Pose, reconstruct_pose
from octoarm.shaping import (backward_costate, fb_solve, full_costate_backward,
                             hamiltonian_gradient, _evaluate)
from octoarm.statics import solve_equilibrium
from octoarm.tasks import Cylinder, GraspTask, ReachTask, TaskObjective, reach_frame


@pytest.fixture(scope="module")
def system():
    grid = Grid(100, 0.2)
    props = build_properties(grid)
    mset = build_muscles(props)
    q0 = Pose(np.zeros(3), np.column_stack([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0],
                                            [1.0, 0.0, 0.0]]))
    pose0 = reconstruct_pose(q0, *props.rest_strain(), grid)
    return grid, props, mset, q0, pose0


@pytest.fixture(scope="module")
def bent_state(system):
    grid, props, mset, q0, _ = system
    rng = np.random.default_rng(0)
    alpha = ActivationProfile(np.clip(rng.random((7, 100)) * 0.3, 0.0, 1.0))
    eq = solve_equilibrium(props, mset, alpha)
    pose = reconstruct_pose(q0, eq.nu, eq.kappa, grid)
    return alpha, eq, pose


class TestReachFrame:
    def test_in_plane_target(self, system):
        *_, pose0 = system
        q_star = reach_frame(np.array([0.10, 0.15, 0.0]), pose0)
        d1, d2, d3 = q_star.T
        assert abs(d3[2]) < 1e-12          # d3 in the e1-e2 plane
        assert np.allclose(np.abs(d2), [0.0, 0.0, 1.0], atol=1e-12)
        assert np.allclose(q_star.T @ q_star, np.eye(3), atol=1e-12)

    def test_orthonormal_random_targets(self, system):
        *_, pose0 = system
        rng = np.random.default_rng(1)
        for _ in range(20):
            target = rng.uniform(-0.15, 0.15, 3) + [0.05, 0.0, 0.0]
            if np.linalg.norm(np.cross(target, [1.0, 0.0, 0.0])) < 1e-4:
                continue
            q_star = reach_frame(target, pose0)
            assert np.abs(q_star.T @ q_star - np.eye(3)).max() < 1e-12
            assert np.linalg.det(q_star) == pytest.approx(1.0, abs=1e-12)

    def test_colinear_raises(self, system):
        *_, pose0 = system
        with pytest.raises(DegenerateFrame):
            reach_frame(np.array([0.5, 0.0, 0.0]), pose0)

    def test_colinear_fallback(self, system):
        *_, pose0 = system
        q_star = reach_frame(np.array([0.5, 0.0, 0.0]), pose0,
                             fallback_d2=pose0.Q[-1][:, 1])
        assert np.abs(q_star.T @ q_star - np.eye(3)).max() < 1e-12
        assert np.allclose(q_star[:, 2], [1.0, 0.0, 0.0])


class TestReachTerminal:
    def test_zero_at_target(self, system):
        *_, pose0 = system
        task = ReachTask(x_star=pose0.x[-1] + [0.0, 0.1, 0.0],
                         q_star=pose0.Q[-1])
        phi, gx, gq = task.terminal(task.x_star, task.q_star)
        assert phi == 0.0
        assert np.all(gx == 0.0) and np.all(gq == 0.0)

    def test_two_centimeter_offset_value(self, system):
        *_, pose0 = system
        q_l = pose0.Q[-1]
        task = ReachTask(x_star=pose0.x[-1] + [0.0, 0.02, 0.0], q_star=q_l,
                         mu_pos=1e6, mu_dir=1e3)
        phi, _, _ = task.terminal(pose0.x[-1], q_l)
        assert phi == pytest.approx(200.0)

    def test_gradients_match_fd(self, system):
        *_, pose0 = system
        task = ReachTask(x_star=np.array([0.01, 0.15, 0.06]),
                         q_star=reach_frame(np.array([0.01, 0.15, 0.06]), pose0))
        rng = np.random.default_rng(2)
        x = pose0.x[-1] + 0.01 * rng.standard_normal(3)
        q = pose0.Q[-1]
        phi, gx, gq = task.terminal(x, q)
        h = 1e-7
        for j in range(3):
            dx = np.zeros(3)
            dx[j] = h
            fd = (task.terminal(x + dx, q)[0] - task.terminal(x - dx, q)[0]) / (2 * h)
            assert abs(fd - gx[j]) < 1e-6 * max(1.0, abs(gx[j]))
        for i in range(3):
            for j in range(3):
                dq = np.zeros((3, 3))
                dq[i, j] = h
                fd = (task.terminal(x, q + dq)[0]
                      - task.terminal(x, q - dq)[0]) / (2 * h)
                assert abs(fd - gq[i, j]) < 1e-6 * max(1.0, abs(gq[i, j]))


class TestCylinder:
    def test_signed_distance_infinite_wall(self):
        # Tall upright cylinder through the origin, R = 2 cm.
        cyl = Cylinder(center=np.zeros(3), axis=[0.0, 0.0, 1.0], radius=0.02,
                       height=10.0)
        d, g = cyl.signed_distance(np.array([[0.03, 0.0, 0.0],
                                             [0.01, 0.0, 0.0]]))
        assert d[0] == pytest.approx(0.01)
        assert d[1] == pytest.approx(-0.01)
        assert np.allclose(g[0], [1.0, 0.0, 0.0])
        assert np.allclose(g[1], [1.0, 0.0, 0.0])

    def test_cap_distance(self):
        cyl = Cylinder(center=np.zeros(3), axis=[0.0, 0.0, 1.0], radius=0.02,
                       height=0.1)
        d, g = cyl.signed_distance(np.array([[0.0, 0.0, 0.08]]))
        assert d[0] == pytest.approx(0.03)
        assert np.allclose(g[0], [0.0, 0.0, 1.0])

    def test_corner_distance(self):
        cyl = Cylinder(center=np.zeros(3), axis=[0.0, 0.0, 1.0], radius=0.02,
                       height=0.1)
        d, _ = cyl.signed_distance(np.array([[0.05, 0.0, 0.09]]))
        assert d[0] == pytest.approx(np.hypot(0.03, 0.04))

    def test_gradient_matches_fd(self):
        cyl = Cylinder(center=[0.01, -0.02, 0.0], axis=[0.1, 0.2, 1.0],
                       radius=0.02, height=0.15)
        rng = np.random.default_rng(3)
        h = 1e-8
        for _ in range(30):
            x = rng.uniform(-0.08, 0.08, 3)
            d, g = cyl.signed_distance(x[None])
            fd = np.empty(3)
            for j in range(3):
                dx = np.zeros(3)
                dx[j] = h
                fd[j] = (cyl.signed_distance((x + dx)[None])[0][0]
                         - cyl.signed_distance((x - dx)[None])[0][0]) / (2 * h)
            assert np.allclose(g[0], fd, atol=1e-5)


class TestGraspLagrangian:
    @pytest.fixture()
    def task(self, system):
        _, props, *_ = system
        cyl = Cylinder(center=[0.06, -0.05, 0.02], axis=[0.0, 0.0, 1.0],
                       radius=0.02, height=0.15)
        return GraspTask(cylinder=cyl, x_star=np.array([0.06, -0.05, 0.02]),
                         wrap_start=0.06, radius_fn=props.radius_at)

    def test_zero_before_wrap_start(self, task):
        s = np.array([0.0, 0.03])
        x = np.array([[0.0, 0.0, 0.0], [0.2, 0.2, 0.2]])  # far from cylinder
        q = np.tile(np.eye(3), (2, 1, 1))
        val, lx, lq = task.lagrangian(s, x, q)
        assert np.all(val == 0.0) and np.all(lx == 0.0) and np.all(lq == 0.0)

    def test_zero_on_surface_with_aligned_sucker(self, task, system):
        _, props, *_ = system
        s = np.array([0.1])
        r_arm = props.radius_at(s[0])
        # Point at distance R + r(s) from the axis, in the z-plane of x*:
        # surface-to-surface gap (|x*-x| - r_arm) is then |x*-x| - r_arm.
        b_dir = np.array([1.0, 0.0, 0.0])
        x = task.x_star - (r_arm) * b_dir  # |x*-x| = r_arm -> gap = 0
        q = np.zeros((1, 3, 3))
        q[0, :, 0] = b_dir          # d1 points toward x*
        q[0, :, 1] = [0.0, 0.0, 1.0]
        q[0, :, 2] = np.cross(b_dir, [0.0, 0.0, 1.0])
        val, _, _ = task.lagrangian(s, x[None], q)
        # Task terms vanish; only penetration remains (point is inside).
        psi = task.violation(s, x[None])
        assert val[0] == pytest.approx(task.penalty_weight * psi[0] ** 2)

    def test_gradients_match_fd(self, task):
        rng = np.random.default_rng(4)
        h = 1e-8
        s = np.array([0.15])
        for _ in range(15):
            x = task.x_star + rng.uniform(-0.06, 0.06, 3)
            q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
            if np.linalg.det(q) < 0:
                q[:, 0] *= -1
            val, lx, lq = task.lagrangian(s, x[None], q[None])
            for j in range(3):
                dx = np.zeros(3)
                dx[j] = h
                fd = (task.lagrangian(s, (x + dx)[None], q[None])[0][0]
                      - task.lagrangian(s, (x - dx)[None], q[None])[0][0]) / (2 * h)
                assert abs(fd - lx[0, j]) < 2e-4 * max(1.0, abs(fd))
            for i in range(3):
                for j in range(3):
                    dq = np.zeros((3, 3))
                    dq[i, j] = h
                    fd = (task.lagrangian(s, x[None], (q + dq)[None])[0][0]
                          - task.lagrangian(s, x[None], (q - dq)[None])[0][0]) / (2 * h)
                    assert abs(fd - lq[0, i, j]) < 1e-5 * max(1.0, abs(fd))


class TestBackwardCostate:
    def test_pose_independent_objective_gives_zero(self, system, bent_state):
        grid, *_ = system
        _, eq, pose = bent_state
        costate = backward_costate(pose, eq.nu, eq.kappa, grid, TaskObjective())
        assert np.all(costate.n == 0.0)
        assert np.all(costate.m == 0.0)
        assert np.all(costate.lam == 0.0)

    def test_tip_at_target_zeroes_terminal_loads(self, system, bent_state):
        grid, *_ = system
        _, eq, pose = bent_state
        task = ReachTask(x_star=pose.x[-1].copy(), q_star=pose.Q[-1].copy())
        costate = backward_costate(pose, eq.nu, eq.kappa, grid, task)
        assert np.allclose(costate.n[-1], 0.0, atol=1e-12)
        assert np.allclose(costate.m[-1], 0.0, atol=1e-12)

    def test_transversality(self, system, bent_state):
        grid, props, *_ = system
        _, eq, pose = bent_state
        for objective in self._objectives(props, pose):
            costate = backward_costate(pose, eq.nu, eq.kappa, grid, objective)
            phi, phi_x, phi_q = objective.terminal(pose.x[-1], pose.Q[-1])
            scale = max(np.abs(phi_x).max(), np.abs(phi_q).max(), 1.0)
            assert np.abs(costate.lam[-1, :3, 3] + phi_x).max() < 1e-10 * scale
            assert np.abs(costate.lam[-1, :3, :3] + phi_q).max() < 1e-10 * scale

    @staticmethod
    def _objectives(props, pose0):
        reach = ReachTask(x_star=np.array([0.01, 0.15, 0.06]),
                          q_star=reach_frame(np.array([0.01, 0.15, 0.06]), pose0))
        cyl = Cylinder(center=[0.06, -0.05, 0.02], axis=[0.0, 0.0, 1.0],
                       radius=0.02, height=0.15)
        grasp = GraspTask(cylinder=cyl, x_star=np.array([0.06, -0.05, 0.02]),
                          wrap_start=0.06, radius_fn=props.radius_at)
        return reach, grasp

    def test_full_costate_equivalence(self, system, bent_state):
        grid, props, *_ = system
        _, eq, pose = bent_state
        for objective in self._objectives(props, pose):
            reduced = backward_costate(pose, eq.nu, eq.kappa, grid, objective)
            full = full_costate_backward(pose, eq.nu, eq.kappa, grid, objective)
            scale = max(float(np.abs(full).max()), 1e-30)
            assert np.abs(reduced.lam - full).max() / scale < 1e-6
            assert np.all(reduced.lam[:, 3, :] == 0.0)

    def test_exact_vs_substepped_integration(self, system, bent_state):
        grid, props, *_ = system
        _, eq, pose = bent_state
        objective = self._objectives(props, pose)[1]
        exact = full_costate_backward(pose, eq.nu, eq.kappa, grid, objective)
        rk4 = full_costate_backward(pose, eq.nu, eq.kappa, grid, objective,
                                    substeps=24)
        scale = max(float(np.abs(exact).max()), 1e-30)
        assert np.abs(exact - rk4).max() / scale < 1e-9

    def test_symmetric_block(self, system, bent_state):
        grid, props, *_ = system
        _, eq, pose = bent_state
        for objective in self._objectives(props, pose):
            costate = backward_costate(pose, eq.nu, eq.kappa, grid, objective)
            m = costate.m_sym
            asym = np.abs(m - np.swapaxes(m, -1, -2)).max()
            assert asym < 1e-9 * max(np.abs(m).max(), 1e-30)


class TestHamiltonianGradient:
    def test_zero_costate_zero_activation(self, system):
        grid, props, mset, q0, pose0 = system
        alpha = ActivationProfile.zeros(grid)
        eq = solve_equilibrium(props, mset, alpha)
        pose = reconstruct_pose(q0, eq.nu, eq.kappa, grid)
        costate = backward_costate(pose, eq.nu, eq.kappa, grid, TaskObjective())
        grad = hamiltonian_gradient(mset, eq, costate, alpha)
        assert np.all(grad == 0.0)

    def test_matches_end_to_end_fd(self):
        from octoarm.checks import control_gradient_check

        res = control_gradient_check(seed=5, draws=6, n_elements=50)
        assert res["passed"], res["detail"]

    def test_tm_gradient_sign_for_far_axial_target(self, system):
        grid, props, mset, q0, pose0 = system
        task = ReachTask.toward(np.array([0.35, 0.0, 0.0]), pose=pose0)
        alpha = ActivationProfile.zeros(grid)
        eq, pose, data, _, _ = _evaluate(props, mset, grid, q0, task, alpha, None)
        costate = backward_costate(pose, eq.nu, eq.kappa, grid, task, _data=data)
        grad = hamiltonian_gradient(mset, eq, costate, alpha)
        assert np.all(grad[0] > 0.0)


class TestFBSolve:
    def test_trivial_target_converges_immediately(self, system):
        grid, props, mset, q0, pose0 = system
        task = ReachTask(x_star=pose0.x[-1].copy(), q_star=pose0.Q[-1].copy())
        res = fb_solve(props, mset, q0, task, max_iters=500)
        assert res.objective_value < 1e-12
        assert np.abs(res.alpha.values).max() < 1e-6
        assert res.stop_reason == "objective-window"

    def test_objective_monotone_and_projected(self, system):
        grid, props, mset, q0, pose0 = system
        task = ReachTask.toward(np.array([0.01, 0.15, 0.06]), pose=pose0)
        res = fb_solve(props, mset, q0, task, max_iters=300,
                       snapshot_iters=(0, 100, 200))
        js = res.history[:, 1]
        assert np.all(np.diff(js) <= 1e-12)
        assert res.alpha.values.min() >= 0.0
        assert res.alpha.values.max() <= 1.0
        assert set(res.snapshots) == {0, 100, 200}
        assert res.objective_value < js[0]
