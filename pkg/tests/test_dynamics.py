import numpy as np
import pytest

from octoarm.dynamics import SimConfig, Simulator, simulate
from octoarm.errors import Instability, OctoarmError
from octoarm.muscles import ActivationProfile, build_muscles
from octoarm.rod import build_properties
from octoarm.se3 import Grid, Pose, PoseField, reconstruct_pose, so3_exp, strains_from_poses
from octoarm.statics import solve_equilibrium, total_energy_density


def _small_system(n=16, zeta=0.02):
    props = build_properties(Grid(n, 0.2), zeta_v=zeta, zeta_w=zeta)
    return props, build_muscles(props)


class TestLoads:
    def test_exact_energy_gradient(self):
        props, mset = _small_system()
        rng = np.random.default_rng(0)
        alpha = ActivationProfile(np.clip(rng.random((7, 16)) * 0.5, 0, 1))
        sim = Simulator(props, mset, alpha, SimConfig(dt=1e-5, ramp=0.0),
                        Pose.identity())
        st = sim.state
        st.x += 0.002 * rng.standard_normal(st.x.shape)
        st.x[0] = sim.base_x
        for i in range(1, 17):
            st.Q[i] = st.Q[i] @ so3_exp(0.2 * rng.standard_normal(3))

        grid = props.grid

        def total_v(x, q):
            nu, ka, _, _ = strains_from_poses(PoseField(x, q), grid)
            return grid.ds * float(np.sum(
                total_energy_density(props, mset, nu, ka, alpha)))

        force, torque = sim.loads(alpha)
        h = 1e-7
        for _ in range(10):
            i = int(rng.integers(1, 17))
            j = int(rng.integers(0, 3))
            xp, xm = st.x.copy(), st.x.copy()
            xp[i, j] += h
            xm[i, j] -= h
            fd = -(total_v(xp, st.Q) - total_v(xm, st.Q)) / (2 * h)
            assert abs(fd - force[i, j]) < 1e-5 * max(1.0, abs(fd))
            dth = np.zeros(3)
            dth[j] = h
            qp, qm = st.Q.copy(), st.Q.copy()
            qp[i] = st.Q[i] @ so3_exp(dth)
            qm[i] = st.Q[i] @ so3_exp(-dth)
            fd_t = -(total_v(st.x, qp) - total_v(st.x, qm)) / (2 * h)
            assert abs(fd_t - torque[i, j]) < 1e-5 * max(1.0, abs(fd_t))


class TestStep:
    def test_rest_is_fixed_point(self):
        props, mset = _small_system()
        sim = Simulator(props, mset, ActivationProfile.zeros(props.grid),
                        SimConfig(dt=1e-5, ramp=0.0), Pose.identity())
        x0 = sim.state.x.copy()
        q0 = sim.state.Q.copy()
        for _ in range(200):
            sim.step()
        assert np.array_equal(sim.state.x, x0)
        assert np.array_equal(sim.state.Q, q0)
        assert sim.max_momentum() < 1e-14

    def test_base_never_moves(self):
        props, mset = _small_system()
        alpha = ActivationProfile.constant(props.grid, TM=0.6, LM0=0.4)
        sim = Simulator(props, mset, alpha, SimConfig(dt=2e-5, ramp=0.01),
                        Pose.identity())
        for _ in range(500):
            sim.step()
        assert np.array_equal(sim.state.x[0], sim.base_x)
        assert np.array_equal(sim.state.Q[0], sim.base_q)

    def test_momentum_velocity_consistency(self):
        props, mset = _small_system()
        alpha = ActivationProfile.constant(props.grid, LM1=0.5)
        sim = Simulator(props, mset, alpha, SimConfig(dt=2e-5, ramp=0.0),
                        Pose.identity())
        for _ in range(100):
            sim.step()
        p_v, p_w = sim.momenta()
        st = sim.state
        expect_v = sim.mass[:, None] * np.einsum("nji,nj->ni", st.Q, st.v)
        expect_w = sim.inertia * st.w
        assert np.abs(p_v - expect_v).max() < 1e-12
        assert np.abs(p_w - expect_w).max() < 1e-12

    def test_tm_activation_extends_toward_statics(self):
        props, mset = _small_system(n=16, zeta=8.0)
        alpha = ActivationProfile.constant(props.grid, TM=0.5)
        eq = solve_equilibrium(props, mset, alpha)
        cfg = SimConfig(dt=2e-4, t_final=2.5, ramp=0.05, record_stride=250)
        res = simulate(props, mset, alpha, cfg, Pose.identity())
        # Axial stretch rises monotonically in time toward the static value.
        tip_z = res.positions[:, -1, 2]
        assert tip_z[-1] > tip_z[0] + 0.01
        assert np.abs(res.final_strain - eq.strain).max() < 1e-3

    def test_designed_activation_settles_on_statics(self):
        # Activation from the design loop, held constant: the settled strain
        # field coincides with the pointwise equilibrium field.
        from octoarm.se3 import reconstruct_pose
        from octoarm.shaping import fb_solve
        from octoarm.tasks import ReachTask

        props, mset = _small_system(n=40, zeta=8.0)
        q0 = Pose(np.zeros(3), np.column_stack([[0.0, 1.0, 0.0],
                                                [0.0, 0.0, 1.0],
                                                [1.0, 0.0, 0.0]]))
        pose0 = reconstruct_pose(q0, *props.rest_strain(), props.grid)
        task = ReachTask.toward(np.array([0.05, 0.12, 0.03]), pose=pose0)
        design = fb_solve(props, mset, q0, task, max_iters=400)
        cfg = SimConfig(dt=1e-4, t_final=4.0, ramp=0.1, record_stride=500)
        res = simulate(props, mset, design.alpha, cfg, q0)
        err = np.abs(res.final_strain - design.equilibrium.strain).max()
        assert err < 1e-3
        tip_err = np.linalg.norm(res.final_state.x[-1] - design.pose.x[-1])
        assert tip_err < 0.02 * props.length

    def test_instability_detection(self):
        props, mset = _small_system()
        alpha = ActivationProfile.constant(props.grid, TM=1.0)
        cfg = SimConfig(dt=5e-3, t_final=1.0, ramp=0.0, record_stride=5)
        with pytest.warns(UserWarning):
            with pytest.raises(Instability):
                simulate(props, mset, alpha, cfg, Pose.identity())


class TestHamiltonian:
    def test_rate_zero_at_rest(self):
        props, mset = _small_system()
        sim = Simulator(props, mset, ActivationProfile.zeros(props.grid),
                        SimConfig(dt=1e-5), Pose.identity())
        h, t_kin, v_pot, rate = sim.energies()
        assert rate == 0.0
        assert t_kin == 0.0
        assert abs(v_pot) < 1e-18

    def test_rate_negative_in_motion(self):
        props, mset = _small_system()
        alpha = ActivationProfile.constant(props.grid, LM0=0.6)
        sim = Simulator(props, mset, alpha, SimConfig(dt=2e-5, ramp=0.0),
                        Pose.identity())
        for _ in range(200):
            sim.step()
        _, t_kin, _, rate = sim.energies()
        assert t_kin > 0.0
        assert rate < 0.0
        assert rate == pytest.approx(-2 * props.zeta_v * t_kin, rel=0.6)

    def test_energy_decay_and_rate_match(self):
        # After the ramp the recorded Hamiltonian decreases and its discrete
        # slope tracks the recorded dissipation rate.
        props, mset = _small_system(n=20, zeta=1.0)
        alpha = ActivationProfile.constant(props.grid, TM=0.4, LM0=0.3)
        cfg = SimConfig(dt=5e-5, t_final=0.9, ramp=0.05, record_stride=200)
        res = simulate(props, mset, alpha, cfg, Pose.identity())
        post = res.times >= cfg.ramp
        h = res.hamiltonian[post]
        scale = np.abs(res.hamiltonian).max()
        assert np.all(np.diff(h) <= 1e-6 * scale)
        # Central-difference slope vs recorded rate once the post-activation
        # transient has smoothed out.
        smooth = res.times >= 0.25
        t = res.times[smooth]
        h_s = res.hamiltonian[smooth]
        rate = res.dissipation_rate[smooth]
        dh = (h_s[2:] - h_s[:-2]) / (t[2:] - t[:-2])
        mid = rate[1:-1]
        mask = np.abs(mid) > 1e-3 * np.abs(mid).max()
        rel = np.abs(dh[mask] - mid[mask]) / np.abs(mid[mask])
        assert np.median(rel) < 5e-2


class TestConfig:
    def test_rejects_bad_dt(self):
        with pytest.raises(OctoarmError):
            SimConfig(dt=0.0)
        with pytest.raises(OctoarmError):
            SimConfig(dt=1e-5, t_final=-1.0)

    def test_stability_limit_reported(self):
        props, mset = _small_system()
        sim = Simulator(props, mset, ActivationProfile.zeros(props.grid),
                        SimConfig(dt=1e-5), Pose.identity())
        wave = np.sqrt(props.youngs / props.density)
        assert sim.dt_limit == pytest.approx(props.grid.ds / wave)
