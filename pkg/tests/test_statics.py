import numpy as np
import pytest
from scipy.optimize import brentq

from octoarm.errors import NonConvergence
from octoarm.muscles import ActivationProfile, build_muscles, force_length
from octoarm.rod import build_properties, elastic_energy_density
from octoarm.se3 import Grid
from octoarm.statics import (equilibrium_jacobian, equilibrium_residual,
                             solve_equilibrium, strain_sensitivity,
                             total_energy_density)


@pytest.fixture(scope="module")
def tapered():
    props = build_properties(Grid(100, 0.2))
    return props, build_muscles(props)


@pytest.fixture(scope="module")
def uniform():
    props = build_properties(Grid(100, 0.2), r_tip=0.012)
    return props, build_muscles(props)


def _random_state(props, rng, scale=0.3):
    n = props.grid.n_elements
    nu = np.column_stack([0.2 * rng.standard_normal(n),
                          0.2 * rng.standard_normal(n),
                          rng.uniform(0.8, 1.4, n)])
    ka = rng.uniform(-20, 20, (n, 3))
    alpha = ActivationProfile(np.clip(rng.random((7, n)) * scale, 0.0, 1.0))
    return nu, ka, alpha


class TestEnergyDensity:
    def test_zero_activation_reduces_to_elastic(self, tapered):
        props, mset = tapered
        rng = np.random.default_rng(0)
        nu, ka, _ = _random_state(props, rng)
        alpha = ActivationProfile.zeros(props.grid)
        assert np.allclose(total_energy_density(props, mset, nu, ka, alpha),
                           elastic_energy_density(props, nu, ka))

    def test_zero_at_rest_for_any_activation(self, tapered):
        props, mset = tapered
        rng = np.random.default_rng(1)
        nu, ka = props.rest_strain()
        alpha = ActivationProfile(rng.random((7, 100)))
        assert np.allclose(total_energy_density(props, mset, nu, ka, alpha),
                           0.0, atol=1e-14)

    def test_sum_decomposition(self, tapered):
        from octoarm.muscles import muscle_energy_total

        props, mset = tapered
        rng = np.random.default_rng(2)
        nu, ka, alpha = _random_state(props, rng)
        total = total_energy_density(props, mset, nu, ka, alpha)
        parts = (elastic_energy_density(props, nu, ka)
                 + muscle_energy_total(mset, nu, ka, alpha))
        assert np.allclose(total, parts, rtol=1e-14)


class TestResidual:
    def test_zero_at_rest_without_activation(self, tapered):
        props, mset = tapered
        nu, ka = props.rest_strain()
        p = equilibrium_residual(props, mset, nu, ka,
                                 ActivationProfile.zeros(props.grid))
        assert np.all(p == 0.0)

    def test_matches_energy_gradient(self, tapered):
        props, mset = tapered
        rng = np.random.default_rng(3)
        h = 1e-6
        worst = 0.0
        for _ in range(2):
            nu, ka, alpha = _random_state(props, rng)
            p = equilibrium_residual(props, mset, nu, ka, alpha)
            scale = np.linalg.norm(p, axis=-1) + 1e-12
            eps = np.concatenate([nu, ka], axis=-1)
            for j in range(6):
                ep, em = eps.copy(), eps.copy()
                ep[:, j] += h
                em[:, j] -= h
                fd = (total_energy_density(props, mset, ep[:, :3], ep[:, 3:], alpha)
                      - total_energy_density(props, mset, em[:, :3], em[:, 3:],
                                             alpha)) / (2 * h)
                worst = max(worst, float((np.abs(p[:, j] - fd) / scale).max()))
        assert worst < 1e-5

    def test_tm_axial_component(self, uniform):
        # Straight-rod ansatz: P3 = EA (nu3 - 1) - a sigma (A/8) h(1/sqrt(nu3)).
        props, mset = uniform
        n = props.grid.n_elements
        a_val = 0.7
        alpha = ActivationProfile.constant(props.grid, TM=a_val)
        for nu3 in (1.0, 1.05, 1.2):
            nu = np.tile([0.0, 0.0, nu3], (n, 1))
            p = equilibrium_residual(props, mset, nu, np.zeros((n, 3)), alpha)
            ea = props.youngs * props.area
            expect = ea * (nu3 - 1.0) - a_val * mset.sigma_max[0] * (
                props.area / 8.0) * force_length(np.sqrt(1.0 / nu3))
            assert np.allclose(p[:, 2], expect, rtol=1e-12)
            assert np.allclose(p[:, [0, 1, 3, 4, 5]], 0.0, atol=1e-15)


class TestJacobian:
    def test_elastic_block_when_passive(self, tapered):
        props, mset = tapered
        nu, ka = props.rest_strain()
        jac = equilibrium_jacobian(props, mset, nu, ka,
                                   ActivationProfile.zeros(props.grid))
        expect = np.zeros_like(jac)
        idx = np.arange(3)
        expect[:, idx, idx] = props.stiffness_shear
        expect[:, idx + 3, idx + 3] = props.stiffness_bend
        assert np.array_equal(jac, expect)

    def test_matches_fd_of_residual(self, tapered):
        props, mset = tapered
        rng = np.random.default_rng(4)
        nu, ka, alpha = _random_state(props, rng)
        jac = equilibrium_jacobian(props, mset, nu, ka, alpha)
        scale = np.abs(jac).max()
        eps = np.concatenate([nu, ka], axis=-1)
        h = 1e-6
        for j in range(6):
            ep, em = eps.copy(), eps.copy()
            ep[:, j] += h
            em[:, j] -= h
            fd = (equilibrium_residual(props, mset, ep[:, :3], ep[:, 3:], alpha)
                  - equilibrium_residual(props, mset, em[:, :3], em[:, 3:],
                                         alpha)) / (2 * h)
            assert np.abs(jac[:, :, j] - fd).max() / scale < 1e-4

    def test_symmetry(self, tapered):
        props, mset = tapered
        rng = np.random.default_rng(5)
        nu, ka, alpha = _random_state(props, rng)
        jac = equilibrium_jacobian(props, mset, nu, ka, alpha)
        asym = np.abs(jac - np.swapaxes(jac, 1, 2)).max()
        assert asym < 1e-8 * np.abs(jac).max()


class TestSolve:
    def test_passive_gives_rest_strain(self, tapered):
        props, mset = tapered
        eq = solve_equilibrium(props, mset, ActivationProfile.zeros(props.grid))
        nu0, k0 = props.rest_strain()
        assert np.abs(eq.nu - nu0).max() < 1e-10
        assert np.abs(eq.kappa - k0).max() < 1e-10
        assert eq.converged.all()

    def test_uniform_tm_matches_bisection(self, tapered):
        props, mset = tapered
        alpha = ActivationProfile.constant(props.grid, TM=0.5)
        eq = solve_equilibrium(props, mset, alpha)
        assert eq.converged.all()
        assert np.abs(eq.kappa).max() == 0.0
        for i in range(0, props.grid.n_elements, 7):
            ea = props.youngs * props.area[i]
            sig_a = mset.sigma_max[0] * mset.area[0, i]

            def residual(v3):
                return ea * (v3 - 1.0) - 0.5 * sig_a * force_length(
                    np.sqrt(1.0 / v3))

            root = brentq(residual, 1.0, 3.0, xtol=1e-14)
            assert abs(eq.nu[i, 2] - root) < 1e-8
            assert eq.nu[i, 2] > 1.0

    def test_lm_matches_2d_rootfind(self, uniform):
        # Symmetry closes the equilibrium in (nu3, kappa2) on an untapered rod;
        # the oracle nests bisection over that reduced system.
        props, mset = uniform
        a_val = 0.4
        alpha = ActivationProfile.constant(props.grid, LM0=a_val)
        eq = solve_equilibrium(props, mset, alpha)
        assert eq.converged.all()
        assert np.abs(eq.nu[:, :2]).max() == 0.0
        assert np.abs(eq.kappa[:, [0, 2]]).max() == 0.0

        for i in (0, 37, 99):
            ea = props.youngs * props.area[i]
            ej = props.youngs * props.second_moment[i, 1]
            sig_a = mset.sigma_max[1] * mset.area[1, i]
            beta_r = (5.0 / 8.0) * props.radius[i]

            def p_axial_and_bend(v3, k2):
                n3 = v3 - k2 * beta_r
                f = sig_a * force_length(abs(n3))
                t3 = np.sign(n3)
                return (ea * (v3 - 1.0) + a_val * f * t3,
                        ej * k2 - a_val * f * t3 * beta_r)

            def axial_root(k2):
                return brentq(lambda v3: p_axial_and_bend(v3, k2)[0], 0.3, 1.5,
                              xtol=1e-15)

            k2 = brentq(lambda k2: p_axial_and_bend(axial_root(k2), k2)[1],
                        0.0, 80.0, xtol=1e-14)
            v3 = axial_root(k2)
            assert abs(eq.nu[i, 2] - v3) < 1e-6
            assert abs(eq.kappa[i, 1] - k2) < 1e-6
            # Bending is toward the activated fiber (positive about d2).
            assert eq.kappa[i, 1] > 0.0

    def test_solve_order_invariance(self, tapered):
        # Element solves are independent: a permuted-system solve agrees
        # bitwise after undoing the permutation.
        props, mset = tapered
        rng = np.random.default_rng(6)
        alpha_vals = np.clip(rng.random((7, 100)) * 0.4, 0.0, 1.0)
        eq = solve_equilibrium(props, mset, ActivationProfile(alpha_vals))

        perm = rng.permutation(100)
        grid = props.grid
        props_p = build_properties(grid)
        object.__setattr__(props_p, "radius", props.radius[perm])
        object.__setattr__(props_p, "area", props.area[perm])
        object.__setattr__(props_p, "second_moment", props.second_moment[perm])
        object.__setattr__(props_p, "stiffness_shear", props.stiffness_shear[perm])
        object.__setattr__(props_p, "stiffness_bend", props.stiffness_bend[perm])
        object.__setattr__(props_p, "mass_density", props.mass_density[perm])
        object.__setattr__(props_p, "inertia_density", props.inertia_density[perm])
        import dataclasses

        mset_p = dataclasses.replace(
            mset, area=mset.area[:, perm], r_rel=mset.r_rel[:, perm],
            dr_rel=mset.dr_rel[:, perm], nu_rest=mset.nu_rest[:, perm],
            nu_rest_norm=mset.nu_rest_norm[:, perm],
            r_hat=mset.r_hat[:, perm])
        eq_p = solve_equilibrium(props_p, mset_p,
                                 ActivationProfile(alpha_vals[:, perm]))
        assert np.array_equal(eq_p.nu, eq.nu[perm])
        assert np.array_equal(eq_p.kappa, eq.kappa[perm])

    def test_local_minimum(self, tapered):
        props, mset = tapered
        rng = np.random.default_rng(7)
        alpha = ActivationProfile(np.clip(rng.random((7, 100)) * 0.5, 0.0, 1.0))
        eq = solve_equilibrium(props, mset, alpha)
        w0 = total_energy_density(props, mset, eq.nu, eq.kappa, alpha)
        for _ in range(100):
            d = rng.standard_normal((100, 6))
            d *= 1e-4 / np.linalg.norm(d, axis=-1, keepdims=True)
            w = total_energy_density(props, mset, eq.nu + d[:, :3],
                                     eq.kappa + d[:, 3:], alpha)
            assert np.all(w >= w0 - 1e-12)

    def test_implicit_sensitivity(self, tapered):
        # d(strain)/d(activation) from the Jacobian matches finite differences
        # of the solved equilibrium.
        props, mset = tapered
        rng = np.random.default_rng(8)
        base = np.clip(rng.random((7, 100)) * 0.3 + 0.05, 0.0, 1.0)
        alpha = ActivationProfile(base)
        eq = solve_equilibrium(props, mset, alpha)
        sens = strain_sensitivity(props, mset, eq, alpha)
        h = 1e-6
        for ch in (0, 2, 5):
            vp, vm = base.copy(), base.copy()
            vp[ch] += h
            vm[ch] -= h
            eq_p = solve_equilibrium(props, mset, ActivationProfile(vp),
                                     guess=eq.strain)
            eq_m = solve_equilibrium(props, mset, ActivationProfile(vm),
                                     guess=eq.strain)
            fd = (eq_p.strain - eq_m.strain) / (2 * h)
            scale = np.abs(fd).max() + 1e-12
            assert np.abs(sens[ch] - fd).max() / scale < 1e-3

    def test_nonconvergence_raises(self, tapered):
        props, mset = tapered
        alpha = ActivationProfile.constant(props.grid, TM=1.0)
        with pytest.raises(NonConvergence):
            solve_equilibrium(props, mset, alpha, tol_scale=0.0)
        eq = solve_equilibrium(props, mset, alpha, tol_scale=0.0,
                               raise_on_failure=False)
        assert not eq.converged.all()
