"""Randomized oracle checks shared by the validate command and the test suite.

Each check returns a dict with ``name``, ``passed``, and a ``detail`` string;
random draws come from a caller-supplied seed so results are reproducible.
"""

import numpy as np

from .muscles import (ActivationProfile, CHANNEL_OF_FIBER, FIBERS,
                      fiber_unit_loads, muscle_stored_energy, muscle_strain)
from .rod import build_properties
from .se3 import Grid, Pose, reconstruct_pose
from .shaping import (backward_costate, fb_solve, full_costate_backward,
                      hamiltonian_gradient, _evaluate)
from .statics import solve_equilibrium
from .tasks import Cylinder, GraspTask, ReachTask


def _default_system(n_elements=50):
    grid = Grid(n_elements, 0.2)
    props = build_properties(grid)
    from .muscles import build_muscles

    mset = build_muscles(props)
    q0 = Pose(np.zeros(3), np.column_stack([[0.0, 1.0, 0.0],
                                            [0.0, 0.0, 1.0],
                                            [1.0, 0.0, 0.0]]))
    return grid, props, mset, q0


def _random_strains(rng, n):
    nu = np.column_stack([0.2 * rng.standard_normal(n),
                          0.2 * rng.standard_normal(n),
                          rng.uniform(0.7, 1.6, n)])
    kappa = rng.uniform(-25.0, 25.0, (n, 3))
    return nu, kappa


def muscle_gradient_check(seed=0, draws=100, rel_tol=1e-5, system=None):
    """Loads of every fiber match central differences of its stored energy."""
    grid, props, mset, _ = system or _default_system()
    rng = np.random.default_rng(seed)
    n = grid.n_elements
    worst = 0.0
    h = 1e-6
    for _ in range(draws):
        nu, kappa = _random_strains(rng, n)
        g_n, g_m = fiber_unit_loads(mset, nu, kappa)
        analytic = np.concatenate([g_n, g_m], axis=-1)      # (13, N, 6)
        fd = np.empty_like(analytic)
        eps = np.concatenate([nu, kappa], axis=-1)
        for j in range(6):
            ep, em = eps.copy(), eps.copy()
            ep[:, j] += h
            em[:, j] -= h
            wp = muscle_stored_energy(mset, muscle_strain(mset, ep[:, :3],
                                                          ep[:, 3:]))
            wm = muscle_stored_energy(mset, muscle_strain(mset, em[:, :3],
                                                          em[:, 3:]))
            fd[..., j] = (wp - wm) / (2.0 * h)
        scale = np.abs(analytic).max(axis=(1, 2)) + 1e-12   # per fiber
        err = np.abs(analytic - fd).max(axis=(1, 2)) / scale
        worst = max(worst, float(err.max()))
    return {"name": "muscle-energy-gradient", "passed": worst < rel_tol,
            "detail": f"max relative deviation {worst:.3e} over {draws} draws "
                      f"x {len(FIBERS)} fibers (tol {rel_tol:g})"}


def path_independence_check(seed=0, draws=50, abs_tol=1e-8, system=None):
    """Line integral of the fiber force field is path independent.

    Integrates along the straight segment and along a two-leg detour from the
    rest strain to a random endpoint with composite Simpson quadrature.
    """
    from scipy.integrate import simpson

    from .muscles import force_length

    grid, props, mset, _ = system or _default_system()
    rng = np.random.default_rng(seed)
    worst = 0.0

    def force_field(fiber, elem, ys):
        norm = np.linalg.norm(ys, axis=-1)
        rest = mset.nu_rest_norm[fiber, elem]
        if mset.is_tm[fiber]:
            ell = np.sqrt(rest / norm)
            sgn = -1.0
        else:
            ell = norm / rest
            sgn = 1.0
        f = mset.sigma_max[fiber] * mset.area[fiber, elem] * force_length(ell)
        return (sgn * f / norm)[:, None] * ys

    def line_integral(fiber, elem, points):
        total = 0.0
        ts = np.linspace(0.0, 1.0, 2001)
        for a, b in zip(points[:-1], points[1:]):
            ys = a[None, :] + ts[:, None] * (b - a)[None, :]
            vals = force_field(fiber, elem, ys) @ (b - a)
            total += simpson(vals, x=ts)
        return total

    for k in range(draws):
        fiber = int(rng.integers(0, len(FIBERS)))
        elem = int(rng.integers(0, grid.n_elements))
        y0 = mset.nu_rest[fiber, elem]
        y1 = y0 + np.array([0.2 * rng.standard_normal(),
                            0.2 * rng.standard_normal(),
                            rng.uniform(-0.25, 0.4)])
        mid = y0 + np.array([0.0, 0.3, 0.1]) + 0.5 * (y1 - y0)
        direct = line_integral(fiber, elem, [y0, y1])
        detour = line_integral(fiber, elem, [y0, mid, y1])
        worst = max(worst, abs(direct - detour))
    return {"name": "stored-energy-path-independence",
            "passed": worst < abs_tol,
            "detail": f"max path disagreement {worst:.3e} J/m over {draws} "
                      f"draws (tol {abs_tol:g})"}


def costate_equivalence_check(rel_tol=1e-6, n_elements=100, snapshots=(0, 10, 40),
                              max_iters=45):
    """Reduced costate reconstruction equals the direct 16-dim integration."""
    grid, props, mset, q0 = _default_system(n_elements)
    pose0 = reconstruct_pose(q0, *props.rest_strain(), grid)
    reach = ReachTask.toward(np.array([0.01, 0.15, 0.06]), pose=pose0)
    cyl = Cylinder(center=[0.06, -0.05, 0.02], axis=[0, 0, 1], radius=0.02,
                   height=0.15)
    grasp = GraspTask(cylinder=cyl, x_star=np.array([0.06, -0.05, 0.02]),
                      wrap_start=0.3 * grid.length, radius_fn=props.radius_at)

    worst = 0.0
    details = []
    for label, objective in (("reach", reach), ("grasp", grasp)):
        result = fb_solve(props, mset, q0, objective, max_iters=max_iters,
                          snapshot_iters=snapshots)
        for it, alpha in sorted(result.snapshots.items()):
            eq = solve_equilibrium(props, mset, alpha)
            pose = reconstruct_pose(q0, eq.nu, eq.kappa, grid)
            reduced = backward_costate(pose, eq.nu, eq.kappa, grid, objective)
            full = full_costate_backward(pose, eq.nu, eq.kappa, grid, objective)
            scale = max(float(np.abs(full).max()), 1e-30)
            err = float(np.abs(reduced.lam - full).max()) / scale
            worst = max(worst, err)
            details.append(f"{label}@{it}: {err:.2e}")
    return {"name": "costate-reduction-equivalence", "passed": worst < rel_tol,
            "detail": f"max node-wise relative deviation {worst:.3e} "
                      f"({'; '.join(details)})"}


def control_gradient_check(seed=0, draws=10, rel_tol=1e-3, n_elements=50):
    """Control gradient matches end-to-end finite differences of the cost."""
    grid, props, mset, q0 = _default_system(n_elements)
    pose0 = reconstruct_pose(q0, *props.rest_strain(), grid)
    task = ReachTask.toward(np.array([0.01, 0.15, 0.06]), pose=pose0)
    rng = np.random.default_rng(seed)

    alpha = ActivationProfile(np.clip(rng.random((7, grid.n_elements)) * 0.3,
                                      0.0, 1.0))
    eq, pose, data, jm, jt = _evaluate(props, mset, grid, q0, task, alpha, None)
    costate = backward_costate(pose, eq.nu, eq.kappa, grid, task, _data=data)
    grad = hamiltonian_gradient(mset, eq, costate, alpha)

    def j_of(values):
        a = ActivationProfile(np.clip(values, 0.0, 1.0))
        _, _, _, jm2, jt2 = _evaluate(props, mset, grid, q0, task, a,
                                      guess=eq.strain)
        return jm2 + jt2

    worst = 0.0
    h = 1e-6
    for _ in range(draws):
        ch = int(rng.integers(0, 7))
        el = int(rng.integers(0, grid.n_elements))
        vp = alpha.values.copy()
        vm = alpha.values.copy()
        vp[ch, el] += h
        vm[ch, el] -= h
        fd = (j_of(vp) - j_of(vm)) / (2.0 * h)
        analytic = -grid.ds * grad[ch, el]
        worst = max(worst, abs(fd - analytic) / max(abs(fd), 1e-9))
    return {"name": "control-gradient", "passed": worst < rel_tol,
            "detail": f"max relative deviation {worst:.3e} over {draws} "
                      f"channel/element draws (tol {rel_tol:g})"}


def run_all(seed=0, quick=False):
    """Execute every check; returns the list of result dicts."""
    draws = 20 if quick else 100
    results = [
        muscle_gradient_check(seed=seed, draws=draws),
        path_independence_check(seed=seed, draws=10 if quick else 50),
        costate_equivalence_check(n_elements=50 if quick else 100),
        control_gradient_check(seed=seed, draws=5 if quick else 10),
    ]
    return results
