"""Total stored energy and pointwise solution of the static load balance.

At a static equilibrium the passive elastic loads and the active muscle loads
cancel element by element.  The residual of that balance is the strain
gradient of the total stored-energy density, so equilibria are local minima of
the shaped potential and each element can be solved independently.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence, SingularJacobian
from .muscles import fiber_activations, fiber_unit_loads, muscle_energy_total
from .rod import elastic_energy_density, elastic_loads

_NU3_FLOOR = 1e-2


def total_energy_density(props, mset, nu, kappa, alpha):
    """Elastic plus activation-weighted muscle stored energy, (N,) J/m."""
    return (elastic_energy_density(props, nu, kappa)
            + muscle_energy_total(mset, nu, kappa, alpha))


def _muscle_load_vector(mset, nu, kappa, alpha):
    """Activation-weighted muscle loads, batched: (..., N, 6)."""
    g_n, g_m = fiber_unit_loads(mset, nu, kappa)
    a_fib = fiber_activations(alpha.values)
    return np.concatenate([np.einsum("fn,f...ni->...ni", a_fib, g_n),
                           np.einsum("fn,f...ni->...ni", a_fib, g_m)], axis=-1)


def equilibrium_residual(props, mset, nu, kappa, alpha):
    """Load-balance residual P = dW/d(strain), shape (N, 6)."""
    n_e, m_e = elastic_loads(props, nu, kappa)
    p = np.concatenate([n_e, m_e], axis=-1)
    if np.any(alpha.values != 0.0):
        p = p + _muscle_load_vector(mset, nu, kappa, alpha)
    return p


def equilibrium_jacobian(props, mset, nu, kappa, alpha):
    """Strain Jacobian dP/d(strain), shape (N, 6, 6).

    Elastic block is the diagonal stiffness; the muscle block chains the
    analytic per-fiber force gradient through the strain map, using the
    one-sided slope of the clamped force-length curve at its kinks.  The
    result is the (symmetric) Hessian of the total stored energy.
    """
    from .muscles import fiber_load_gradients

    n = props.grid.n_elements
    nu = np.broadcast_to(np.atleast_2d(nu), (n, 3))
    kappa = np.broadcast_to(np.atleast_2d(kappa), (n, 3))
    jac = np.zeros((n, 6, 6))
    diag = np.arange(3)
    jac[:, diag, diag] = props.stiffness_shear
    jac[:, diag + 3, diag + 3] = props.stiffness_bend

    if np.any(alpha.values != 0.0):
        a_fib = fiber_activations(alpha.values)
        g = fiber_load_gradients(mset, nu, kappa)      # (13, N, 3, 3)
        gh = g @ mset.r_hat                            # d(nu_m)/d(kappa) = -hat(r)
        hgh = mset.r_hat @ gh
        j_nn = np.einsum("fn,fnij->nij", a_fib, g)
        j_nk = -np.einsum("fn,fnij->nij", a_fib, gh)
        j_kk = -np.einsum("fn,fnij->nij", a_fib, hgh)
        jac[:, :3, :3] += j_nn
        jac[:, :3, 3:] += j_nk
        jac[:, 3:, :3] += np.swapaxes(j_nk, -1, -2)
        jac[:, 3:, 3:] += j_kk
    return jac


@dataclass
class EquilibriumField:
    """Pointwise equilibrium strains with solver diagnostics."""

    nu: np.ndarray            # (N, 3)
    kappa: np.ndarray         # (N, 3)
    converged: np.ndarray     # (N,) bool
    residual_norm: np.ndarray  # (N,)
    jacobian: np.ndarray      # (N, 6, 6) at the solution
    basin_jump: np.ndarray    # (N,) bool, Newton step exceeded the trust norm

    @property
    def strain(self):
        return np.concatenate([self.nu, self.kappa], axis=-1)


def _residual_norms(props, mset, eps, alpha):
    p = equilibrium_residual(props, mset, eps[:, :3], eps[:, 3:], alpha)
    return p, np.linalg.norm(p, axis=-1)


def _clip_step(eps, delta):
    """Scale Newton steps so the axial stretch stays above the floor."""
    scale = np.ones(eps.shape[0])
    drop = delta[:, 2] < 0.0
    if np.any(drop):
        room = eps[drop, 2] - _NU3_FLOOR
        need = -delta[drop, 2]
        scale[drop] = np.minimum(1.0, 0.95 * room / need)
    return np.clip(scale, 0.0, 1.0)


def solve_equilibrium(props, mset, alpha, guess=None, tol_scale=1e-9,
                      max_newton=50, raise_on_failure=True, jacobian0=None):
    """Solve the load balance per element by damped Newton iteration.

    Parameters
    ----------
    guess : (N, 6) strain warm start; defaults to the intrinsic strain.
    tol_scale : convergence requires |P| < tol_scale * E * A(s) per element.
    jacobian0 : optional (N, 6, 6) chord matrix for the first Newton step,
        typically the Jacobian of a previous nearby solve.  A fresh Jacobian
        is used whenever the chord step fails to reduce the residual.

    Falls back to 200 steps of stiffness-scaled gradient descent on the stored
    energy wherever Newton stalls, then re-runs Newton from there.
    """
    n = props.grid.n_elements
    if guess is None:
        nu0, k0 = props.rest_strain()
        eps = np.concatenate([nu0, k0], axis=-1)
    else:
        eps = np.array(guess, dtype=float).reshape(n, 6)

    tol = tol_scale * props.youngs * props.area
    basin_jump = np.zeros(n, dtype=bool)

    def line_search(eps, p, pn, delta, active):
        t = _clip_step(eps, delta)
        basin_jump[:] |= (np.linalg.norm(t[:, None] * delta, axis=-1) > 0.5)
        improved = np.zeros(n, dtype=bool)
        eps_new, pn_new, p_new = eps, pn, p
        for _ in range(40):
            trial = eps + (t * ~improved)[:, None] * delta
            trial[improved] = eps_new[improved]
            p_t, pn_t = _residual_norms(props, mset, trial, alpha)
            better = (pn_t <= (1.0 - 1e-4) * pn) | (pn_t <= tol)
            newly = better & ~improved & active
            if np.any(newly):
                eps_new = np.where(newly[:, None], trial, eps_new)
                pn_new = np.where(newly, pn_t, pn_new)
                p_new = np.where(newly[:, None], p_t, p_new)
                improved |= newly
            if np.all(improved | ~active):
                break
            t = np.where(improved | ~active, t, t / 2.0)
            if np.all(t[active & ~improved] < 1e-12):
                break
        return eps_new, p_new, pn_new, improved

    def newton(eps, rounds, jac_chord=None):
        p, pn = _residual_norms(props, mset, eps, alpha)
        jac_fresh = None
        step_since_fresh = np.inf
        for _ in range(rounds):
            active = pn > tol
            if not np.any(active):
                break
            if jac_chord is not None:
                jac = jac_chord
            else:
                jac = equilibrium_jacobian(props, mset, eps[:, :3], eps[:, 3:],
                                           alpha)
                jac_fresh, step_since_fresh = jac, 0.0
            try:
                delta = np.linalg.solve(jac, -p[..., None])[..., 0]
            except np.linalg.LinAlgError:
                bad = np.nonzero(np.linalg.cond(jac) > 1e14)[0]
                raise SingularJacobian(bad[0] if bad.size else 0)
            delta[~active] = 0.0
            eps_new, p_new, pn_new, improved = line_search(eps, p, pn, delta,
                                                           active)
            if jac_chord is not None and not np.all(improved | ~active):
                # Stale chord stalled somewhere: redo with a fresh Jacobian.
                jac_chord = None
                continue
            jac_chord = None
            if jac_fresh is not None:
                step_since_fresh += float(np.abs(eps_new - eps).max())
            eps, p, pn = eps_new, p_new, pn_new
        return eps, p, pn, jac_fresh, step_since_fresh

    eps, p, pn, jac_fresh, step_since = newton(eps, max_newton,
                                               jac_chord=jacobian0)

    if np.any(pn > tol):
        # Stiffness-scaled descent on the stored energy, then one more Newton.
        scale = np.concatenate([props.stiffness_shear, props.stiffness_bend],
                               axis=-1)
        stalled = pn > tol
        lr = np.full(n, 1.0)
        w = total_energy_density(props, mset, eps[:, :3], eps[:, 3:], alpha)
        for _ in range(200):
            step = -p / scale
            trial = eps + (lr * stalled)[:, None] * step
            trial[:, 2] = np.maximum(trial[:, 2], _NU3_FLOOR)
            w_t = total_energy_density(props, mset, trial[:, :3], trial[:, 3:],
                                       alpha)
            ok = (w_t <= w) & stalled
            eps = np.where(ok[:, None], trial, eps)
            w = np.where(ok, w_t, w)
            lr = np.where(ok, np.minimum(lr * 1.2, 1.0), lr / 2.0)
            p, pn = _residual_norms(props, mset, eps, alpha)
            stalled = pn > tol
            if not np.any(stalled):
                break
        eps, p, pn, jac_fresh, step_since = newton(eps, max_newton)

    converged = pn <= tol
    if raise_on_failure and not np.all(converged):
        worst = int(np.argmax(pn * ~converged))
        raise NonConvergence(worst, pn[worst])

    # The Jacobian from the final Newton round is still exact to round-off
    # when the remaining step was tiny; otherwise refresh it at the solution.
    if jac_fresh is not None and step_since < 1e-6:
        jac = jac_fresh
    else:
        jac = equilibrium_jacobian(props, mset, eps[:, :3], eps[:, 3:], alpha)
    return EquilibriumField(nu=eps[:, :3].copy(), kappa=eps[:, 3:].copy(),
                            converged=converged, residual_norm=pn,
                            jacobian=jac, basin_jump=basin_jump)


def strain_sensitivity(props, mset, eq, alpha):
    """d(strain)/d(activation) per channel from the implicit function theorem.

    Returns (7, N, 6): the response of the equilibrium strain to a unit bump
    of each channel's activation at each element.
    """
    from .muscles import channel_unit_loads

    g = channel_unit_loads(mset, eq.nu, eq.kappa)      # (7, N, 6) = dP/dalpha
    rhs = -np.moveaxis(g, 0, 2)                        # (N, 6, 7)
    sol = np.linalg.solve(eq.jacobian, rhs)            # (N, 6, 7)
    return np.moveaxis(sol, 2, 0)
