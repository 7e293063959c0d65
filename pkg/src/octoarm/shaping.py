"""Static control design by forward-backward sweeps with a reduced costate.

The backward sweep integrates the static internal force and couple (n, m) in
the material frame from tip to base.  The discrete objective samples the
running cost at element midpoints with weight ds, so its exact adjoint carries
pure transport across half-elements with a source jump at each midpoint; in
the lab frame the transported quantities (force resultant, moment resultant
about the origin) then reduce to cumulative sums.  The full 4x4 costate is
reconstructed algebraically from (n, m) and an accumulated matrix; a direct
integration of the 16-dimensional costate equation is provided as an oracle.
"""

from dataclasses import dataclass, field

import numpy as np

from .muscles import channel_unit_loads
from .se3 import (element_transforms, hat, midpoint_poses, reconstruct_pose,
                  se3_right_jacobian_T_apply, so3_exp)
from .statics import solve_equilibrium


def _vec_skew(a):
    """Axial vector of an exactly skew stacked matrix."""
    return np.stack([a[..., 2, 1], a[..., 0, 2], a[..., 1, 0]], axis=-1)


@dataclass
class Costate:
    """Reduced costate along the arm plus its 4x4 reconstruction.

    ``n`` and ``m`` are the static internal force (N) and couple (N m) in the
    material frame at nodes.  ``control_rhs`` is the per-element pairing
    vector entering the control gradient: the node-(i+1) costate pulled back
    through the element exponential plus the midpoint source share, both
    chained through the right Jacobian of the exponential so the gradient is
    exact for the discrete objective.  ``lam`` is the reconstructed costate
    and ``m_sym`` the symmetric matrix entering its rotational block.
    """

    n: np.ndarray
    m: np.ndarray
    control_rhs: np.ndarray
    lam_accum: np.ndarray
    m_sym: np.ndarray
    lam: np.ndarray


def _task_data(pose, nu, kappa, grid, objective):
    x_mid, q_mid = midpoint_poses(pose, nu, kappa, grid)
    lval, lx, lq = objective.lagrangian(grid.s_elems, x_mid, q_mid)
    phi, phi_x, phi_q = objective.terminal(pose.x[-1], pose.Q[-1])
    return (x_mid, q_mid, lval, lx, lq, phi, phi_x, phi_q)


def backward_costate(pose, nu, kappa, grid, objective, _data=None):
    """Integrate the reduced costate tip-to-base and reconstruct lambda."""
    ds = grid.ds
    x, q = pose.x, pose.Q
    if _data is None:
        _data = _task_data(pose, nu, kappa, grid, objective)
    x_mid, q_mid, _, lx, lq, _, phi_x, phi_q = _data

    # Terminal values in lab-frame transported variables.
    q_l, x_l = q[-1], x[-1]
    n_lab_l = -phi_x
    m_lab_l = -_vec_skew(phi_q @ q_l.T - q_l @ phi_q.T)
    mtil_l = m_lab_l + np.cross(x_l, n_lab_l)
    lam_l = (phi_x[:, None] * x_l[None, :] + x_l[:, None] * phi_x[None, :]
             + phi_q @ q_l.T + q_l @ phi_q.T)

    # Midpoint source jumps, weighted by the element length.
    skew_src = lq @ np.swapaxes(q_mid, -1, -2)
    d_n = ds * lx
    d_mtil = ds * (np.cross(x_mid, lx)
                   + _vec_skew(skew_src - np.swapaxes(skew_src, -1, -2)))
    d_lam = ds * (lx[:, :, None] * x_mid[:, None, :]
                  + x_mid[:, :, None] * lx[:, None, :]
                  + skew_src + np.swapaxes(skew_src, -1, -2))

    n_nodes = grid.n_elements + 1
    n_lab = np.empty((n_nodes, 3))
    mtil = np.empty((n_nodes, 3))
    lam_acc = np.empty((n_nodes, 3, 3))
    n_lab[-1] = n_lab_l
    mtil[-1] = mtil_l
    lam_acc[-1] = lam_l
    n_lab[:-1] = n_lab_l - np.cumsum(d_n[::-1], axis=0)[::-1]
    mtil[:-1] = mtil_l - np.cumsum(d_mtil[::-1], axis=0)[::-1]
    lam_acc[:-1] = lam_l + np.cumsum(d_lam[::-1], axis=0)[::-1]

    n_mat = np.einsum("nji,nj->ni", q, n_lab)
    m_lab = mtil - np.cross(x, n_lab)
    m_mat = np.einsum("nji,nj->ni", q, m_lab)

    # Exact control pairing: node-(i+1) costate through the full-element right
    # Jacobian plus the midpoint source share through the half-element one.
    nm_next = np.concatenate([n_mat[1:], m_mat[1:]], axis=-1)
    n_b = np.einsum("nji,nj->ni", q_mid, lx)
    m_b = _vec_skew(np.einsum("nji,njk->nik", q_mid, lq)
                    - np.einsum("nij,nkj->nik", lq, q_mid))
    src_b = np.concatenate([n_b, m_b], axis=-1)
    rhs = (se3_right_jacobian_T_apply(ds * nu, ds * kappa, nm_next)
           + 0.5 * ds * se3_right_jacobian_T_apply(0.5 * ds * nu,
                                                   0.5 * ds * kappa, src_b))

    outer_nx = n_lab[:, :, None] * x[:, None, :]
    m_sym_lab = lam_acc + outer_nx + np.swapaxes(outer_nx, -1, -2)
    m_sym = np.einsum("nji,njk,nkl->nil", q, m_sym_lab, q)
    lam = np.zeros((n_nodes, 4, 4))
    lam[:, :3, :3] = 0.5 * np.einsum("nij,njk->nik", q, hat(m_mat) - m_sym)
    lam[:, :3, 3] = n_lab
    return Costate(n=n_mat, m=m_mat, control_rhs=rhs, lam_accum=lam_acc,
                   m_sym=m_sym, lam=lam)


def full_costate_backward(pose, nu, kappa, grid, objective, substeps=0):
    """Direct backward integration of the 4x4 costate equation (oracle).

    Solves d(lambda)/ds = -lambda strain_hat^T between element midpoints with
    a source jump of ds * dL/dq at each midpoint and the transversality value
    at the tip.  With ``substeps`` = 0 the half-element transports use the
    exact exponential; otherwise classic RK4 with that many substeps per half
    element is used.
    """
    ds = grid.ds
    data = _task_data(pose, nu, kappa, grid, objective)
    _, _, _, lx, lq, _, phi_x, phi_q = data

    n = grid.n_elements
    src = np.zeros((n, 4, 4))
    src[:, :3, :3] = lq
    src[:, :3, 3] = lx

    lam = np.zeros((n + 1, 4, 4))
    lam[-1, :3, :3] = -phi_q
    lam[-1, :3, 3] = -phi_x

    if substeps <= 0:
        r_half, t_half = element_transforms(nu, kappa, 0.5 * ds)
        e_half = np.zeros((n, 4, 4))
        e_half[:, :3, :3] = r_half
        e_half[:, :3, 3] = t_half
        e_half[:, 3, 3] = 1.0
        for i in range(n - 1, -1, -1):
            at_mid = lam[i + 1] @ e_half[i].T - ds * src[i]
            lam[i] = at_mid @ e_half[i].T
        return lam

    eps_hat = np.zeros((n, 4, 4))
    eps_hat[:, :3, :3] = hat(kappa)
    eps_hat[:, :3, 3] = nu
    h = 0.5 * ds / substeps

    def transport(cur, eh):
        for _ in range(substeps):
            k1 = -(cur @ eh)
            k2 = -((cur - 0.5 * h * k1) @ eh)
            k3 = -((cur - 0.5 * h * k2) @ eh)
            k4 = -((cur - h * k3) @ eh)
            cur = cur - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return cur

    for i in range(n - 1, -1, -1):
        eh = eps_hat[i].T
        at_mid = transport(lam[i + 1], eh) - ds * src[i]
        lam[i] = transport(at_mid, eh)
    return lam


def hamiltonian_gradient(mset, eq, costate, alpha):
    """Per-channel control gradient of the control Hamiltonian, (7, N).

    Combines the implicit strain response to activation with the costate
    pairing (the continuum form n.nu + m.kappa with the discrete right-Jacobian
    correction) and the activation-effort gradient.
    """
    delta = np.linalg.solve(eq.jacobian, costate.control_rhs[..., None])[..., 0]
    g = channel_unit_loads(mset, eq.nu, eq.kappa)
    return -np.einsum("cne,ne->cn", g, delta) - alpha.values


@dataclass
class FBResult:
    """Output of the forward-backward design loop."""

    alpha: object
    equilibrium: object
    pose: object
    objective_value: float
    history: np.ndarray          # rows: iter, J, J_muscle, J_task, max|grad|
    iterations: int
    eta_final: float
    stop_reason: str
    snapshots: dict = field(default_factory=dict)


def _evaluate(props, mset, grid, q0, objective, alpha, guess, jacobian0=None):
    eq = solve_equilibrium(props, mset, alpha, guess=guess, jacobian0=jacobian0)
    pose = reconstruct_pose(q0, eq.nu, eq.kappa, grid)
    data = _task_data(pose, eq.nu, eq.kappa, grid, objective)
    lval, phi = data[2], data[5]
    j_task = float(phi + grid.ds * lval.sum())
    j_muscle = float(0.5 * grid.ds * np.sum(alpha.values * alpha.values))
    return eq, pose, data, j_muscle, j_task


def fb_solve(props, mset, q0, objective, alpha0=None, eta=1e-8,
             max_iters=100000, accept_tol=1e-12, window=100,
             window_rel_tol=1e-10, eta_growth_after=500,
             snapshot_iters=(), min_eta=1e-24):
    """Projected gradient ascent on the control Hamiltonian.

    Each accepted iteration solves the pointwise equilibrium for the current
    activation, reconstructs the pose, runs the backward costate sweep, and
    takes a clipped gradient step.  Steps that increase the objective are
    rejected and retried with a halved step size; after ``eta_growth_after``
    consecutive accepts the step grows again, capped at the initial ``eta``.

    Returns the best iterate by objective value.
    """
    from .muscles import ActivationProfile

    grid = props.grid
    alpha = alpha0.copy() if alpha0 is not None else ActivationProfile.zeros(grid)
    eq, pose, data, j_mus, j_task = _evaluate(props, mset, grid, q0, objective,
                                              alpha, None)
    j_cur = j_mus + j_task
    costate = backward_costate(pose, eq.nu, eq.kappa, grid, objective, _data=data)
    grad = hamiltonian_gradient(mset, eq, costate, alpha)

    history = [(0, j_cur, j_mus, j_task, float(np.abs(grad).max()))]
    snapshots = {}
    snapshot_iters = set(snapshot_iters)
    if 0 in snapshot_iters:
        snapshots[0] = alpha.copy()

    best = (j_cur, alpha.copy(), eq, pose)
    eta_cur = float(eta)
    eta_cap = float(eta)
    accepted = 0
    consecutive = 0
    stop_reason = "max-iterations"

    it = 0
    while it < max_iters:
        it += 1
        trial = ActivationProfile(np.clip(alpha.values + eta_cur * grad, 0.0, 1.0))
        try:
            eq_t, pose_t, data_t, j_mus_t, j_task_t = _evaluate(
                props, mset, grid, q0, objective, trial, guess=eq.strain,
                jacobian0=eq.jacobian)
        except Exception:
            eta_cur *= 0.5
            consecutive = 0
            if eta_cur < min_eta:
                stop_reason = "step-underflow"
                break
            continue
        j_new = j_mus_t + j_task_t

        if j_new <= j_cur + accept_tol:
            alpha, eq, pose, data = trial, eq_t, pose_t, data_t
            j_cur, j_mus, j_task = j_new, j_mus_t, j_task_t
            costate = backward_costate(pose, eq.nu, eq.kappa, grid, objective,
                                       _data=data)
            grad = hamiltonian_gradient(mset, eq, costate, alpha)
            accepted += 1
            consecutive += 1
            history.append((accepted, j_cur, j_mus, j_task,
                            float(np.abs(grad).max())))
            if accepted in snapshot_iters:
                snapshots[accepted] = alpha.copy()
            if j_cur < best[0]:
                best = (j_cur, alpha.copy(), eq, pose)
            if consecutive >= eta_growth_after:
                eta_cur = min(eta_cur * 1.2, eta_cap)
                consecutive = 0
            if len(history) > window:
                js = [row[1] for row in history[-window:]]
                if max(js) - min(js) < window_rel_tol * (1.0 + abs(j_cur)):
                    stop_reason = "objective-window"
                    break
        else:
            eta_cur *= 0.5
            consecutive = 0
            if eta_cur < min_eta:
                stop_reason = "step-underflow"
                break

    j_best, alpha_best, eq_best, pose_best = best
    return FBResult(alpha=alpha_best, equilibrium=eq_best, pose=pose_best,
                    objective_value=j_best, history=np.array(history),
                    iterations=accepted, eta_final=eta_cur,
                    stop_reason=stop_reason, snapshots=snapshots)
