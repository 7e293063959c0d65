"""Rotation/rigid-transform algebra and pose reconstruction on a staggered grid.

Conventions: rotation matrices carry material-frame vectors to the lab frame,
with columns equal to the directors (d1, d2, d3).  Strains are expressed in the
material frame; shears/stretch ``nu`` and curvatures/twist ``kappa`` are
piecewise constant on elements, poses live on nodes.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import OctoarmError

_SMALL_ANGLE = 1e-6


def cross(a, b):
    """Cross product over the last axis; faster than np.cross for small arrays."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def hat(z):
    """Skew matrix of a 3-vector: hat(z) @ y == cross(z, y).

    Accepts stacked input with shape (..., 3), returns (..., 3, 3).
    """
    z = np.asarray(z, dtype=float)
    out = np.zeros(z.shape[:-1] + (3, 3))
    out[..., 0, 1] = -z[..., 2]
    out[..., 0, 2] = z[..., 1]
    out[..., 1, 0] = z[..., 2]
    out[..., 1, 2] = -z[..., 0]
    out[..., 2, 0] = -z[..., 1]
    out[..., 2, 1] = z[..., 0]
    return out


def vee(a, tol=1e-12):
    """Inverse of hat.  Rejects matrices that are not skew within ``tol``."""
    a = np.asarray(a, dtype=float)
    sym = np.abs(a + np.swapaxes(a, -1, -2)).max()
    if sym > tol:
        raise OctoarmError(f"vee: input not skew-symmetric (|A + A^T| = {sym:.3e})")
    return np.stack([a[..., 2, 1], a[..., 0, 2], a[..., 1, 0]], axis=-1)


def _rot_coeffs(theta):
    """(sin t / t, (1-cos t)/t^2) with series at small angles."""
    theta = np.asarray(theta, dtype=float)
    small = theta < _SMALL_ANGLE
    t2 = theta * theta
    safe = np.where(small, 1.0, theta)
    a1 = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(safe) / safe)
    a2 = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0,
                  (1.0 - np.cos(safe)) / (safe * safe))
    return a1, a2


def _lj_coeffs(theta):
    """Left-Jacobian coefficients ((1-cos t)/t^2, (t-sin t)/t^3)."""
    theta = np.asarray(theta, dtype=float)
    small = theta < _SMALL_ANGLE
    t2 = theta * theta
    safe = np.where(small, 1.0, theta)
    a2 = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    a3 = np.where(small, 1.0 / 6.0 - t2 / 120.0,
                  (safe - np.sin(safe)) / (safe ** 3))
    return a2, a3


def _ljinv_coeff(theta):
    """Quadratic coefficient of the inverse left Jacobian."""
    theta = np.asarray(theta, dtype=float)
    small = theta < _SMALL_ANGLE
    t2 = theta * theta
    safe = np.where(small, 1.0, theta)
    return np.where(
        small,
        1.0 / 12.0 + t2 / 720.0,
        (1.0 - safe * np.sin(safe) / (2.0 * (1.0 - np.cos(safe)))) / (safe * safe),
    )


def so3_exp(u):
    """Rodrigues rotation exp(hat(u)) for stacked rotation vectors (..., 3)."""
    u = np.asarray(u, dtype=float)
    theta = np.linalg.norm(u, axis=-1)
    a1, a2 = _rot_coeffs(theta)
    k = hat(u)
    k2 = k @ k
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a1[..., None, None] * k + a2[..., None, None] * k2


def so3_log(r):
    """Rotation vector of stacked rotation matrices.  Robust near 0 and pi."""
    r = np.asarray(r, dtype=float)
    single = r.ndim == 2
    rs = r[None] if single else r.reshape((-1, 3, 3))
    tr = np.einsum("nii->n", rs)
    theta = np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))
    w = np.stack([rs[:, 2, 1] - rs[:, 1, 2],
                  rs[:, 0, 2] - rs[:, 2, 0],
                  rs[:, 1, 0] - rs[:, 0, 1]], axis=-1)

    # Generic branch: u = theta / (2 sin theta) * vee(R - R^T).
    sin_t = np.sin(theta)
    generic = sin_t > 1e-5
    factor = np.where(generic, theta / np.where(generic, 2.0 * sin_t, 1.0),
                      0.5 + theta * theta / 12.0)
    u = factor[:, None] * w

    # Near pi the generic branch is ill-conditioned; rebuild the axis from the
    # diagonal of R = cos t I + sin t hat(ax) + (1 - cos t) ax ax^T.
    near_pi = theta > 3.0
    for n in np.nonzero(near_pi)[0]:
        rn = rs[n]
        ct = (tr[n] - 1.0) / 2.0
        d = np.clip((np.diag(rn) - ct) / (1.0 - ct), 0.0, None)
        ax = np.sqrt(d)
        k = int(np.argmax(ax))
        for j in range(3):
            if j != k:
                ax[j] = (rn[j, k] + rn[k, j]) / (2.0 * (1.0 - ct) * ax[k])
        ax /= np.linalg.norm(ax)
        if np.dot(ax, w[n]) < 0.0:
            ax = -ax
        u[n] = theta[n] * ax

    u = u.reshape(r.shape[:-2] + (3,)) if not single else u[0]
    return u


def left_jacobian(u):
    """SO(3) left Jacobian V(u) = I + a2 hat(u) + a3 hat(u)^2.

    Satisfies exp-map translation coupling: integral over [0,1] of exp(t hat(u)).
    """
    u = np.asarray(u, dtype=float)
    theta = np.linalg.norm(u, axis=-1)
    a2, a3 = _lj_coeffs(theta)
    k = hat(u)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a2[..., None, None] * k + a3[..., None, None] * (k @ k)


def left_jacobian_inv(u):
    """Closed-form inverse of the SO(3) left Jacobian."""
    u = np.asarray(u, dtype=float)
    theta = np.linalg.norm(u, axis=-1)
    c2 = _ljinv_coeff(theta)
    k = hat(u)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye - 0.5 * k + c2[..., None, None] * (k @ k)


def element_rotation_kit(u):
    """Shared rotation factors for stacked rotation vectors (..., 3).

    Returns (exp_half, exp_full, jl_half, jl_inv_full) built from one skew
    matrix and its square; used by the dynamics load assembly where the same
    element rotation enters several maps.
    """
    u = np.asarray(u, dtype=float)
    theta = np.linalg.norm(u, axis=-1)
    k = hat(u)
    k2 = k @ k
    kh = 0.5 * k
    kh2 = 0.25 * k2
    eye = np.broadcast_to(np.eye(3), k.shape)
    a1h, a2h = _rot_coeffs(0.5 * theta)
    exp_half = eye + a1h[..., None, None] * kh + a2h[..., None, None] * kh2
    exp_full = exp_half @ exp_half
    b2, b3 = _lj_coeffs(0.5 * theta)
    jl_half = eye + b2[..., None, None] * kh + b3[..., None, None] * kh2
    c2 = _ljinv_coeff(theta)
    jl_inv = eye - kh + c2[..., None, None] * k2
    return exp_half, exp_full, jl_half, jl_inv


def se3_right_jacobian_T_apply(nu, kappa, vec, terms=10):
    """Apply the transposed right Jacobian of the rigid-transform exponential.

    For the twist w = (nu, kappa) (linear, angular) this evaluates
    J_r(w)^T v through the series sum over k of (-ad_w^T)^k v / (k+1)!,
    which converges rapidly for the small per-element twists used here.
    ``vec`` is split as (v1, v2) = (linear, angular) 3-vector pairs.
    """
    nu = np.asarray(nu, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    v1 = np.array(vec[..., :3], dtype=float)
    v2 = np.array(vec[..., 3:], dtype=float)
    out1, out2 = v1.copy(), v2.copy()
    t1, t2 = v1, v2
    fact = 1.0
    for k in range(1, terms + 1):
        # (-ad^T) (t1, t2) = (cross(kappa, t1), cross(nu, t1) + cross(kappa, t2))
        n1 = cross(kappa, t1)
        n2 = cross(nu, t1) + cross(kappa, t2)
        t1, t2 = n1, n2
        fact *= (k + 1.0)
        out1 += t1 / fact
        out2 += t2 / fact
    return np.concatenate([out1, out2], axis=-1)


def int_tau_exp(u):
    """Integral over [0,1] of tau * exp(tau hat(u)) dtau, stacked (..., 3, 3)."""
    u = np.asarray(u, dtype=float)
    theta = np.linalg.norm(u, axis=-1)
    small = theta < _SMALL_ANGLE
    t2 = theta * theta
    safe = np.where(small, 1.0, theta)
    st, ct = np.sin(safe), np.cos(safe)
    b1 = np.where(small, 1.0 / 3.0 - t2 / 30.0, (st - safe * ct) / safe ** 3)
    b2 = np.where(small, 1.0 / 8.0 - t2 / 144.0,
                  (t2 / 2.0 + 1.0 - ct - safe * st) / safe ** 4)
    k = hat(u)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return 0.5 * eye + b1[..., None, None] * k + b2[..., None, None] * (k @ k)


def orthonormalize(q):
    """Gram-Schmidt on the columns of a 3x3 rotation matrix."""
    q = np.asarray(q, dtype=float)
    d1 = q[:, 0] / np.linalg.norm(q[:, 0])
    d2 = q[:, 1] - np.dot(q[:, 1], d1) * d1
    d2 /= np.linalg.norm(d2)
    d3 = np.cross(d1, d2)
    return np.column_stack([d1, d2, d3])


@dataclass(frozen=True)
class Pose:
    """Position and orientation of one cross section.

    ``q`` columns are the directors d1, d2, d3 (d3 is the tangent at rest).
    """

    x: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(3)
        q = np.asarray(self.Q, dtype=float).reshape(3, 3)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "Q", q)
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(q)):
            raise OctoarmError("Pose: non-finite entries")
        err = np.abs(q.T @ q - np.eye(3)).max()
        if err > 1e-10:
            raise OctoarmError(f"Pose: Q not orthonormal (|Q^T Q - I| = {err:.3e})")
        if abs(np.linalg.det(q) - 1.0) > 1e-10:
            raise OctoarmError("Pose: det Q != +1")

    @staticmethod
    def identity():
        return Pose(np.zeros(3), np.eye(3))


@dataclass(frozen=True)
class Grid:
    """Uniform discretization of the arc length [0, L] into N elements."""

    n_elements: int
    length: float
    ds: float = field(init=False)
    s_nodes: np.ndarray = field(init=False)
    s_elems: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.n_elements < 1:
            raise OctoarmError("Grid: need at least one element")
        if not self.length > 0.0:
            raise OctoarmError("Grid: length must be positive")
        ds = self.length / self.n_elements
        object.__setattr__(self, "ds", ds)
        object.__setattr__(self, "s_nodes",
                           np.linspace(0.0, self.length, self.n_elements + 1))
        object.__setattr__(self, "s_elems",
                           self.s_nodes[:-1] + 0.5 * ds)


@dataclass
class PoseField:
    """Node poses: positions (N+1, 3) and rotation matrices (N+1, 3, 3)."""

    x: np.ndarray
    Q: np.ndarray

    @property
    def n_nodes(self):
        return self.x.shape[0]

    def tip(self):
        return Pose(self.x[-1], self.Q[-1])

    def copy(self):
        return PoseField(self.x.copy(), self.Q.copy())


def element_transforms(nu, kappa, ds):
    """Per-element rigid transform of the constant-strain exponential over ds.

    Returns rotations R (N, 3, 3) and translations t (N, 3) such that the pose
    advances by  x+ = x + Q t,  Q+ = Q R  across each element.
    """
    u = ds * np.asarray(kappa, dtype=float)
    r = so3_exp(u)
    t = ds * np.einsum("nij,nj->ni", left_jacobian(u), np.asarray(nu, dtype=float))
    return r, t


def reconstruct_pose(q0, nu, kappa, grid, renorm_every=100):
    """Integrate node poses from element strains by exact per-element updates.

    Parameters
    ----------
    q0 : Pose
        Base pose (node 0).
    nu, kappa : ndarray, shape (N, 3)
        Shear/stretch and curvature/twist per element.
    grid : Grid
    renorm_every : int
        Re-orthonormalize the running rotation every this many compositions to
        suppress round-off drift.

    Returns
    -------
    PoseField with N+1 node poses; node 0 equals ``q0``.
    """
    nu = np.atleast_2d(np.asarray(nu, dtype=float))
    kappa = np.atleast_2d(np.asarray(kappa, dtype=float))
    n = grid.n_elements
    if nu.shape != (n, 3) or kappa.shape != (n, 3):
        raise OctoarmError(
            f"reconstruct_pose: strain shape {nu.shape}/{kappa.shape} does not "
            f"match grid with {n} elements")
    if not (np.all(np.isfinite(nu)) and np.all(np.isfinite(kappa))):
        raise OctoarmError("reconstruct_pose: non-finite strain")
    if np.any(nu[:, 2] <= 0.0):
        raise OctoarmError("reconstruct_pose: axial stretch must stay positive")

    r_el, t_el = element_transforms(nu, kappa, grid.ds)
    homog = np.zeros((n + 1, 4, 4))
    homog[0] = np.eye(4)
    homog[1:, :3, :3] = r_el
    homog[1:, :3, 3] = t_el
    homog[1:, 3, 3] = 1.0
    # Inclusive prefix scan of the element transforms (log-depth doubling).
    shift = 1
    while shift <= n:
        prev = homog.copy()
        homog[shift:] = prev[:-shift] @ prev[shift:]
        shift *= 2
    base = np.zeros((4, 4))
    base[:3, :3] = q0.Q
    base[:3, 3] = q0.x
    base[3, 3] = 1.0
    chain = base @ homog
    x = chain[:, :3, 3].copy()
    q = chain[:, :3, :3].copy()
    for k in range(renorm_every, n + 1, renorm_every):
        q[k] = orthonormalize(q[k])
    return PoseField(x, q)


def midpoint_poses(pose, nu, kappa, grid):
    """Poses at element midpoints via the half-element exponential."""
    u_half = (0.5 * grid.ds) * kappa
    r_half = so3_exp(u_half)
    t_half = (0.5 * grid.ds) * np.einsum("nij,nj->ni", left_jacobian(u_half), nu)
    x_mid = pose.x[:-1] + np.einsum("nij,nj->ni", pose.Q[:-1], t_half)
    q_mid = pose.Q[:-1] @ r_half
    return x_mid, q_mid


def strains_from_poses(pose, grid):
    """Invert the dynamics strain map: element strains from node poses.

    Curvature comes from the rotation log between adjacent nodes; shears use
    the geodesic-midpoint frame, which keeps the energy gradient closed-form.
    """
    q = pose.Q
    rel = np.einsum("nji,njk->nik", q[:-1], q[1:])
    u = so3_log(rel)
    kappa = u / grid.ds
    q_mid = q[:-1] @ so3_exp(0.5 * u)
    dx = (pose.x[1:] - pose.x[:-1]) / grid.ds
    nu = np.einsum("nji,nj->ni", q_mid, dx)
    return nu, kappa, u, q_mid
