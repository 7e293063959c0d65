"""Task objectives for the static control design: reaching and grasping.

An objective supplies the running cost density that depends on the arm pose
(task shaping terms and obstacle penalties) together with its position and
orientation gradients, plus a terminal cost on the tip pose.  The activation
effort term is handled by the optimizer itself since it does not depend on the
pose.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFrame, OctoarmError


def reach_frame(x_star, pose, fallback_d2=None):
    """Target tip orientation for a reach: point d3 at the target, keep d2
    normal to the plane spanned by the base and tip sight lines.

    Raises DegenerateFrame when the two sight lines are colinear, unless a
    fallback d2 direction is supplied (it is then projected orthogonal to the
    target direction).
    """
    x_star = np.asarray(x_star, dtype=float).reshape(3)
    r0 = x_star - pose.x[0]
    rl = x_star - pose.x[-1]
    n0, nl = np.linalg.norm(r0), np.linalg.norm(rl)
    if n0 < 1e-12 or nl < 1e-12:
        raise OctoarmError("reach_frame: target coincides with an arm end")
    b0, bl = r0 / n0, rl / nl
    d3 = bl
    c = np.cross(b0, bl)
    cn = np.linalg.norm(c)
    if cn < 1e-8:
        if fallback_d2 is None:
            raise DegenerateFrame(
                "target colinear with the base sight line; no unique frame")
        d2 = np.asarray(fallback_d2, dtype=float).reshape(3)
        d2 = d2 - np.dot(d2, d3) * d3
        d2n = np.linalg.norm(d2)
        if d2n < 1e-8:
            raise DegenerateFrame("fallback direction parallel to the target line")
        d2 = d2 / d2n
    else:
        d2 = c / cn
    d1 = np.cross(d2, d3)
    return np.column_stack([d1, d2, d3])


@dataclass(frozen=True)
class Cylinder:
    """Solid circular cylinder: axis through ``center`` along unit ``axis``."""

    center: np.ndarray
    axis: np.ndarray
    radius: float
    height: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        a = np.asarray(self.axis, dtype=float).reshape(3)
        an = np.linalg.norm(a)
        if an < 1e-12:
            raise OctoarmError("Cylinder: axis must be a nonzero vector")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "axis", a / an)
        if not (self.radius > 0.0 and self.height > 0.0):
            raise OctoarmError("Cylinder: radius and height must be positive")

    def signed_distance(self, x):
        """Signed distance to the solid set (positive outside) and its gradient.

        Vectorized over points with shape (M, 3); returns (d (M,), grad (M, 3)).
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = x - self.center
        z = p @ self.axis
        radial = p - z[:, None] * self.axis
        rho = np.linalg.norm(radial, axis=-1)
        u_r = np.divide(radial, rho[:, None], out=np.zeros_like(radial),
                        where=rho[:, None] > 1e-15)
        dr = rho - self.radius
        dz = np.abs(z) - 0.5 * self.height
        u_z = np.sign(z)[:, None] * self.axis

        drp = np.maximum(dr, 0.0)
        dzp = np.maximum(dz, 0.0)
        d_out = np.hypot(drp, dzp)
        outside = d_out > 0.0
        d_in = np.maximum(dr, dz)

        d = np.where(outside, d_out, d_in)
        grad_out = (drp[:, None] * u_r + dzp[:, None] * u_z) / np.where(
            outside, d_out, 1.0)[:, None]
        grad_in = np.where((dr >= dz)[:, None], u_r, u_z)
        grad = np.where(outside[:, None], grad_out, grad_in)
        return d, grad

    def contains(self, x):
        d, _ = self.signed_distance(x)
        return d <= 0.0


class TaskObjective:
    """Base interface: pose-dependent running cost and terminal cost."""

    mu_pos: float
    mu_dir: float

    def lagrangian(self, s, x, q):
        """Running cost density and gradients at points ``s``.

        Returns (value (M,), d/dx (M, 3), d/dQ (M, 3, 3)).
        """
        m = np.atleast_1d(s).shape[0]
        return np.zeros(m), np.zeros((m, 3)), np.zeros((m, 3, 3))

    def terminal(self, x, q):
        """Terminal cost and gradients at the tip pose.

        Returns (value, d/dx (3,), d/dQ (3, 3)).
        """
        return 0.0, np.zeros(3), np.zeros((3, 3))


@dataclass
class ReachTask(TaskObjective):
    """Drive the tip to ``x_star`` with orientation ``q_star``."""

    x_star: np.ndarray
    q_star: np.ndarray
    mu_pos: float = 1e6
    mu_dir: float = 1e3

    def __post_init__(self):
        self.x_star = np.asarray(self.x_star, dtype=float).reshape(3)
        self.q_star = np.asarray(self.q_star, dtype=float).reshape(3, 3)
        if np.abs(self.q_star.T @ self.q_star - np.eye(3)).max() > 1e-8:
            raise OctoarmError("ReachTask: q_star must be a rotation")

    @classmethod
    def toward(cls, x_star, pose, mu_pos=1e6, mu_dir=1e3):
        """Build the task from the initial pose, with the degenerate-frame
        fallback reusing the initial tip normal d2(L)."""
        q_star = reach_frame(x_star, pose, fallback_d2=pose.Q[-1][:, 1])
        return cls(x_star=x_star, q_star=q_star, mu_pos=mu_pos, mu_dir=mu_dir)

    def terminal(self, x, q):
        dx = self.x_star - x
        dq = q - self.q_star
        value = 0.5 * self.mu_pos * float(dx @ dx) \
            + 0.5 * self.mu_dir * float(np.sum(dq * dq))
        return value, -self.mu_pos * dx, self.mu_dir * dq


@dataclass
class GraspTask(TaskObjective):
    """Wrap the arm around a cylinder beyond the wrap-start coordinate.

    The squeeze term pulls the arm surface toward the interior point, the
    orientation term turns d1 toward it, and the obstacle penalty keeps the
    arm tube outside the solid cylinder everywhere.
    """

    cylinder: Cylinder
    x_star: np.ndarray
    wrap_start: float
    radius_fn: object          # callable s -> arm radius r(s)
    mu_pos: float = 1e6
    mu_dir: float = 1e3
    penalty_weight: float = 1e7

    def __post_init__(self):
        self.x_star = np.asarray(self.x_star, dtype=float).reshape(3)
        if not self.cylinder.contains(self.x_star[None])[0]:
            raise OctoarmError("GraspTask: x_star must lie inside the cylinder")
        if self.wrap_start < 0.0:
            raise OctoarmError("GraspTask: wrap_start must be non-negative")

    def violation(self, s, x):
        """Penetration depth of the arm tube into the cylinder, Psi (M,)."""
        d, _ = self.cylinder.signed_distance(x)
        return self.radius_fn(np.atleast_1d(s)) - d

    def lagrangian(self, s, x, q):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ind = (s >= self.wrap_start).astype(float)
        r_arm = self.radius_fn(s)

        dvec = self.x_star - x
        rho = np.linalg.norm(dvec, axis=-1)
        rho_safe = np.where(rho > 1e-15, rho, 1.0)
        b = dvec / rho_safe[:, None]
        d1 = q[..., :, 0]
        gap = rho - r_arm
        bd1 = np.einsum("mi,mi->m", b, d1)

        value = ind * (0.5 * self.mu_pos * gap * gap
                       + 0.5 * self.mu_dir * (1.0 - bd1))
        lx = ind[:, None] * (-self.mu_pos * gap[:, None] * b
                             + 0.5 * self.mu_dir
                             * (d1 - bd1[:, None] * b) / rho_safe[:, None])
        lq = np.zeros(x.shape[:1] + (3, 3))
        lq[..., :, 0] = (-0.5 * self.mu_dir * ind)[:, None] * b

        dist, ddist = self.cylinder.signed_distance(x)
        psi = r_arm - dist
        active = np.maximum(psi, 0.0)
        value = value + self.penalty_weight * active * active
        lx = lx - 2.0 * self.penalty_weight * active[:, None] * ddist
        return value, lx, lq
