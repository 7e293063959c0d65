"""Muscle geometry, force-length behavior, loads, and stored-energy functions.

Thirteen virtual fibers act on the rod: one transverse ring (TM), four
longitudinal fibers (LM0..LM3), and two helical families of four oblique
fibers each (OMp0..3 clockwise, OMm0..3 counter-clockwise).  The fibers are
driven through seven control channels: TM, the four LMs individually, and one
shared channel per oblique family.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import OctoarmError
from .se3 import cross as _cross, hat as _hat

# Active force-length polynomial, normalized tension vs local length ratio.
_FL_COEFFS = (3.06, -13.64, 18.01, -6.44)

CHANNELS = ("TM", "LM0", "LM1", "LM2", "LM3", "OMp", "OMm")
FIBERS = ("TM", "LM0", "LM1", "LM2", "LM3",
          "OMp0", "OMp1", "OMp2", "OMp3", "OMm0", "OMm1", "OMm2", "OMm3")
CHANNEL_OF_FIBER = np.array([0, 1, 2, 3, 4, 5, 5, 5, 5, 6, 6, 6, 6])


def _fl_cubic(ell):
    c3, c2, c1, c0 = _FL_COEFFS
    return ((c3 * ell + c2) * ell + c1) * ell + c0


def _fl_breakpoints():
    """Support of the clamped curve: cubic roots and the level-1 crossing."""
    c3, c2, c1, c0 = _FL_COEFFS
    roots = np.roots([c3, c2, c1, c0])
    real = np.sort(roots[np.abs(roots.imag) < 1e-9].real)
    if real.size != 3:
        raise OctoarmError("force-length cubic must have three real roots")
    ones = np.roots([c3, c2, c1, c0 - 1.0])
    ones = np.sort(ones[np.abs(ones.imag) < 1e-9].real)
    ones = ones[ones > real[2]]
    if ones.size != 1:
        raise OctoarmError("force-length cubic must cross 1 once past its support")
    return real[0], real[1], real[2], ones[0]


_R1, _R2, _R3, _R4 = _fl_breakpoints()


def force_length(ell):
    """Normalized active tension h in [0, 1] at local length ratio ``ell``."""
    ell = np.asarray(ell, dtype=float)
    return np.clip(_fl_cubic(ell), 0.0, 1.0)


def force_length_slope(ell):
    """One-sided derivative of the clamped force-length curve.

    Equals the cubic's slope where the curve is active and zero on the clamped
    stretches; at the clamp kinks this is the interior one-sided limit.
    """
    ell = np.asarray(ell, dtype=float)
    c3, c2, c1, _ = _FL_COEFFS
    val = _fl_cubic(ell)
    slope = (3.0 * c3 * ell + 2.0 * c2) * ell + c1
    return np.where((val > 0.0) & (val < 1.0), slope, 0.0)


def _anti_cubic(u):
    c3, c2, c1, c0 = _FL_COEFFS
    return (((c3 / 4.0 * u + c2 / 3.0) * u + c1 / 2.0) * u + c0) * u


def _anti_cubic_over_u3(u):
    # cubic/u^3 = c3 + c2/u + c1/u^2 + c0/u^3
    c3, c2, c1, c0 = _FL_COEFFS
    return c3 * u + c2 * np.log(u) - c1 / u - 0.5 * c0 / (u * u)


def _anti_one(u):
    return u


def _anti_one_over_u3(u):
    return -0.5 / (u * u)


# (lo, hi, antiderivative of h, antiderivative of h/u^3) on each piece.
_PIECES = (
    (_R1, _R2, _anti_cubic, _anti_cubic_over_u3),
    (_R3, _R4, _anti_cubic, _anti_cubic_over_u3),
    (_R4, np.inf, _anti_one, _anti_one_over_u3),
)


def _integral_from_one(ell, which):
    """Closed-form integral of h (which=0) or h/u^3 (which=1) from 1 to ell."""
    ell = np.asarray(ell, dtype=float)
    if np.any(ell <= 0.0):
        raise OctoarmError("force-length integral needs positive length ratio")
    total = np.zeros_like(ell)
    for lo, hi, anti_h, anti_h3 in _PIECES:
        anti = anti_h if which == 0 else anti_h3
        hi_eff = hi if np.isfinite(hi) else max(float(ell.max()), 1.0) + 1.0
        a = np.clip(1.0, lo, hi_eff)
        b = np.clip(ell, lo, hi_eff)
        total += anti(b) - anti(a)
    return total


def force_length_integral(ell):
    """Integral of h from 1 to ell (dimensionless)."""
    return _integral_from_one(ell, 0)


def force_length_integral_tm(ell):
    """Integral of h(u)/u^3 from 1 to ell (dimensionless)."""
    return _integral_from_one(ell, 1)


@dataclass(frozen=True)
class MuscleParams:
    """Material table for the three muscle groups."""

    tm_sigma_max: float = 15e3
    tm_area_ratio: float = 1.0 / 8.0
    lm_sigma_max: float = 10e3
    lm_area_ratio: float = 1.0 / 16.0
    lm_beta: float = 5.0 / 8.0
    om_sigma_max: float = 100e3
    om_area_ratio: float = 1.0 / 256.0
    om_beta: float = 15.0 / 16.0
    om_winding_cycles: float = 6.0


@dataclass(frozen=True)
class MuscleSet:
    """Stacked per-fiber geometry and material arrays on the element grid.

    Leading axis indexes the 13 fibers in ``FIBERS`` order.
    """

    params: MuscleParams
    grid: object
    sigma_max: np.ndarray        # (13,)
    sign: np.ndarray             # (13,) +1 contractile force, -1 extensile (TM)
    is_tm: np.ndarray            # (13,) bool
    area: np.ndarray             # (13, N) fiber cross-section, m^2
    r_rel: np.ndarray            # (13, N, 3) off-center position, material frame
    dr_rel: np.ndarray           # (13, N, 3) arc-length derivative of r_rel
    nu_rest: np.ndarray          # (13, N, 3) rest fiber strain
    nu_rest_norm: np.ndarray     # (13, N)
    r_hat: np.ndarray = field(repr=False, default=None)  # (13, N, 3, 3)
    _pos_helpers: tuple = field(repr=False, default=None)

    @property
    def n_fibers(self):
        return len(FIBERS)

    @property
    def n_channels(self):
        return len(CHANNELS)

    def fiber_index(self, name):
        return FIBERS.index(name)

    def relative_position_at(self, fiber, s):
        """Continuous off-center position of one fiber (tests and plotting)."""
        rp, _ = self._pos_helpers[self.fiber_index(fiber) if isinstance(fiber, str) else fiber]
        return rp(np.asarray(s, dtype=float))

    def relative_position_slope_at(self, fiber, s):
        _, drp = self._pos_helpers[self.fiber_index(fiber) if isinstance(fiber, str) else fiber]
        return drp(np.asarray(s, dtype=float))


def _fiber_geometry(params, props):
    """Per-fiber continuous (position, slope) closures in the material frame."""
    length = props.length

    def make_lm(k):
        phase = k * np.pi / 2.0
        direction = np.array([np.cos(phase), np.sin(phase), 0.0])

        def pos(s):
            return params.lm_beta * np.multiply.outer(props.radius_at(s), direction)

        def slope(s):
            s = np.asarray(s, dtype=float)
            return params.lm_beta * props.taper_slope * np.broadcast_to(
                direction, s.shape + (3,)).copy()

        return pos, slope

    def make_om(k, winding):
        phase = k * np.pi / 2.0
        rate = winding * 2.0 * np.pi * params.om_winding_cycles / length

        def pos(s):
            s = np.asarray(s, dtype=float)
            ang = phase + rate * s
            return params.om_beta * props.radius_at(s)[..., None] * np.stack(
                [np.cos(ang), np.sin(ang), np.zeros_like(ang)], axis=-1)

        def slope(s):
            s = np.asarray(s, dtype=float)
            ang = phase + rate * s
            r = props.radius_at(s)
            dr = props.taper_slope
            return params.om_beta * np.stack(
                [dr * np.cos(ang) - r * rate * np.sin(ang),
                 dr * np.sin(ang) + r * rate * np.cos(ang),
                 np.zeros_like(ang)], axis=-1)

        return pos, slope

    def make_tm():
        def pos(s):
            s = np.asarray(s, dtype=float)
            return np.zeros(s.shape + (3,))

        return pos, pos

    helpers = [make_tm()]
    helpers += [make_lm(k) for k in range(4)]
    helpers += [make_om(k, +1.0) for k in range(4)]
    helpers += [make_om(k, -1.0) for k in range(4)]
    return helpers


def build_muscles(props, params=None):
    """Populate fiber geometry, areas, and rest strains on the element grid."""
    params = params or MuscleParams()
    grid = props.grid
    s = grid.s_elems
    helpers = _fiber_geometry(params, props)

    n_fib = len(FIBERS)
    r_rel = np.zeros((n_fib, grid.n_elements, 3))
    dr_rel = np.zeros((n_fib, grid.n_elements, 3))
    for i, (pos, slope) in enumerate(helpers):
        r_rel[i] = pos(s)
        dr_rel[i] = slope(s)

    ratios = np.array([params.tm_area_ratio] + [params.lm_area_ratio] * 4
                      + [params.om_area_ratio] * 8)
    sigma = np.array([params.tm_sigma_max] + [params.lm_sigma_max] * 4
                     + [params.om_sigma_max] * 8)
    sign = np.array([-1.0] + [1.0] * 12)
    is_tm = np.array([True] + [False] * 12)
    area = ratios[:, None] * props.area[None, :]

    nu0 = props.nu_rest[None, None, :] + np.cross(
        props.kappa_rest[None, None, :], r_rel) + dr_rel
    nu0_norm = np.linalg.norm(nu0, axis=-1)

    return MuscleSet(params=params, grid=grid, sigma_max=sigma, sign=sign,
                     is_tm=is_tm, area=area, r_rel=r_rel, dr_rel=dr_rel,
                     nu_rest=nu0, nu_rest_norm=nu0_norm, r_hat=_hat(r_rel),
                     _pos_helpers=tuple(helpers))


@dataclass
class ActivationProfile:
    """Per-channel, per-element activation values in [0, 1], shape (7, N)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != len(CHANNELS):
            raise OctoarmError(
                f"ActivationProfile: expected ({len(CHANNELS)}, N) array, got {v.shape}")
        if np.any(v < 0.0) or np.any(v > 1.0) or not np.all(np.isfinite(v)):
            raise OctoarmError("ActivationProfile: values must lie in [0, 1]")
        self.values = v

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros((len(CHANNELS), grid.n_elements)))

    @classmethod
    def constant(cls, grid, **channel_values):
        v = np.zeros((len(CHANNELS), grid.n_elements))
        for name, val in channel_values.items():
            v[CHANNELS.index(name)] = val
        return cls(v)

    def copy(self):
        return ActivationProfile(self.values.copy())

    @property
    def n_elements(self):
        return self.values.shape[1]


def fiber_activations(alpha_values):
    """Expand channel activations (7, N) to the fiber axis (13, N)."""
    return alpha_values[CHANNEL_OF_FIBER]




def _fiber_shape(mset, batch_ndim):
    """Reshape helper: align fiber arrays against (..., N, ...) batches."""
    return (mset.n_fibers,) + (1,) * batch_ndim


def muscle_strain(mset, nu, kappa):
    """Fiber strain nu_m = nu + kappa x r_m + dr_m/ds.

    ``nu``/``kappa`` may carry leading batch axes: shapes (..., N, 3) produce
    (13, ..., N, 3).
    """
    nu = np.atleast_2d(np.asarray(nu, dtype=float))
    kappa = np.atleast_2d(np.asarray(kappa, dtype=float))
    batch = nu.ndim - 2
    shape = _fiber_shape(mset, batch)
    r = mset.r_rel.reshape(shape + mset.r_rel.shape[1:])
    dr = mset.dr_rel.reshape(shape + mset.dr_rel.shape[1:])
    return nu[None] + _cross(kappa[None], r) + dr


def muscle_length(mset, nu_m):
    """Local length ratio per fiber.

    Transverse fibers shorten as the arm stretches (inverse square root law
    from volume conservation); longitudinal and oblique fibers follow their
    strain norm directly.
    """
    norm = np.sqrt(np.einsum("...i,...i->...", nu_m, nu_m))
    if np.any(norm <= 0.0):
        raise OctoarmError("muscle_length: fiber strain has zero magnitude")
    batch = nu_m.ndim - 3
    shape = _fiber_shape(mset, batch)
    is_tm = mset.is_tm.reshape(shape + (1,))
    rest = mset.nu_rest_norm.reshape(shape + mset.nu_rest_norm.shape[1:])
    return np.where(is_tm, np.sqrt(rest / norm), norm / rest)


def fiber_unit_loads(mset, nu, kappa):
    """Force and couple of each fiber at unit activation, material frame.

    Returns (g_n, g_m), each (13, ..., N, 3) for batched strain input.  The
    actual loads are the channel activations times these, summed over the
    fibers of each channel.
    """
    nu_m = muscle_strain(mset, nu, kappa)
    norm = np.sqrt(np.einsum("...i,...i->...", nu_m, nu_m))
    if np.any(norm <= 0.0):
        raise OctoarmError("fiber_unit_loads: fiber strain has zero magnitude")
    ell = muscle_length(mset, nu_m)
    batch = nu_m.ndim - 3
    shape = _fiber_shape(mset, batch)
    area = mset.area.reshape(shape + mset.area.shape[1:])
    sigma = mset.sigma_max.reshape(shape + (1,))
    sign = mset.sign.reshape(shape + (1,))
    f = sign * sigma * area * force_length(ell)
    g_n = (f / norm)[..., None] * nu_m
    r = mset.r_rel.reshape(shape + mset.r_rel.shape[1:])
    g_m = _cross(r, g_n)
    return g_n, g_m


def channel_unit_loads(mset, nu, kappa):
    """Per-channel unit-activation loads, shape (7, N, 6)."""
    g_n, g_m = fiber_unit_loads(mset, nu, kappa)
    g6 = np.concatenate([g_n, g_m], axis=-1)
    out = np.empty((len(CHANNELS), g6.shape[1], 6))
    out[0] = g6[0]
    out[1:5] = g6[1:5]
    out[5] = g6[5:9].sum(axis=0)
    out[6] = g6[9:13].sum(axis=0)
    return out


def fiber_load_gradients(mset, nu, kappa):
    """Derivative of each fiber's unit-activation force w.r.t. its own strain.

    Returns G with shape (13, N, 3, 3); symmetric by construction since the
    force field is the gradient of the fiber stored energy.
    """
    nu_m = muscle_strain(mset, nu, kappa)
    norm = np.sqrt(np.einsum("...i,...i->...", nu_m, nu_m))
    if np.any(norm <= 0.0):
        raise OctoarmError("fiber_load_gradients: fiber strain has zero magnitude")
    u = nu_m / norm[..., None]
    ell = muscle_length(mset, nu_m)
    sig_a = mset.sigma_max[:, None] * mset.area
    f_over = sig_a * force_length(ell) / norm
    hp = sig_a * force_length_slope(ell)
    # d(ell)/d|nu_m| differs between the square-root (TM) and linear laws.
    dfd = np.where(mset.is_tm[:, None],
                   hp * (-0.5 * ell / norm),
                   hp / mset.nu_rest_norm)
    sign = mset.sign[:, None]
    coef_uu = sign * (dfd - f_over)
    coef_eye = sign * f_over
    g = coef_uu[..., None, None] * (u[..., :, None] * u[..., None, :])
    for i in range(3):
        g[..., i, i] += coef_eye
    return g


def muscle_loads(mset, nu, kappa, alpha):
    """Total active loads (sum over fibers) for an activation profile.

    Returns (n_m, m_m), each (N, 3), in the material frame.
    """
    g_n, g_m = fiber_unit_loads(mset, nu, kappa)
    a_fib = fiber_activations(alpha.values)
    n_m = np.einsum("fn,fni->ni", a_fib, g_n)
    m_m = np.einsum("fn,fni->ni", a_fib, g_m)
    return n_m, m_m


def muscle_stored_energy(mset, nu_m):
    """Stored-energy density of every fiber at fiber strain nu_m, (13, N) J/m.

    Closed-form evaluation of the line integral of the active force field; the
    transverse fiber picks up the inverse-cube length weighting from its
    square-root length law.  Zero at the rest strain by construction.
    """
    ell = muscle_length(mset, nu_m)
    batch = nu_m.ndim - 3
    shape = _fiber_shape(mset, batch)
    scale = (mset.sigma_max.reshape(shape + (1,))
             * mset.area.reshape(shape + mset.area.shape[1:])
             * mset.nu_rest_norm.reshape(shape + mset.nu_rest_norm.shape[1:]))
    is_tm = mset.is_tm.reshape(shape + (1,))
    w_long = scale * force_length_integral(ell)
    w_tm = 2.0 * scale * force_length_integral_tm(ell)
    return np.where(is_tm, w_tm, w_long)


def muscle_energy_total(mset, nu, kappa, alpha):
    """Activation-weighted muscle stored-energy density per element, (N,)."""
    w_fib = muscle_stored_energy(mset, muscle_strain(mset, nu, kappa))
    return np.einsum("fn,fn->n", fiber_activations(alpha.values), w_fib)
