"""Tapered-arm geometry, inertia/rigidity/damping matrices, passive elasticity.

All material properties are evaluated at element midpoints and held piecewise
constant, consistent with the staggered strain layout.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import OctoarmError
from .se3 import Grid


@dataclass(frozen=True)
class RodProperties:
    """Scalar parameters plus per-element property arrays of the tapered arm.

    Units are SI throughout: lengths m, moduli Pa, density kg/m^3, damping 1/s.
    """

    grid: Grid
    length: float
    r_base: float
    r_tip: float
    youngs: float
    shear_modulus: float
    density: float
    zeta_v: float
    zeta_w: float
    nu_rest: np.ndarray
    kappa_rest: np.ndarray

    radius: np.ndarray = field(init=False)      # (N,)
    area: np.ndarray = field(init=False)        # (N,)
    second_moment: np.ndarray = field(init=False)   # (N, 3) diag of J
    stiffness_shear: np.ndarray = field(init=False)  # (N, 3) diag of S
    stiffness_bend: np.ndarray = field(init=False)   # (N, 3) diag of B
    mass_density: np.ndarray = field(init=False)     # (N,) rho*A
    inertia_density: np.ndarray = field(init=False)  # (N, 3) rho*J diag

    def __post_init__(self):
        for name in ("length", "r_base", "r_tip", "youngs", "shear_modulus",
                     "density"):
            if not getattr(self, name) > 0.0:
                raise OctoarmError(f"RodProperties: {name} must be positive")
        if self.zeta_v < 0.0 or self.zeta_w < 0.0:
            raise OctoarmError("RodProperties: damping must be non-negative")
        if self.r_tip > self.r_base:
            raise OctoarmError("RodProperties: r_tip must not exceed r_base")
        nu0 = np.asarray(self.nu_rest, dtype=float).reshape(3)
        k0 = np.asarray(self.kappa_rest, dtype=float).reshape(3)
        if not nu0[2] > 0.0:
            raise OctoarmError("RodProperties: rest stretch must be positive")
        object.__setattr__(self, "nu_rest", nu0)
        object.__setattr__(self, "kappa_rest", k0)

        r = self.radius_at(self.grid.s_elems)
        a = np.pi * r * r
        j = (a * a / (4.0 * np.pi))[:, None] * np.array([1.0, 1.0, 2.0])
        s_diag = np.column_stack([self.shear_modulus * a,
                                  self.shear_modulus * a,
                                  self.youngs * a])
        b_diag = np.column_stack([self.youngs * j[:, 0],
                                  self.youngs * j[:, 1],
                                  self.shear_modulus * j[:, 2]])
        object.__setattr__(self, "radius", r)
        object.__setattr__(self, "area", a)
        object.__setattr__(self, "second_moment", j)
        object.__setattr__(self, "stiffness_shear", s_diag)
        object.__setattr__(self, "stiffness_bend", b_diag)
        object.__setattr__(self, "mass_density", self.density * a)
        object.__setattr__(self, "inertia_density", self.density * j)

    def radius_at(self, s):
        """Linear taper between base and tip radii."""
        s = np.asarray(s, dtype=float)
        return self.r_tip * s / self.length + self.r_base * (self.length - s) / self.length

    def area_at(self, s):
        r = self.radius_at(s)
        return np.pi * r * r

    @property
    def taper_slope(self):
        """d r / d s of the linear taper (constant)."""
        return (self.r_tip - self.r_base) / self.length

    def rest_strain(self):
        """Intrinsic strain arrays broadcast over elements, shapes (N, 3)."""
        n = self.grid.n_elements
        return (np.tile(self.nu_rest, (n, 1)), np.tile(self.kappa_rest, (n, 1)))


def build_properties(grid, length=None, r_base=0.012, r_tip=0.0012,
                     youngs=10e3, shear_modulus=40e3 / 9.0, density=1050.0,
                     zeta_v=0.02, zeta_w=0.02,
                     nu_rest=(0.0, 0.0, 1.0), kappa_rest=(0.0, 0.0, 0.0)):
    """Assemble RodProperties; defaults reproduce the reference arm."""
    if length is None:
        length = grid.length
    if abs(length - grid.length) > 1e-12 * max(1.0, grid.length):
        raise OctoarmError("build_properties: grid length and rod length differ")
    return RodProperties(grid=grid, length=length, r_base=r_base, r_tip=r_tip,
                         youngs=youngs, shear_modulus=shear_modulus,
                         density=density, zeta_v=zeta_v, zeta_w=zeta_w,
                         nu_rest=nu_rest, kappa_rest=kappa_rest)


def elastic_energy_density(props, nu, kappa):
    """Quadratic stored-energy density of passive elasticity, per element (J/m)."""
    dnu = np.atleast_2d(nu) - props.nu_rest
    dk = np.atleast_2d(kappa) - props.kappa_rest
    w = 0.5 * np.einsum("ni,ni->n", dnu * props.stiffness_shear, dnu)
    w += 0.5 * np.einsum("ni,ni->n", dk * props.stiffness_bend, dk)
    return w


def elastic_loads(props, nu, kappa):
    """Constitutive loads (n_e, m_e): exact strain gradient of the energy."""
    dnu = np.atleast_2d(nu) - props.nu_rest
    dk = np.atleast_2d(kappa) - props.kappa_rest
    return props.stiffness_shear * dnu, props.stiffness_bend * dk
