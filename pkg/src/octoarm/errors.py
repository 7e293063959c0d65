"""Exception types shared across the package."""


class OctoarmError(Exception):
    """Base class for all package errors."""


class NonConvergence(OctoarmError):
    """Pointwise equilibrium solve failed to reach tolerance."""

    def __init__(self, element, residual):
        self.element = int(element)
        self.residual = float(residual)
        super().__init__(
            f"equilibrium solve did not converge at element {self.element} "
            f"(residual {self.residual:.3e})"
        )


class SingularJacobian(OctoarmError):
    """Strain Jacobian of the load balance lost rank."""

    def __init__(self, element):
        self.element = int(element)
        super().__init__(f"singular strain Jacobian at element {self.element}")


class DegenerateFrame(OctoarmError):
    """Target direction is colinear with the base sight line."""


class Instability(OctoarmError):
    """Time integration blew up."""

    def __init__(self, time):
        self.time = float(time)
        super().__init__(f"simulation unstable at t = {self.time:.6g} s")


class ConfigError(OctoarmError):
    """Malformed experiment configuration."""

    def __init__(self, field, message):
        self.field = str(field)
        super().__init__(f"config field '{self.field}': {message}")
