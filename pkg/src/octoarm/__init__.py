"""Muscular soft-arm statics, energy-shaping control design, and dynamics."""

from .errors import (ConfigError, DegenerateFrame, Instability, NonConvergence,
                     OctoarmError, SingularJacobian)
from .se3 import Grid, Pose, PoseField, hat, reconstruct_pose, vee
from .rod import RodProperties, build_properties, elastic_energy_density, elastic_loads
from .muscles import (CHANNELS, ActivationProfile, MuscleParams, MuscleSet,
                      build_muscles, force_length, muscle_length, muscle_loads,
                      muscle_stored_energy, muscle_strain)

__all__ = [
    "ActivationProfile", "CHANNELS", "ConfigError", "DegenerateFrame", "Grid",
    "Instability", "MuscleParams", "MuscleSet", "NonConvergence", "OctoarmError",
    "Pose", "PoseField", "RodProperties", "SingularJacobian", "build_muscles",
    "build_properties", "elastic_energy_density", "elastic_loads", "force_length",
    "hat", "muscle_length", "muscle_loads", "muscle_stored_energy",
    "muscle_strain", "reconstruct_pose", "vee",
]
