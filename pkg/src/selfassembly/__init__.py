"""Open-loop electrode control for self-assembly of charged particles on a line."""

from .core import Geometry, energy, force, hessian, reference_geometry
from .design import DesignOptions, Schedule, StagePlan, optimize_static, plan_schedule
from .roa import Composition, Pattern, enumerate_roas, roa_of_pattern
from .steady import NoiseParams, ProbEstimate

__all__ = [
    "Composition",
    "DesignOptions",
    "Geometry",
    "NoiseParams",
    "Pattern",
    "ProbEstimate",
    "Schedule",
    "StagePlan",
    "energy",
    "enumerate_roas",
    "force",
    "hessian",
    "optimize_static",
    "reference_geometry",
    "plan_schedule",
    "roa_of_pattern",
]
