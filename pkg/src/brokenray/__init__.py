"""Glancing broken rays, broken ray transforms and boundary recovery in boundary normal coordinates."""

from .billiards import BrokenRay, PhaseState, TraceSettings, launch_glancing, trace
from .geometry import MetricChart, TomographySet, integrate_boundary_geodesic, parse_chart
from .reconstruction import RecoveryReport, recover_k, recover_k0
from .transforms import ScalarField, WeightSpec, boundary_ray_transform, broken_ray_transform

__all__ = ["BrokenRay", "PhaseState", "TraceSettings", "launch_glancing", "trace", "MetricChart", "TomographySet",
           "integrate_boundary_geodesic", "parse_chart", "RecoveryReport", "recover_k", "recover_k0", "ScalarField",
           "WeightSpec", "boundary_ray_transform", "broken_ray_transform"]
__version__ = "0.1.0"
