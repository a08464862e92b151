"""Corridor statistics for homogeneous interval fragmentations.

Scale functions of the killed Levy process that governs good intervals, an
exact fragmentation simulator, martingale and growth statistics, box-counting
dimension estimates and an experiment runner.
"""
from __future__ import annotations

from .levy_scale import LevyModel, ScaleTable, exit_density, rho_beta, scale_table
from .measures import CATALOG, DislocationMeasure, binary_uniform

__all__ = ["CATALOG", "DislocationMeasure", "LevyModel", "ScaleTable", "binary_uniform",
           "exit_density", "rho_beta", "scale_table"]
