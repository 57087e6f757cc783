"""Pose-graph optimization toolkit for underwater vehicle trajectories."""

from . import errors, graph, io, lie, metrics, pipeline, radiance, refine, sim, solver

__all__ = [
    "errors",
    "graph",
    "io",
    "lie",
    "metrics",
    "pipeline",
    "radiance",
    "refine",
    "sim",
    "solver",
]

__version__ = "0.1.0"
