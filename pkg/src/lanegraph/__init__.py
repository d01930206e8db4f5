"""Lane-graph extraction toolkit: differentiable polyline losses, synthetic
BEV scenes, count-then-draw extraction, the dense-detection baseline, metric
evaluation, and an annotator-in-the-loop service."""

__version__ = "0.1.0"

__all__ = [
    "geometry",
    "losses",
    "scenegen",
    "extraction",
    "baseline",
    "metrics",
    "service",
    "cli",
]
