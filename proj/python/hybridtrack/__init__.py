"""Learnable Kalman filter 3D multi-object tracker."""

from ._core import (
    ConfigError,
    ContractViolation,
    Error,
    ParseError,
    ShapeError,
    Tracker,
    bev_intersection_area,
    ciou_3d,
    evaluate,
    greedy_match,
    hungarian_match,
    iou_3d,
    run_cli,
    simulate,
)

__all__ = [
    "ConfigError",
    "ContractViolation",
    "Error",
    "ParseError",
    "ShapeError",
    "Tracker",
    "bev_intersection_area",
    "ciou_3d",
    "evaluate",
    "greedy_match",
    "hungarian_match",
    "iou_3d",
    "run_cli",
    "simulate",
]
