"""Gaze-guided perception-aware assistive flight sandbox."""

from .costs import DynLimits, ObjectiveContext, PenaltyWeights, VisibilityConfig, total_objective
from .intent import GazeSample, IntentPipeline, TopoPath, generate_topo_path
from .minco import MincoTrajectory, minco_construct, sample_constraint_points
from .optimizer import OptimizerConfig, minimize
from .planner import Planner, PlannerConfig
from .sim import Metrics, Simulation, run
from .worldmap import CameraModel, DepthImage, EsdfField, OccupancyWorld, build_esdf

__version__ = "0.1.0"

__all__ = [
    "CameraModel", "DepthImage", "DynLimits", "EsdfField", "GazeSample",
    "IntentPipeline", "Metrics", "MincoTrajectory", "ObjectiveContext",
    "OccupancyWorld", "OptimizerConfig", "PenaltyWeights", "Planner",
    "PlannerConfig", "Simulation", "TopoPath", "VisibilityConfig",
    "build_esdf", "generate_topo_path", "minco_construct", "minimize",
    "run", "sample_constraint_points", "total_objective",
]
