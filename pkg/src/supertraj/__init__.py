"""Temporal superpixels by clustering dense point trajectories."""

__version__ = "0.1.0"

from .clustering import ClusteringResult, post_process, run_clustering, super_trajectory_clustering, tnic
from .config import PipelineConfig, load_config
from .metrics import MetricReport, evaluate
from .primitives import EnergyParams, NeighborGraph, build_neighbor_graph, connectivity_cost
from .synthetic import SyntheticSequence, generate_synthetic
from .trajectories import BuildResult, TrajectoryAttributes, TrajectorySet, build_trajectories

__all__ = [
    "BuildResult", "ClusteringResult", "EnergyParams", "MetricReport", "NeighborGraph", "PipelineConfig",
    "SyntheticSequence", "TrajectoryAttributes", "TrajectorySet", "build_neighbor_graph", "build_trajectories",
    "connectivity_cost", "evaluate", "generate_synthetic", "load_config", "post_process", "run_clustering",
    "super_trajectory_clustering", "tnic",
]
