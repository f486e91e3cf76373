"""Active semantic exploration on procedural grid-world floorplans.

The package builds projected, completed and confidence maps from simulated
scans, fuses them into global maps by confidence, and drives an agent with a
long-term goal policy plus a fast-marching short-term planner.
"""

from .env import (Action, AgentState, GenConfig, MotionConfig, Observation, SemanticGrid, SensorConfig,
                  generate_floorplan, sense, step)
from .episode import EpisodeConfig, EpisodeResult, run_episode
from .full_mapper import GlobalMapBundle, crop_window, fuse
from .harness import Experiment, format_table, run_benchmark, write_results
from .local_mapper import LocalMapBundle, PatchPrior, build_local_bundle, complete_local, estimate_confidence
from .metrics import Metrics, compute_metrics
from .navigator import (DistanceField, LongTermGoal, PolicyInput, PolicyKind, fmm_field, next_action,
                        select_goal)
from .policy_learn import GoalScorer, RewardTerms, compute_reward, extract_features
from .render import export_maps

__version__ = "0.1.0"

__all__ = [
    "Action", "AgentState", "GenConfig", "MotionConfig", "Observation", "SemanticGrid", "SensorConfig",
    "generate_floorplan", "sense", "step",
    "EpisodeConfig", "EpisodeResult", "run_episode",
    "GlobalMapBundle", "crop_window", "fuse",
    "Experiment", "format_table", "run_benchmark", "write_results",
    "LocalMapBundle", "PatchPrior", "build_local_bundle", "complete_local", "estimate_confidence",
    "Metrics", "compute_metrics",
    "DistanceField", "LongTermGoal", "PolicyInput", "PolicyKind", "fmm_field", "next_action", "select_goal",
    "GoalScorer", "RewardTerms", "compute_reward", "extract_features",
    "export_maps",
]
