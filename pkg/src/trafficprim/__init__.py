"""Traffic-primitive extraction and multi-vehicle scenario generation."""
from __future__ import annotations

from .errors import (EvaluationError, GpError, PipelineError, PlanningError, ScenarioError,
                     SegmentationError, TrafficPrimError, TransformError)
from .evaluation import (DtwFeature, aggregate_features, dtw, feature_discrepancy, min_separation,
                         scenario_interaction_feature)
from .gp import (GpHyperparams, GpModel, fit_gp, fit_poly_prior, posterior, sample_posterior,
                 sq_exp_kernel, synthesize_training_points)
from .pipeline import (GeneratedScenario, PipelineConfig, generate, generate_without_changepoints,
                       load_config)
from .planner import GridMap, PlannedPath, PlannerConfig, Tree, load_map, near_radius, plan
from .scenario import (ObservationMatrix, Regime, Scenario, VehicleTrack, derive_speeds, featurize,
                       load_scenario, make_synthetic_scenario, save_scenario)
from .segmentation import (SegmentationResult, StickyHdpHmmConfig, extract_changepoints,
                           fit_sticky_hdphmm, segment_scenario)
from .transform import AffineTransform, apply_to_points, compute_transform, transform_scenario_skeleton

__version__ = "0.1.0"

__all__ = [
    "AffineTransform",
    "DtwFeature",
    "EvaluationError",
    "GeneratedScenario",
    "GpError",
    "GpHyperparams",
    "GpModel",
    "GridMap",
    "ObservationMatrix",
    "PipelineConfig",
    "PipelineError",
    "PlannedPath",
    "PlannerConfig",
    "PlanningError",
    "Regime",
    "Scenario",
    "ScenarioError",
    "SegmentationError",
    "SegmentationResult",
    "StickyHdpHmmConfig",
    "TrafficPrimError",
    "TransformError",
    "Tree",
    "VehicleTrack",
    "aggregate_features",
    "apply_to_points",
    "compute_transform",
    "derive_speeds",
    "dtw",
    "extract_changepoints",
    "feature_discrepancy",
    "featurize",
    "fit_gp",
    "fit_poly_prior",
    "fit_sticky_hdphmm",
    "generate",
    "generate_without_changepoints",
    "load_config",
    "load_map",
    "load_scenario",
    "make_synthetic_scenario",
    "min_separation",
    "near_radius",
    "plan",
    "posterior",
    "sample_posterior",
    "save_scenario",
    "scenario_interaction_feature",
    "segment_scenario",
    "sq_exp_kernel",
    "synthesize_training_points",
    "transform_scenario_skeleton",
]
