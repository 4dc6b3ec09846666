"""Rogue Wi-Fi access point detection from RSSI traces.

The detector positions the client on many subsets of the visible APs, fuses
the subset solutions into an inverse-sigma weighted mixture, and alarms when
any subset deviates too far from the fused position. Flagged subsets then
vote on which AP to exclude, and positioning is re-run without it.
"""

from .attacks import AttackCase, AttackKind, AttackLabel, AttackSpec, inject, make_attack_suite
from .base import ScoreThresholdDetector
from .baselines import ClusteringDetector, ClusteringParams, EcodDetector, EcodParams
from .errors import (
    AllScoresZero,
    AllSubsetsFailed,
    ApNotInRegistry,
    CalibrationError,
    EmptyMixture,
    NonMonotoneDetector,
    RapdetError,
    SubsetTooSmall,
    TooFewAps,
    TraceFormatError,
    WindowTooLarge,
)
from .evaluation import (
    RecoveryReport,
    RocPoint,
    calibrate,
    calibrate_scores,
    evaluate_detection,
    evaluate_exclusion,
    evaluate_recovery,
    fit_positioner,
    sampling_sweep,
)
from .geo import GeoPoint, LocalFrame, LocalPoint
from .model import ApRegistry, FingerprintDatabase, PositionEstimate, Scan
from .positioning import NlsPositioner, WknnPositioner
from .raim import GmRaimDetector, RaimParams, TimestepVerdict, deviation_threshold, deviations, fuse
from .scene import PathLossModel, Scene, SceneConfig, Trajectory, generate_scene
from .scenario import SamplingSpec, ScenarioConfig, SuiteSpec, load_scenario
from .subsets import SubsetPlan, enumerate_subsets, plan_subsets, sample_subsets

__version__ = "0.1.0"

__all__ = [
    "AllScoresZero",
    "AllSubsetsFailed",
    "ApNotInRegistry",
    "ApRegistry",
    "AttackCase",
    "AttackKind",
    "AttackLabel",
    "AttackSpec",
    "CalibrationError",
    "ClusteringDetector",
    "ClusteringParams",
    "EcodDetector",
    "EcodParams",
    "EmptyMixture",
    "FingerprintDatabase",
    "GeoPoint",
    "GmRaimDetector",
    "LocalFrame",
    "LocalPoint",
    "NlsPositioner",
    "NonMonotoneDetector",
    "PathLossModel",
    "PositionEstimate",
    "RaimParams",
    "RapdetError",
    "RecoveryReport",
    "RocPoint",
    "SamplingSpec",
    "Scan",
    "Scene",
    "SceneConfig",
    "ScenarioConfig",
    "ScoreThresholdDetector",
    "SubsetPlan",
    "SubsetTooSmall",
    "SuiteSpec",
    "TimestepVerdict",
    "TooFewAps",
    "TraceFormatError",
    "Trajectory",
    "WindowTooLarge",
    "WknnPositioner",
    "calibrate",
    "calibrate_scores",
    "deviation_threshold",
    "deviations",
    "enumerate_subsets",
    "evaluate_detection",
    "evaluate_exclusion",
    "evaluate_recovery",
    "fit_positioner",
    "fuse",
    "generate_scene",
    "inject",
    "load_scenario",
    "make_attack_suite",
    "plan_subsets",
    "sample_subsets",
    "sampling_sweep",
]
