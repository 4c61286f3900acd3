"""Unsupervised crowd anomaly detection from optical flow.

Flow frames are summarised as multi-scale grids of motion-consistency
measures; a graph autoencoder learns to reconstruct normal motion, and its
reconstruction error becomes a per-frame anomaly score.
"""

from .config import RunConfig
from .flowio import FlowSequence, ScaleSpec, build_scale_specs, read_flow_file, write_flow_file
from .graphs import MotionGraph, MultiScaleGraphSet, extract_sequence
from .model import NetConfig, init_params
from .scoring import Normalizer, anomaly_scores, roc_auc, roc_eer
from .synth import ScenarioConfig, Segment, gen_benchmark
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "FlowSequence",
    "MotionGraph",
    "MultiScaleGraphSet",
    "NetConfig",
    "Normalizer",
    "RunConfig",
    "ScaleSpec",
    "ScenarioConfig",
    "Segment",
    "TrainConfig",
    "anomaly_scores",
    "build_scale_specs",
    "extract_sequence",
    "gen_benchmark",
    "init_params",
    "read_flow_file",
    "roc_auc",
    "roc_eer",
    "train",
    "write_flow_file",
]
