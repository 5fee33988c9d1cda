"""Offline DDoS detection from traffic rendered as images.

Packets are grouped into sessions, projected onto a plane and drawn as
translucent convex polygons, one frame per time window. Frames are
described by scale-invariant keypoint descriptors, encoded as tf-idf
weighted visual words and classified by boosted naive Bayes.
"""

__version__ = "0.1.0"

from .capture import PacketMeta, Session, featurize, group_sessions, parse_capture
from .classifier import Prediction, TrainedModel, adaboost_train, load_model, predict, save_model
from .descriptors import DescriptorSet, extract
from .evaluation import EvalReport, combined_rate, confusion
from .imaging import CanvasCalibration, SessionImageFrame, frame_stream
from .projection import ProjectionBasis, default_basis, make_basis, project_point
from .traffic_synth import AttackSpec, ScenarioSpec, generate, write_capture
from .vocabulary import Vocabulary, bow_vector, kmeans

__all__ = [
    "AttackSpec", "CanvasCalibration", "DescriptorSet", "EvalReport", "PacketMeta",
    "Prediction", "ProjectionBasis", "ScenarioSpec", "Session", "SessionImageFrame",
    "TrainedModel", "Vocabulary", "adaboost_train", "bow_vector", "combined_rate",
    "confusion", "default_basis", "extract", "featurize", "frame_stream", "generate",
    "group_sessions", "kmeans", "load_model", "make_basis", "parse_capture", "predict",
    "project_point", "save_model", "write_capture",
]
