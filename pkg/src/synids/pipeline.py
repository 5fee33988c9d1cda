"""Stage orchestration shared by the CLI, evaluation and the experiment runner."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np

from .capture import DEFAULT_IDLE_TIMEOUT_US, PacketMeta, group_sessions
from .classifier import (
    DEFAULT_ROUNDS,
    TrainedModel,
    adaboost_train,
    predict_scores,
    to_prediction,
)
from .config import derive_seed
from .descriptors import DEFAULT_PARAMS, DescriptorSet, SiftParams, extract, to_grayscale
from .imaging import (
    DDOS,
    LEGITIMATE,
    CanvasCalibration,
    SessionImageFrame,
    diff_stream,
    frame_stream,
)
from .projection import ProjectionBasis
from .vocabulary import DEFAULT_CLUSTERS, bow_vector, build_vocabulary

log = logging.getLogger(__name__)


def _parallel_map(fn: Callable, items: Sequence, jobs: int) -> list:
    """Ordered map; results never depend on ``jobs``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    chunk = max(1, len(items) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


# --------------------------------------------------------------------------
# rendering


def render_packets(
    packets: Sequence[PacketMeta],
    basis: ProjectionBasis,
    cal: CanvasCalibration,
    window_s: float,
    truth=None,
    diff: bool = False,
    start_us: Optional[int] = None,
    count: Optional[int] = None,
    idle_timeout_us: int = DEFAULT_IDLE_TIMEOUT_US,
) -> Iterable[SessionImageFrame]:
    sessions = group_sessions(packets, idle_timeout_us)
    frames = frame_stream(sessions, basis, cal, window_s, truth=truth, start_us=start_us, count=count)
    return diff_stream(frames) if diff else frames


# --------------------------------------------------------------------------
# descriptors


@dataclass(frozen=True)
class _Extractor:
    params: SiftParams

    def __call__(self, pixels: np.ndarray) -> np.ndarray:
        return extract(to_grayscale(pixels), self.params).descriptors


def frame_descriptors(pixels: np.ndarray, params: SiftParams = DEFAULT_PARAMS) -> DescriptorSet:
    return extract(to_grayscale(pixels), params)


def extract_all(frames: Sequence[np.ndarray], params: SiftParams = DEFAULT_PARAMS,
                jobs: int = 1) -> List[np.ndarray]:
    """Descriptor matrices, one per frame, in input order."""
    return _parallel_map(_Extractor(params), list(frames), jobs)


# --------------------------------------------------------------------------
# training / prediction


@dataclass
class TrainingLog:
    k: int
    seed: int
    rounds: int
    images: dict
    descriptor_counts: List[int]
    kmeans_iterations: int
    kmeans_objective: float
    round_errors: List[float] = field(default_factory=list)
    alphas: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "rounds": self.rounds,
            "images": self.images,
            "descriptors_total": int(sum(self.descriptor_counts)),
            "descriptor_counts": [int(c) for c in self.descriptor_counts],
            "kmeans_iterations": self.kmeans_iterations,
            "kmeans_objective": self.kmeans_objective,
            "round_errors": self.round_errors,
            "alphas": self.alphas,
        }


def train_from_descriptors(
    descriptor_sets: Sequence[np.ndarray],
    labels: Sequence[str],
    basis: ProjectionBasis,
    cal: CanvasCalibration,
    k: int = DEFAULT_CLUSTERS,
    rounds: int = DEFAULT_ROUNDS,
    seed: int = 0,
    metadata: Optional[dict] = None,
):
    """Vocabulary, tf-idf matrix and boosted ensemble from per-image descriptors."""
    vocab_seed = derive_seed(seed, "kmeans")
    vocab, weighted, counts, km = build_vocabulary(descriptor_sets, k, vocab_seed)
    ensemble = adaboost_train(weighted, labels, rounds, derive_seed(seed, "boost"))
    images = {LEGITIMATE: int(sum(1 for l in labels if l == LEGITIMATE)),
              DDOS: int(sum(1 for l in labels if l == DDOS))}
    meta = dict(metadata or {})
    meta.update(seed=int(seed), k=int(k), rounds=int(rounds), images=images)
    model = TrainedModel(vocab, cal, basis, ensemble, meta)
    log_record = TrainingLog(
        k=k, seed=seed, rounds=rounds, images=images,
        descriptor_counts=[len(d) for d in descriptor_sets],
        kmeans_iterations=km.iterations, kmeans_objective=km.objective,
        round_errors=list(ensemble.errors), alphas=list(ensemble.alphas),
    )
    return model, log_record


@dataclass(frozen=True)
class _Scorer:
    model: TrainedModel

    def __call__(self, chunk: np.ndarray) -> np.ndarray:
        return predict_scores(self.model, chunk)


def score_vectors(model: TrainedModel, bows: np.ndarray, jobs: int = 1) -> np.ndarray:
    bows = np.atleast_2d(np.asarray(bows, dtype=np.float64))
    if jobs <= 1:
        return predict_scores(model, bows)
    chunks = np.array_split(bows, min(len(bows), 4 * jobs))
    return np.concatenate(_parallel_map(_Scorer(model), chunks, jobs))


def bow_matrix(model: TrainedModel, descriptor_sets: Sequence[np.ndarray]) -> np.ndarray:
    k = model.vocabulary.k
    if not descriptor_sets:
        return np.zeros((0, k))
    return np.stack([bow_vector(d, model.vocabulary) for d in descriptor_sets])


def predict_descriptors(model: TrainedModel, descriptor_sets, jobs=1, threshold=0.0):
    scores = score_vectors(model, bow_matrix(model, descriptor_sets), jobs)
    return [to_prediction(s, threshold) for s in scores]


def predict_frames(model: TrainedModel, frames: Sequence[np.ndarray], jobs: int = 1,
                   threshold: float = 0.0, params: Optional[SiftParams] = None):
    params = params or sift_params_from(model.metadata)
    descs = extract_all(frames, params, jobs)
    return predict_descriptors(model, descs, jobs, threshold)


def sift_params_from(metadata: dict) -> SiftParams:
    return SiftParams(max_descriptors=int(metadata.get("max_descriptors", DEFAULT_PARAMS.max_descriptors)))
