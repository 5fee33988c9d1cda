"""Boosted Gaussian naive Bayes over tf-idf vectors, and the model file.

Labels are +1 for ddos and -1 for legitimate. A weak learner whose two
class log-posteriors tie abstains (h = 0) and counts as "legitimate" when
scoring errors, which keeps the ensemble's tie rule and a single learner's
tie rule identical.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import (
    ChecksumMismatch,
    DimensionMismatch,
    FileError,
    FormatVersionMismatch,
    MissingClass,
)
from .imaging import DDOS, LEGITIMATE, CanvasCalibration
from .projection import ProjectionBasis, make_basis
from .vocabulary import Vocabulary

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-9
EPS_CLAMP = 1e-10
DEFAULT_ROUNDS = 10

MAGIC = b"SYNIDS01"
FORMAT_VERSION = 1


@dataclass
class NaiveBayesModel:
    """Gaussian naive Bayes; index 0 is legitimate, index 1 is ddos."""

    priors: np.ndarray  # (2,)
    means: np.ndarray  # (2, k)
    variances: np.ndarray  # (2, k)

    def log_odds(self, x: np.ndarray) -> np.ndarray:
        """log P(ddos | x) - log P(legitimate | x) for rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        ll = []
        for c in (0, 1):
            var = self.variances[c]
            ll.append(
                math.log(self.priors[c])
                - 0.5 * np.sum(np.log(2 * np.pi * var))
                - 0.5 * np.sum((x - self.means[c]) ** 2 / var, axis=1)
            )
        return ll[1] - ll[0]

    def decide(self, x: np.ndarray) -> np.ndarray:
        """+1 ddos, -1 legitimate, 0 on an exact tie."""
        return np.sign(self.log_odds(x)).astype(np.int64)


@dataclass
class BoostedEnsemble:
    learners: List[NaiveBayesModel] = field(default_factory=list)
    alphas: List[float] = field(default_factory=list)
    errors: List[float] = field(default_factory=list)

    @property
    def rounds(self) -> int:
        return len(self.learners)

    def margin(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        score = np.zeros(len(x))
        for alpha, nb in zip(self.alphas, self.learners):
            score += alpha * nb.decide(x)
        return score


@dataclass(frozen=True)
class Prediction:
    label: str
    score: float
    confidence: float


@dataclass
class TrainedModel:
    vocabulary: Vocabulary
    calibration: CanvasCalibration
    basis: ProjectionBasis
    ensemble: BoostedEnsemble
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


# --------------------------------------------------------------------------
# training


def _as_signed(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.dtype.kind in "US":
        return np.where(y == DDOS, 1, -1)
    return np.where(y > 0, 1, -1)


def train_nb(x, labels, sample_weights=None, var_floor: float = VAR_FLOOR) -> NaiveBayesModel:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = _as_signed(labels)
    w = np.full(len(y), 1.0 / len(y)) if sample_weights is None else np.asarray(sample_weights, float)
    if np.any(w <= 0):
        raise ValueError("sample weights must be positive")
    w = w / w.sum()
    priors = np.empty(2)
    means = np.empty((2, x.shape[1]))
    variances = np.empty((2, x.shape[1]))
    for c, sign in enumerate((-1, 1)):
        sel = y == sign
        if not sel.any():
            raise MissingClass(f"no {'ddos' if sign > 0 else 'legitimate'} samples")
        wc = w[sel]
        mass = wc.sum()
        priors[c] = mass
        mu = wc @ x[sel] / mass
        means[c] = mu
        variances[c] = np.maximum(wc @ (x[sel] - mu) ** 2 / mass, var_floor)
    return NaiveBayesModel(priors / priors.sum(), means, variances)


def adaboost_train(x, labels, rounds: int = DEFAULT_ROUNDS, seed: int = 0,
                   var_floor: float = VAR_FLOOR) -> BoostedEnsemble:
    """Discrete two-class AdaBoost of naive Bayes learners.

    ``seed`` is recorded for provenance only: every step is deterministic.
    Halts early when a round is no better than chance (that round is
    dropped) or fits the weighted data perfectly (that round is kept).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = _as_signed(labels)
    if rounds < 1:
        raise ValueError("need at least one boosting round")
    if not ((y > 0).any() and (y < 0).any()):
        raise MissingClass("boosting needs both classes")
    w = np.full(len(y), 1.0 / len(y))
    ens = BoostedEnsemble()
    for t in range(rounds):
        nb = train_nb(x, y, w, var_floor)
        pred = np.where(nb.decide(x) > 0, 1, -1)
        wrong = pred != y
        eps = float(w[wrong].sum())
        if eps >= 0.5:
            log.info("round %d: weighted error %.4f >= 0.5, stopping", t + 1, eps)
            break
        eps_c = min(max(eps, EPS_CLAMP), 1 - EPS_CLAMP)
        alpha = 0.5 * math.log((1 - eps_c) / eps_c)
        ens.learners.append(nb)
        ens.alphas.append(alpha)
        ens.errors.append(eps)
        log.info("round %d: weighted error %.6f alpha %.6f", t + 1, eps, alpha)
        if eps <= EPS_CLAMP:
            break
        w = np.where(wrong, w * math.exp(alpha), w)
        w = w / w.sum()
    if not ens.learners:
        log.warning("no boosting round beat chance; every vector will score 0")
    return ens


# --------------------------------------------------------------------------
# prediction


def predict_scores(model: TrainedModel, bows: np.ndarray) -> np.ndarray:
    bows = np.atleast_2d(np.asarray(bows, dtype=np.float64))
    if bows.shape[1] != model.vocabulary.k:
        raise DimensionMismatch(f"vector length {bows.shape[1]} != vocabulary size {model.vocabulary.k}")
    return model.ensemble.margin(bows)


def to_prediction(score: float, threshold: float = 0.0) -> Prediction:
    label = DDOS if score > threshold else LEGITIMATE
    return Prediction(label, float(score), 1.0 / (1.0 + math.exp(-2.0 * score)))


def predict(model: TrainedModel, bow, threshold: float = 0.0) -> Prediction:
    bow = np.asarray(bow, dtype=np.float64)
    if bow.ndim != 1:
        raise DimensionMismatch("predict takes a single vector")
    return to_prediction(float(predict_scores(model, bow)[0]), threshold)


# --------------------------------------------------------------------------
# model file
#
# Little-endian throughout:
#   magic "SYNIDS01" | u32 version | u64 payload length | payload | u32 crc32(payload)
# payload:
#   u32 metadata length, metadata JSON (UTF-8, sorted keys)
#   u32 n, f64[n] basis a (raw), f64[n] basis b (raw)
#   u32 width, u32 height, f64 u_min, u_max, v_min, v_max
#   u32 k, u32 dim, u64 seed, f64[k*dim] centroids, f64[k] idf
#   u32 rounds, then per round: f64 alpha, f64 error, f64[2] priors,
#       f64[2*k] means, f64[2*k] variances


def _f64(values) -> bytes:
    return np.ascontiguousarray(values, dtype="<f8").tobytes()


def encode_model(model: TrainedModel) -> bytes:
    parts = []
    meta = json.dumps(model.metadata, sort_keys=True, separators=(",", ":")).encode()
    parts.append(struct.pack("<I", len(meta)) + meta)
    basis = model.basis
    parts.append(struct.pack("<I", basis.n) + _f64(basis.a_raw) + _f64(basis.b_raw))
    cal = model.calibration
    parts.append(struct.pack("<II4d", cal.width, cal.height, cal.u_min, cal.u_max, cal.v_min, cal.v_max))
    vocab = model.vocabulary
    k, dim = vocab.centroids.shape
    parts.append(struct.pack("<IIQ", k, dim, vocab.rng_seed) + _f64(vocab.centroids) + _f64(vocab.idf))
    ens = model.ensemble
    parts.append(struct.pack("<I", ens.rounds))
    for nb, alpha, err in zip(ens.learners, ens.alphas, ens.errors):
        parts.append(struct.pack("<2d", alpha, err) + _f64(nb.priors) + _f64(nb.means) + _f64(nb.variances))
    payload = b"".join(parts)
    return (MAGIC + struct.pack("<IQ", model.version, len(payload)) + payload
            + struct.pack("<I", zlib.crc32(payload)))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FileError("model payload ends early")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def decode_model(blob: bytes) -> TrainedModel:
    if len(blob) < 8 + 12 + 4:
        raise FileError("model file too short")
    magic = blob[:8]
    if magic[:6] != MAGIC[:6]:
        raise FileError(f"not a model file (magic {magic!r})")
    if magic != MAGIC:
        raise FormatVersionMismatch(f"model format {magic!r}, this build reads {MAGIC!r}")
    version, length = struct.unpack_from("<IQ", blob, 8)
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"model version {version}, this build reads {FORMAT_VERSION}")
    if len(blob) != 20 + length + 4:
        raise FileError(f"model file length {len(blob)} does not match payload length {length}")
    payload = blob[20 : 20 + length]
    (crc,) = struct.unpack_from("<I", blob, 20 + length)
    if zlib.crc32(payload) != crc:
        raise ChecksumMismatch("model payload checksum mismatch")

    r = _Reader(payload)
    (meta_len,) = r.unpack("<I")
    metadata = json.loads(r.take(meta_len).decode())
    (n,) = r.unpack("<I")
    basis = make_basis(r.floats(n), r.floats(n))
    width, height, u0, u1, v0, v1 = r.unpack("<II4d")
    cal = CanvasCalibration(u0, u1, v0, v1, width, height)
    k, dim, seed = r.unpack("<IIQ")
    centroids = r.floats(k * dim).reshape(k, dim)
    vocab = Vocabulary(centroids, r.floats(k), seed)
    (rounds,) = r.unpack("<I")
    ens = BoostedEnsemble()
    for _ in range(rounds):
        alpha, err = r.unpack("<2d")
        nb = NaiveBayesModel(r.floats(2), r.floats(2 * k).reshape(2, k), r.floats(2 * k).reshape(2, k))
        ens.learners.append(nb)
        ens.alphas.append(alpha)
        ens.errors.append(err)
    if r.pos != len(payload):
        raise FileError("trailing bytes in model payload")
    return TrainedModel(vocab, cal, basis, ens, metadata, version)


def atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: TrainedModel, path: str) -> None:
    try:
        atomic_write(path, encode_model(model))
    except OSError as exc:
        raise FileError(f"cannot write model {path}: {exc}") from exc


def load_model(path: str) -> TrainedModel:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise FileError(f"cannot read model {path}: {exc}") from exc
    return decode_model(blob)
