import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import scalar_adaboost, scalar_margin, scalar_nb
from synids.classifier import (
    MAGIC,
    BoostedEnsemble,
    NaiveBayesModel,
    TrainedModel,
    adaboost_train,
    decode_model,
    encode_model,
    load_model,
    predict,
    save_model,
    train_nb,
)
from synids.errors import ChecksumMismatch, DimensionMismatch, FileError, FormatVersionMismatch, MissingClass
from synids.imaging import DDOS, LEGITIMATE, CanvasCalibration
from synids.projection import default_basis
from synids.vocabulary import Vocabulary


def test_train_nb_two_points():
    nb = train_nb([[0.0], [10.0]], [-1, 1])
    assert nb.means[:, 0].tolist() == [0, 10]
    assert nb.priors.tolist() == [0.5, 0.5]
    assert (nb.variances == 1e-9).all()


def test_train_nb_duplicate_invariance(rng):
    x = rng.normal(size=(10, 3))
    y = [1, -1] * 5
    a = train_nb(x, y)
    b = train_nb(np.vstack([x, x]), y + y)
    for f in ("priors", "means", "variances"):
        assert np.allclose(getattr(a, f), getattr(b, f), rtol=1e-12, atol=0)


def test_train_nb_matches_weighted_oracle(rng):
    x = rng.normal(size=(20, 4))
    y = [1] * 8 + [-1] * 12
    w = rng.random(20) + 0.1
    nb = train_nb(x, y, w)
    oracle = scalar_nb(x.tolist(), y, (w / w.sum()).tolist())
    for c, sign in enumerate((-1, 1)):
        prior, means, var = oracle[sign]
        assert math.isclose(nb.priors[c], prior, rel_tol=1e-12)
        assert np.allclose(nb.means[c], means, rtol=1e-12, atol=1e-15)
        assert np.allclose(nb.variances[c], var, rtol=1e-10, atol=1e-15)


def test_train_nb_missing_class():
    with pytest.raises(MissingClass):
        train_nb([[1.0], [2.0]], [1, 1])
    with pytest.raises(MissingClass):
        adaboost_train([[1.0], [2.0]], [-1, -1])


def test_adaboost_separable_halts_after_one_round():
    x = np.array([[0.0], [0.1], [0.2], [5.0], [5.1], [5.2]])
    ens = adaboost_train(x, [-1, -1, -1, 1, 1, 1], rounds=10)
    assert ens.rounds == 1 and ens.errors == [0.0]


def test_adaboost_single_round_equals_nb(rng):
    x = rng.normal(size=(30, 3))
    y = np.where(x[:, 0] + rng.normal(size=30) > 0, 1, -1)
    ens = adaboost_train(x, y, rounds=1)
    nb = train_nb(x, y)
    assert (np.sign(ens.margin(x)) == nb.decide(x)).all()


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_adaboost_matches_scalar_trace(seed, rounds):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(24, 3))
    x[:12, 0] += 1.0
    y = [1] * 12 + [-1] * 12
    ens = adaboost_train(x, y, rounds=rounds)
    trace = scalar_adaboost(x.tolist(), y, rounds)
    assert ens.rounds == len(trace)
    assert np.allclose(ens.errors, [t[0] for t in trace], rtol=1e-9, atol=1e-12)
    assert np.allclose(ens.alphas, [t[1] for t in trace], rtol=1e-9, atol=1e-12)
    margins = ens.margin(x)
    assert np.allclose(margins, [scalar_margin(trace, r) for r in x.tolist()], rtol=1e-9, atol=1e-9)
    assert all(a > 0 for a in ens.alphas)


def toy_model(k=3, alphas=(0.7,)):
    nb = NaiveBayesModel(np.array([0.5, 0.5]), np.array([[-1.0] * k, [1.0] * k]), np.ones((2, k)))
    ens = BoostedEnsemble([nb] * len(alphas), list(alphas), [0.2] * len(alphas))
    vocab = Vocabulary(np.arange(k * 4, dtype=float).reshape(k, 4), np.linspace(0.1, 1, k), 7)
    cal = CanvasCalibration.from_basis(default_basis(10), 64)
    return TrainedModel(vocab, cal, default_basis(10), ens, {"note": "toy"})


def test_predict_symmetric_zero_vector_is_legitimate():
    p = predict(toy_model(), np.zeros(3))
    assert p.label == LEGITIMATE and abs(p.confidence - 0.5) < 1e-9 and p.score == 0


def test_predict_deep_ddos_and_determinism():
    model = toy_model(alphas=(1.2, 0.9))
    p = predict(model, np.full(3, 5.0))
    assert p.label == DDOS and p.confidence > 0.9
    assert predict(model, np.full(3, 5.0)) == p
    with pytest.raises(DimensionMismatch):
        predict(model, np.zeros(4))


def test_threshold_moves_decision():
    model = toy_model()
    assert predict(model, np.ones(3), threshold=0.0).label == DDOS
    assert predict(model, np.ones(3), threshold=1.0).label == LEGITIMATE


def test_model_round_trip(tmp_path):
    model = toy_model(alphas=(0.5, 0.25))
    path = tmp_path / "m.bin"
    save_model(model, str(path))
    blob = path.read_bytes()
    assert blob.startswith(MAGIC)
    back = load_model(str(path))
    assert encode_model(back) == blob
    assert back.metadata == {"note": "toy"}
    rng = np.random.default_rng(1)
    for v in rng.normal(size=(20, 3)):
        assert predict(back, v) == predict(model, v)


def test_model_file_errors(tmp_path):
    blob = encode_model(toy_model())
    with pytest.raises(FormatVersionMismatch):
        decode_model(b"SYNIDS99" + blob[8:])
    corrupt = bytearray(blob)
    corrupt[40] ^= 0xFF
    with pytest.raises(ChecksumMismatch):
        decode_model(bytes(corrupt))
    with pytest.raises(FileError):
        decode_model(b"garbage")
    with pytest.raises(FileError):
        load_model(str(tmp_path / "absent.bin"))
