"""Embedding-space classifiers and the evaluation report."""

import numpy as np
import pytest

from smate.classify import (
    EvalReport,
    evaluate,
    knn_predict,
    nearest_centroid_predict,
    report_from_predictions,
)
from smate.data import SplitSpec, apply_supervision, make_synthetic
from smate.model import SmateConfig, SmateModel, compute_centroids, encode_dataset, train
from smate.regularizer import STEP_UNSUPERVISED, CentroidSet
from smate.tensor import ContractError, Tensor


def _cs(*cents, ids=None):
    ids = ids if ids is not None else list(range(len(cents)))
    return CentroidSet([Tensor(c) for c in cents], ids, STEP_UNSUPERVISED,
                       [1] * len(cents))


def test_nearest_centroid_exact_hit():
    cs = _cs([[0.0, 0.0]], [[3.0, 3.0]], [[9.0, 0.0]], ids=["a", "b", "c"])
    assert nearest_centroid_predict([[3.0, 3.0]], cs) == "b"


def test_nearest_centroid_tie_takes_first_label():
    cs = _cs([[1.0, 0.0]], [[-1.0, 0.0]], ids=["x", "y"])
    assert nearest_centroid_predict([[0.0, 0.0]], cs) == "x"


def test_nearest_centroid_matches_min_distance_oracle():
    rng = np.random.default_rng(0)
    cents = [rng.normal(size=(2, 3)) for _ in range(4)]
    cs = _cs(*cents)
    for _ in range(20):
        h = rng.normal(size=(2, 3))
        oracle = int(np.argmin([np.linalg.norm(h - c) for c in cents]))
        assert nearest_centroid_predict(h, cs) == oracle


def test_knn_k1_returns_closest_label():
    rng = np.random.default_rng(1)
    embs = [rng.normal(size=(1, 2)) for _ in range(5)]
    labels = ["a", "b", "c", "d", "e"]
    probe = embs[3] + 1e-6
    assert knn_predict(probe, embs, labels, k=1) == "d"


def test_knn_identical_points_majority():
    embs = [np.zeros((1, 2))] * 3
    assert knn_predict(np.zeros((1, 2)), embs, ["a", "b", "a"], k=3) == "a"


def test_knn_matches_full_sort_oracle():
    rng = np.random.default_rng(2)
    embs = [rng.normal(size=(1, 3)) for _ in range(30)]
    labels = [f"c{i % 3}" for i in range(30)]
    for _ in range(15):
        h = rng.normal(size=(1, 3))
        d = np.array([np.linalg.norm(h - e) for e in embs])
        order = np.argsort(d, kind="stable")[:5]
        votes = {}
        for i in order:
            votes.setdefault(labels[i], []).append(d[i])
        best = max(len(v) for v in votes.values())
        tied = sorted((np.mean(v), y) for y, v in votes.items()
                      if len(v) == best)
        assert knn_predict(h, embs, labels, k=5) == tied[0][1]


def test_knn_contract_errors():
    with pytest.raises(ContractError):
        knn_predict(np.zeros((1, 1)), [], [], k=1)
    embs = [np.zeros((1, 1))] * 3
    with pytest.raises(ContractError):
        knn_predict(np.zeros((1, 1)), embs, ["a"] * 3, k=2)
    with pytest.raises(ContractError):
        knn_predict(np.zeros((1, 1)), embs, ["a"] * 3, k=5)


def test_report_all_correct_is_diagonal():
    labels = ["a", "b", "a", "b"]
    rep = report_from_predictions(labels, labels, ["a", "b"])
    assert rep.accuracy == 1.0
    assert rep.confusion.tolist() == [[2, 0], [0, 2]]
    assert rep.per_class_accuracy == {"a": 1.0, "b": 1.0}


def test_report_identities_hold():
    rng = np.random.default_rng(3)
    label_set = ["a", "b", "c", "d"]
    true = [label_set[i] for i in rng.integers(0, 4, size=200)]
    preds = [label_set[i] for i in rng.integers(0, 4, size=200)]
    rep = report_from_predictions(true, preds, label_set)
    assert rep.confusion.trace() / rep.n_test == rep.accuracy
    for i, y in enumerate(label_set):
        assert rep.confusion[i].sum() == true.count(y)
    # random predictor on a balanced 4-class problem sits near 1/4
    assert abs(rep.accuracy - 0.25) < 0.1


def test_report_flags_unknown_labels():
    rep = report_from_predictions(["a", "b", "z"], ["a", "b", "a"], ["a", "b"])
    assert rep.unknown_labels == ["z"]
    assert rep.confusion.sum() == 2
    assert rep.accuracy == 2 / 3


def test_report_json_round_trip():
    import json
    rep = report_from_predictions(["a", "b"], ["a", "a"], ["a", "b"])
    doc = json.loads(rep.to_json())
    assert doc["accuracy"] == 0.5
    assert doc["confusion"] == [[1, 0], [1, 0]]


def test_prediction_invariant_under_translation():
    rng = np.random.default_rng(4)
    cents = [rng.normal(size=(2, 2)) for _ in range(3)]
    shift = rng.normal(size=(2, 2))
    cs = _cs(*cents)
    cs_shifted = _cs(*[c + shift for c in cents])
    for _ in range(20):
        h = rng.normal(size=(2, 2))
        assert nearest_centroid_predict(h, cs) == \
            nearest_centroid_predict(h + shift, cs_shifted)


def test_end_to_end_synthetic_evaluation_smoke():
    train_ds = apply_supervision(make_synthetic(2, 16, 16, 3, seed=5),
                                 SplitSpec(ratio=0.5, seed=5))
    test_ds = make_synthetic(2, 8, 16, 3, seed=6)
    model = SmateModel(SmateConfig(t=16, m=3, d_g=6, d_c=6, embed_dim=4,
                                   pool=4, epochs=40, lr=5e-3, seed=5))
    train(model, train_ds)
    cs = compute_centroids(model, train_ds)
    rep = evaluate(model, cs, test_ds)
    assert rep.n_test == 8
    assert rep.accuracy >= 0.75

    emb = encode_dataset(model, train_ds)
    vis = train_ds.visible_labels()
    keep = [i for i, y in enumerate(vis) if y is not None]
    rep_knn = evaluate(model, cs, test_ds, method="knn",
                       train_embeddings=[emb[i] for i in keep],
                       train_labels=[vis[i] for i in keep], k=1)
    assert rep_knn.n_test == 8


def test_evaluate_rejects_empty_and_unknown_method():
    model = SmateModel(SmateConfig(t=8, m=2, d_g=4, d_c=4, embed_dim=3, pool=4))
    ds = make_synthetic(2, 4, 8, 2, seed=7)
    cs = compute_centroids(model, ds)
    with pytest.raises(ContractError):
        evaluate(model, cs, ds, method="svm")
