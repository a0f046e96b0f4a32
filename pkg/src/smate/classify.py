"""Downstream classification and evaluation on the embedding space."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import MtsDataset
from .model import SmateModel, encode_dataset
from .regularizer import CentroidSet, class_scores, embedding_distance
from .tensor import ContractError


def nearest_centroid_predict(h, cs: CentroidSet):
    """Class of the highest-scoring centroid; ties resolve to the lowest
    class index in label-set order (argmax keeps the first maximum)."""
    scores = class_scores(h, cs).scores
    return cs.class_ids[int(np.argmax(scores))]


def knn_predict(h, train_embeddings: Sequence, train_labels: Sequence,
                k: int = 1):
    """Majority vote among the k nearest training embeddings.

    Vote ties break toward the smallest mean distance among the tied
    classes, then label order.
    """
    n = len(train_embeddings)
    if n == 0:
        raise ContractError("knn_predict: empty training set")
    if k < 1 or k % 2 == 0:
        raise ContractError(f"knn_predict: k must be odd and positive, got {k}")
    if k > n:
        raise ContractError(f"knn_predict: k={k} exceeds training size {n}")
    dists = np.array([embedding_distance(h, e) for e in train_embeddings])
    nearest = np.argsort(dists, kind="stable")[:k]
    votes: dict = {}
    for idx in nearest:
        y = train_labels[idx]
        cnt, dsum = votes.get(y, (0, 0.0))
        votes[y] = (cnt + 1, dsum + dists[idx])
    best = max(votes.values())[0]
    tied = [(dsum / cnt, y) for y, (cnt, dsum) in votes.items() if cnt == best]
    tied.sort(key=lambda item: (item[0], str(item[1])))
    return tied[0][1]


@dataclass
class EvalReport:
    """Accuracy, per-class accuracy and a K x K confusion matrix
    (rows true class, columns predicted, label-set order)."""

    accuracy: float
    per_class_accuracy: dict
    confusion: np.ndarray
    n_test: int
    label_set: list
    unknown_labels: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "accuracy": self.accuracy,
            "n_test": self.n_test,
            "label_set": list(self.label_set),
            "per_class_accuracy": self.per_class_accuracy,
            "confusion": self.confusion.tolist(),
            "unknown_labels": list(self.unknown_labels),
        }, indent=1)


def report_from_predictions(true_labels: Sequence, predictions: Sequence,
                            label_set: Sequence) -> EvalReport:
    k = len(label_set)
    index = {y: i for i, y in enumerate(label_set)}
    confusion = np.zeros((k, k), dtype=int)
    unknown = []
    correct = 0
    for y, p in zip(true_labels, predictions):
        if y not in index:
            unknown.append(y)
            continue
        confusion[index[y], index[p]] += 1
        correct += int(y == p)
    n_test = len(true_labels)
    per_class = {}
    for y, row in zip(label_set, confusion):
        total = row.sum()
        if total:
            per_class[y] = float(row[index[y]] / total)
    return EvalReport(accuracy=correct / n_test, per_class_accuracy=per_class,
                      confusion=confusion, n_test=n_test,
                      label_set=list(label_set), unknown_labels=unknown)


def evaluate(model: SmateModel, cs: CentroidSet, test: MtsDataset,
             method: str = "centroid", train_embeddings=None,
             train_labels=None, k: int = 1) -> EvalReport:
    """Encode every test sample with the frozen model and classify.

    ``method="knn"`` votes over the provided labeled training embeddings;
    ``method="centroid"`` uses the centroid set directly. Test labels
    outside the training label set are flagged and counted as errors.
    """
    if test.n == 0:
        raise ContractError("evaluate: empty test set")
    emb = encode_dataset(model, test)
    if method == "centroid":
        preds = [nearest_centroid_predict(e, cs) for e in emb]
    elif method == "knn":
        if train_embeddings is None or train_labels is None:
            raise ContractError("evaluate: knn needs training embeddings")
        preds = [knn_predict(e, train_embeddings, train_labels, k) for e in emb]
    else:
        raise ContractError(f"evaluate: unknown method {method!r}")
    return report_from_predictions(test.labels_for_eval(), preds, cs.class_ids)
