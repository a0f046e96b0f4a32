"""Three-step regularization of the embedding space.

Step 1 initializes one centroid per class as the mean of that class's
labeled embeddings. Step 2 re-weights each labeled embedding by its
distance-based score against the initialized centroids and replaces every
centroid with the weight-normalized mean. Step 3 propagates a class to
each unlabeled embedding (argmax of the same score form against the
step-2 centroids) and mixes a score-weighted mean of the propagated
members into the centroid, proportionally to the labeled/propagated
counts. The regularization loss is the mean negative log score of each
labeled embedding for its own class, taken against the final centroids.

Scores have the form 1 - d_k / (sum_j d_j + eps) with flattened Euclidean
(Frobenius) distances d_j, so they lie in [0, 1] and sum to K - 1; they
are treated as scores, not probabilities.

Two parallel implementations live here: plain value-level functions
(classification, export, tests) and ``regularize_on_tape`` which records
the identical computation on a tape so the loss shapes the encoder.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .tensor import (
    EPS,
    ConfigurationError,
    ContractError,
    DimensionError,
    Tape,
    Tensor,
    as_array,
)

STEP_INITIALIZED = "initialized"
STEP_SUPERVISED = "supervised_adjusted"
STEP_UNSUPERVISED = "unsupervised_adjusted"


@dataclass
class ClassScores:
    """Per-sample score vector over the K classes."""

    scores: np.ndarray
    degenerate: bool = False


@dataclass
class CentroidSet:
    """K class centroids with provenance of the producing step."""

    centroids: list[Tensor]
    class_ids: list
    step: str
    labeled_counts: list[int]
    propagated_counts: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.centroids) < 2:
            raise ContractError(
                f"CentroidSet: need at least 2 classes, got {len(self.centroids)}"
            )
        if not self.propagated_counts:
            self.propagated_counts = [0] * len(self.centroids)

    @property
    def n_classes(self) -> int:
        return len(self.centroids)

    def index_of(self, class_id) -> int:
        return self.class_ids.index(class_id)


def embedding_distance(h_a, h_b) -> float:
    """Euclidean distance between flattened embedding matrices."""
    a, b = as_array(h_a), as_array(h_b)
    if a.shape != b.shape:
        raise DimensionError(
            f"embedding_distance: shapes {a.shape} and {b.shape} differ"
        )
    diff = a - b
    return float(np.sqrt(np.sum(diff * diff)))


def init_centroids(by_class: Mapping, class_order: Sequence | None = None
                   ) -> CentroidSet:
    """Mean of each class's labeled embeddings (step 1)."""
    order = list(class_order) if class_order is not None else list(by_class)
    centroids = []
    counts = []
    for cls in order:
        members = [as_array(h) for h in by_class.get(cls, ())]
        if not members:
            raise ConfigurationError(
                f"init_centroids: class {cls!r} has no labeled embeddings"
            )
        centroids.append(Tensor(np.mean(members, axis=0)))
        counts.append(len(members))
    return CentroidSet(centroids, order, STEP_INITIALIZED, counts)


def class_scores(h, cs: CentroidSet) -> ClassScores:
    """Distance-based score of an embedding against every centroid."""
    dists = np.array([embedding_distance(h, c) for c in cs.centroids])
    total = dists.sum()
    if total == 0.0:
        k = cs.n_classes
        return ClassScores(np.full(k, (k - 1) / k), degenerate=True)
    return ClassScores(1.0 - dists / (total + EPS))


def adjust_supervised(cs: CentroidSet, labeled: Sequence[tuple]) -> CentroidSet:
    """Weight-normalized class means, weights scored against the
    initialized centroids (step 2). ``labeled`` holds (embedding, class_id)
    pairs."""
    if cs.step != STEP_INITIALIZED:
        raise ContractError(
            f"adjust_supervised: expected step {STEP_INITIALIZED!r}, "
            f"got {cs.step!r}"
        )
    sums = [np.zeros(np.asarray(cs.centroids[0]).shape) for _ in cs.class_ids]
    wsums = [0.0] * cs.n_classes
    counts = [0] * cs.n_classes
    for h, cls in labeled:
        k = cs.index_of(cls)
        w = class_scores(h, cs).scores[k]
        sums[k] += w * as_array(h)
        wsums[k] += w
        counts[k] += 1
    centroids = []
    for k, cls in enumerate(cs.class_ids):
        if wsums[k] == 0.0:
            warnings.warn(
                f"adjust_supervised: zero total weight for class {cls!r}; "
                "centroid kept"
            )
            centroids.append(cs.centroids[k])
        else:
            centroids.append(Tensor(sums[k] / wsums[k]))
    return CentroidSet(centroids, list(cs.class_ids), STEP_SUPERVISED, counts)


def adjust_unsupervised(cs: CentroidSet, unlabeled: Sequence) -> CentroidSet:
    """Mix score-weighted means of propagated members into the centroids
    (step 3). Classes receiving no propagated samples keep their step-2
    centroid; an empty unlabeled set is the identity."""
    if cs.step != STEP_SUPERVISED:
        raise ContractError(
            f"adjust_unsupervised: expected step {STEP_SUPERVISED!r}, "
            f"got {cs.step!r}"
        )
    k_total = cs.n_classes
    psums = [np.zeros(np.asarray(cs.centroids[0]).shape) for _ in range(k_total)]
    pwsums = [0.0] * k_total
    pcounts = [0] * k_total
    for h in unlabeled:
        scores = class_scores(h, cs).scores
        k = int(np.argmax(scores))
        psums[k] += scores[k] * as_array(h)
        pwsums[k] += scores[k]
        pcounts[k] += 1
    centroids = []
    for k in range(k_total):
        if pcounts[k] == 0 or pwsums[k] == 0.0:
            centroids.append(cs.centroids[k])
            continue
        n_k, p_k = cs.labeled_counts[k], pcounts[k]
        mixed = (n_k / (n_k + p_k)) * np.asarray(cs.centroids[k]) \
            + (p_k / (n_k + p_k)) * (psums[k] / pwsums[k])
        centroids.append(Tensor(mixed))
    return CentroidSet(centroids, list(cs.class_ids), STEP_UNSUPERVISED,
                       list(cs.labeled_counts), pcounts)


def regularization_loss(labeled: Sequence[tuple], cs: CentroidSet) -> float:
    """Mean -log(own-class score + eps) over the labeled embeddings,
    against the final centroids."""
    if cs.step == STEP_INITIALIZED:
        raise ContractError(
            "regularization_loss: centroids must be adjusted first"
        )
    if not labeled:
        raise ContractError("regularization_loss: no labeled embeddings")
    total = 0.0
    for h, cls in labeled:
        s = class_scores(h, cs).scores[cs.index_of(cls)]
        total -= np.log(s + EPS)
    return float(total / len(labeled))


def run_three_steps(embeddings, labels: Sequence, class_order: Sequence
                    ) -> CentroidSet:
    """Full pipeline on value-level embeddings.

    ``labels[i]`` is the class of sample i or None when hidden; hidden
    samples form the unlabeled set of step 3.
    """
    embs = [as_array(h) for h in embeddings]
    by_class = {cls: [] for cls in class_order}
    labeled, unlabeled = [], []
    for h, y in zip(embs, labels):
        if y is None:
            unlabeled.append(h)
        else:
            by_class[y].append(h)
            labeled.append((h, y))
    cs = init_centroids(by_class, class_order)
    cs = adjust_supervised(cs, labeled)
    return adjust_unsupervised(cs, unlabeled)


# ---------------------------------------------------------------------------
# Tape-level pipeline (differentiable through the embeddings)
# ---------------------------------------------------------------------------

@dataclass
class TapedRegularization:
    loss: int
    centroids: list[int]
    labeled_counts: list[int]
    propagated_counts: list[int]
    propagated_classes: list[int]
    degenerate: bool = False


def _scores_on(tape: Tape, h: int, centroids: Sequence[int], eps_node: int,
               one_node: int) -> list[int]:
    dists = [tape.frob_dist(h, c) for c in centroids]
    denom = tape.add(tape.add_n(dists) if len(dists) > 1 else dists[0], eps_node)
    return [tape.sub(one_node, tape.div(d, denom)) for d in dists]


def _weighted_mean_on(tape: Tape, members: list[int], weights: list[int],
                      one_node: int) -> tuple[int, float]:
    num = tape.add_n([tape.smul(w, h) for w, h in zip(weights, members)])
    den = tape.add_n(weights)
    den_value = float(tape.val(den))
    return tape.smul(tape.div(one_node, den), num), den_value


def regularize_on_tape(tape: Tape, h: int, labeled_idx: Sequence[int],
                       labeled_classes: Sequence[int],
                       unlabeled_idx: Sequence[int], n_classes: int
                       ) -> TapedRegularization:
    """Record the three steps and the loss on ``tape``.

    ``h`` is an (N, L, D) node; ``labeled_classes`` are integer class
    indices aligned with ``labeled_idx``. Centroids are functions of the
    current embeddings, so the loss gradient reaches the encoder.
    """
    if n_classes < 2:
        raise ContractError("regularize_on_tape: need at least 2 classes")
    if len(labeled_idx) != len(labeled_classes):
        raise ContractError("regularize_on_tape: labels misaligned")
    one = tape.const(1.0)
    eps = tape.const(EPS)
    sample = {i: tape.take(h, i) for i in (*labeled_idx, *unlabeled_idx)}

    members: list[list[int]] = [[] for _ in range(n_classes)]
    for i, k in zip(labeled_idx, labeled_classes):
        members[k].append(sample[i])
    for k, m in enumerate(members):
        if not m:
            raise ConfigurationError(
                f"regularize_on_tape: class index {k} has no labeled samples"
            )

    # step 1: plain means
    c_init = [tape.scale(tape.add_n(m), 1.0 / len(m)) for m in members]

    # step 2: weight-normalized means, weights against the initial centroids
    degenerate = False
    c_sup = []
    weights: list[list[int]] = [[] for _ in range(n_classes)]
    for i, k in zip(labeled_idx, labeled_classes):
        weights[k].append(_scores_on(tape, sample[i], c_init, eps, one)[k])
    for k in range(n_classes):
        mean, den = _weighted_mean_on(tape, members[k], weights[k], one)
        if den == 0.0:
            degenerate = True
            mean = c_init[k]
        c_sup.append(mean)

    # step 3: propagate unlabeled, mix score-weighted means in
    prop_members: list[list[int]] = [[] for _ in range(n_classes)]
    prop_weights: list[list[int]] = [[] for _ in range(n_classes)]
    prop_classes = []
    for i in unlabeled_idx:
        scores = _scores_on(tape, sample[i], c_sup, eps, one)
        k = int(np.argmax([float(tape.val(s)) for s in scores]))
        prop_classes.append(k)
        prop_members[k].append(sample[i])
        prop_weights[k].append(scores[k])
    c_fin = []
    prop_counts = [len(m) for m in prop_members]
    for k in range(n_classes):
        if prop_counts[k] == 0:
            c_fin.append(c_sup[k])
            continue
        pmean, den = _weighted_mean_on(tape, prop_members[k], prop_weights[k],
                                       one)
        if den == 0.0:
            degenerate = True
            c_fin.append(c_sup[k])
            continue
        n_k, p_k = len(members[k]), prop_counts[k]
        c_fin.append(tape.add(tape.scale(c_sup[k], n_k / (n_k + p_k)),
                              tape.scale(pmean, p_k / (n_k + p_k))))

    # loss against the final centroids, labeled samples only
    terms = []
    for i, k in zip(labeled_idx, labeled_classes):
        s = _scores_on(tape, sample[i], c_fin, eps, one)[k]
        terms.append(tape.log(tape.add(s, eps)))
    loss = tape.scale(tape.add_n(terms), -1.0 / len(terms))
    return TapedRegularization(loss, c_fin, [len(m) for m in members],
                               prop_counts, prop_classes, degenerate)
