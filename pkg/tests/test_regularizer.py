"""Three-step centroid regularization: examples, invariants, tape parity."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from smate.regularizer import (
    STEP_INITIALIZED,
    STEP_SUPERVISED,
    STEP_UNSUPERVISED,
    CentroidSet,
    adjust_supervised,
    adjust_unsupervised,
    class_scores,
    embedding_distance,
    init_centroids,
    regularization_loss,
    regularize_on_tape,
    run_three_steps,
)
from smate.tensor import (
    ConfigurationError,
    ContractError,
    DimensionError,
    Tape,
    Tensor,
)


# -- embedding_distance -------------------------------------------------------

def test_distance_identical_is_zero():
    h = np.random.default_rng(0).normal(size=(3, 2))
    assert embedding_distance(h, h) == 0.0


def test_distance_unit():
    assert embedding_distance([[1.0, 0.0]], [[0.0, 0.0]]) == 1.0


def test_distance_three_four_five():
    assert embedding_distance([[3.0, 0.0], [0.0, 4.0]], np.zeros((2, 2))) == 5.0


def test_distance_shape_mismatch():
    with pytest.raises(DimensionError):
        embedding_distance(np.zeros((2, 2)), np.zeros((2, 3)))


# -- init_centroids -------------------------------------------------------------

def test_init_mean_of_two():
    cs = init_centroids({"a": [np.zeros((1, 2)), np.full((1, 2), 2.0)],
                         "b": [np.ones((1, 2))]}, ["a", "b"])
    assert cs.centroids[0].array.tolist() == [[1.0, 1.0]]
    assert cs.step == STEP_INITIALIZED
    assert cs.labeled_counts == [2, 1]


def test_init_single_sample_class():
    h = np.random.default_rng(1).normal(size=(2, 3))
    cs = init_centroids({"a": [h], "b": [np.zeros((2, 3))]}, ["a", "b"])
    assert np.array_equal(cs.centroids[0].array, h)


def test_init_matches_loop_mean_oracle():
    rng = np.random.default_rng(2)
    members = [rng.normal(size=(2, 3)) for _ in range(3)]
    oracle = np.zeros((2, 3))
    for m in members:
        for idx in np.ndindex(2, 3):
            oracle[idx] += m[idx] / 3.0
    cs = init_centroids({"a": members, "b": [np.zeros((2, 3))]}, ["a", "b"])
    assert np.max(np.abs(cs.centroids[0].array - oracle)) < 1e-12


def test_init_empty_class_names_it():
    with pytest.raises(ConfigurationError, match="'walk'"):
        init_centroids({"walk": [], "run": [np.zeros((1, 1))]}, ["walk", "run"])


# -- class_scores ----------------------------------------------------------------

def _cs_from_centroids(*cents):
    return CentroidSet([Tensor(c) for c in cents], list(range(len(cents))),
                       STEP_INITIALIZED, [1] * len(cents))


def test_scores_arithmetic_example():
    # distances 1 and 3 -> scores (0.75, 0.25)
    cs = _cs_from_centroids([[1.0]], [[3.0]])
    got = class_scores([[0.0]], cs).scores
    assert np.allclose(got, [0.75, 0.25], atol=1e-9)


def test_scores_at_centroid():
    cs = _cs_from_centroids([[1.0, 0.0]], [[5.0, 5.0]])
    got = class_scores([[1.0, 0.0]], cs).scores
    assert abs(got[0] - 1.0) < 1e-9 and abs(got[1]) < 1e-9


def test_scores_sum_to_k_minus_one():
    rng = np.random.default_rng(3)
    cs = _cs_from_centroids(*[rng.normal(size=(2, 2)) for _ in range(3)])
    got = class_scores(rng.normal(size=(2, 2)), cs)
    assert abs(got.scores.sum() - 2.0) < 1e-9
    assert not got.degenerate


def test_scores_degenerate_uniform():
    c = np.ones((1, 2))
    cs = _cs_from_centroids(c, c, c)
    got = class_scores(c, cs)
    assert got.degenerate
    assert np.allclose(got.scores, 2.0 / 3.0)


def test_centroid_set_requires_two_classes():
    with pytest.raises(ContractError):
        CentroidSet([Tensor(np.zeros((1, 1)))], ["a"], STEP_INITIALIZED, [1])


# -- adjust_supervised -------------------------------------------------------------

def test_supervised_single_sample_keeps_embedding():
    h_a, h_b = np.array([[1.0, 2.0]]), np.array([[5.0, 6.0]])
    cs = init_centroids({"a": [h_a], "b": [h_b]}, ["a", "b"])
    adj = adjust_supervised(cs, [(h_a, "a"), (h_b, "b")])
    assert np.allclose(adj.centroids[0].array, h_a, atol=1e-12)
    assert adj.step == STEP_SUPERVISED


def test_supervised_symmetric_pair_gives_plain_mean():
    # both class-a members are equidistant from every centroid, so their
    # weights cancel and the adjusted centroid is the plain mean
    a1, a2 = np.array([[-1.0, 0.0]]), np.array([[1.0, 0.0]])
    b = np.array([[0.0, 5.0]])
    cs = init_centroids({"a": [a1, a2], "b": [b]}, ["a", "b"])
    adj = adjust_supervised(cs, [(a1, "a"), (a2, "a"), (b, "b")])
    assert np.allclose(adj.centroids[0].array, [[0.0, 0.0]], atol=1e-12)


def _scores_oracle(h, cents):
    d = np.array([np.sqrt(((np.asarray(h) - np.asarray(c)) ** 2).sum())
                  for c in cents])
    return 1.0 - d / (d.sum() + 1e-12)


def test_supervised_matches_loop_oracle():
    rng = np.random.default_rng(4)
    mem_a = [rng.normal(size=(2, 2)) for _ in range(3)]
    mem_b = [rng.normal(size=(2, 2)) + 4.0 for _ in range(2)]
    cs = init_centroids({"a": mem_a, "b": mem_b}, ["a", "b"])
    cents = [c.array for c in cs.centroids]
    num, den = np.zeros((2, 2)), 0.0
    for h in mem_a:
        w = _scores_oracle(h, cents)[0]
        num += w * h
        den += w
    adj = adjust_supervised(cs, [(h, "a") for h in mem_a]
                            + [(h, "b") for h in mem_b])
    assert np.max(np.abs(adj.centroids[0].array - num / den)) < 1e-12


def test_step_order_enforced():
    rng = np.random.default_rng(5)
    cs = init_centroids({"a": [rng.normal(size=(1, 2))],
                         "b": [rng.normal(size=(1, 2))]}, ["a", "b"])
    with pytest.raises(ContractError):
        adjust_unsupervised(cs, [])
    adj = adjust_supervised(cs, [(cs.centroids[0].array, "a"),
                                 (cs.centroids[1].array, "b")])
    with pytest.raises(ContractError):
        adjust_supervised(adj, [])
    fin = adjust_unsupervised(adj, [])
    with pytest.raises(ContractError):
        adjust_unsupervised(fin, [])


# -- adjust_unsupervised ---------------------------------------------------------

def _two_class_setup(rng):
    mem_a = [rng.normal(size=(1, 2)) for _ in range(2)]
    mem_b = [rng.normal(size=(1, 2)) + 6.0 for _ in range(2)]
    labeled = [(h, "a") for h in mem_a] + [(h, "b") for h in mem_b]
    cs = adjust_supervised(init_centroids({"a": mem_a, "b": mem_b},
                                          ["a", "b"]), labeled)
    return cs, labeled


def test_unsupervised_empty_set_is_identity():
    cs, _ = _two_class_setup(np.random.default_rng(6))
    fin = adjust_unsupervised(cs, [])
    for a, b in zip(fin.centroids, cs.centroids):
        assert np.array_equal(a.array, b.array)
    assert fin.step == STEP_UNSUPERVISED
    assert fin.propagated_counts == [0, 0]


def test_unsupervised_sample_at_centroid_propagates_there():
    cs, _ = _two_class_setup(np.random.default_rng(7))
    at_c0 = cs.centroids[0].array.copy()
    fin = adjust_unsupervised(cs, [at_c0])
    assert fin.propagated_counts == [1, 0]
    n_k = cs.labeled_counts[0]
    expected = (n_k / (n_k + 1)) * cs.centroids[0].array + (1 / (n_k + 1)) * at_c0
    assert np.max(np.abs(fin.centroids[0].array - expected)) < 1e-9
    assert np.array_equal(fin.centroids[1].array, cs.centroids[1].array)


def test_unsupervised_matches_loop_oracle():
    rng = np.random.default_rng(8)
    cs, _ = _two_class_setup(rng)
    unlabeled = [rng.normal(size=(1, 2)), rng.normal(size=(1, 2)) + 6.0]
    cents = [c.array for c in cs.centroids]
    psum = [np.zeros((1, 2)), np.zeros((1, 2))]
    pw = [0.0, 0.0]
    pc = [0, 0]
    for h in unlabeled:
        s = _scores_oracle(h, cents)
        k = int(np.argmax(s))
        psum[k] += s[k] * h
        pw[k] += s[k]
        pc[k] += 1
    fin = adjust_unsupervised(cs, unlabeled)
    for k in range(2):
        if pc[k] == 0:
            expected = cents[k]
        else:
            n_k = cs.labeled_counts[k]
            expected = (n_k / (n_k + pc[k])) * cents[k] \
                + (pc[k] / (n_k + pc[k])) * (psum[k] / pw[k])
        assert np.max(np.abs(fin.centroids[k].array - expected)) < 1e-12


# -- regularization_loss ----------------------------------------------------------

def test_loss_perfect_clusters_is_zero():
    a, b = np.array([[0.0, 0.0]]), np.array([[4.0, 4.0]])
    labeled = [(a, "a"), (b, "b")]
    cs = adjust_unsupervised(
        adjust_supervised(init_centroids({"a": [a], "b": [b]}, ["a", "b"]),
                          labeled), [])
    assert abs(regularization_loss(labeled, cs)) < 1e-9


def test_loss_single_score_arithmetic():
    cs = CentroidSet([Tensor([[1.0]]), Tensor([[3.0]])], ["a", "b"],
                     STEP_UNSUPERVISED, [1, 1])
    loss = regularization_loss([(np.array([[0.0]]), "a")], cs)
    assert abs(loss - (-np.log(0.75))) < 1e-9


def test_loss_matches_loop_oracle():
    rng = np.random.default_rng(9)
    cents = [rng.normal(size=(2, 2)), rng.normal(size=(2, 2)) + 3.0]
    cs = CentroidSet([Tensor(c) for c in cents], ["a", "b"],
                     STEP_UNSUPERVISED, [2, 2])
    labeled = [(rng.normal(size=(2, 2)), "a") for _ in range(2)] \
        + [(rng.normal(size=(2, 2)) + 3.0, "b") for _ in range(2)]
    oracle = -sum(np.log(_scores_oracle(h, cents)[cs.index_of(y)] + 1e-12)
                  for h, y in labeled) / 4
    assert abs(regularization_loss(labeled, cs) - oracle) < 1e-12


def test_loss_rejects_initialized_step():
    rng = np.random.default_rng(10)
    cs = init_centroids({"a": [rng.normal(size=(1, 2))],
                         "b": [rng.normal(size=(1, 2))]}, ["a", "b"])
    with pytest.raises(ContractError):
        regularization_loss([(rng.normal(size=(1, 2)), "a")], cs)


# -- randomized properties ---------------------------------------------------------

embeddings_strategy = st.integers(0, 10_000)


def _random_case(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 5))
    l_dim, d = int(rng.integers(1, 3)), int(rng.integers(1, 4))
    n_lab = int(rng.integers(k, k + 6))
    n_unl = int(rng.integers(0, 5))
    embs = rng.normal(size=(n_lab + n_unl, l_dim, d))
    labels = [f"c{i % k}" for i in range(n_lab)] + [None] * n_unl
    order = [f"c{i}" for i in range(k)]
    return embs, labels, order


@given(embeddings_strategy)
@settings(max_examples=100, deadline=None)
def test_property_score_identity_and_bounds(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 11))
    cs = CentroidSet([Tensor(rng.normal(size=(2, 3))) for _ in range(k)],
                     list(range(k)), STEP_INITIALIZED, [1] * k)
    got = class_scores(rng.normal(size=(2, 3)), cs).scores
    assert abs(got.sum() - (k - 1)) < 1e-9
    assert np.all(got >= 0.0) and np.all(got <= 1.0)


def _in_convex_hull(point, vertices, tol=1e-9):
    v = np.array([np.asarray(x).ravel() for x in vertices])
    p = np.asarray(point).ravel()
    n = len(v)
    res = linprog(np.zeros(n), A_eq=np.vstack([v.T, np.ones(n)]),
                  b_eq=np.append(p, 1.0), bounds=[(0, None)] * n,
                  method="highs")
    return res.status == 0 and res.success


@given(embeddings_strategy)
@settings(max_examples=100, deadline=None)
def test_property_centroids_stay_in_convex_hull(seed):
    embs, labels, order = _random_case(seed)
    cs = run_three_steps(embs, labels, order)
    contributors = list(embs)
    for c in cs.centroids:
        assert _in_convex_hull(c.array, contributors)


@given(embeddings_strategy)
@settings(max_examples=100, deadline=None)
def test_property_translation_equivariance(seed):
    embs, labels, order = _random_case(seed)
    rng = np.random.default_rng(seed + 1)
    shift = rng.normal(size=embs.shape[1:])
    cs = run_three_steps(embs, labels, order)
    cs_shifted = run_three_steps(embs + shift, labels, order)
    for a, b in zip(cs.centroids, cs_shifted.centroids):
        assert np.max(np.abs(b.array - (a.array + shift))) < 1e-8
    h = embs[0]
    s1 = class_scores(h, cs).scores
    s2 = class_scores(h + shift, cs_shifted).scores
    assert np.max(np.abs(s1 - s2)) < 1e-8


@given(embeddings_strategy)
@settings(max_examples=100, deadline=None)
def test_property_no_unlabeled_idempotence(seed):
    embs, labels, order = _random_case(seed)
    labeled_only = [(h, y) for h, y in zip(embs, labels) if y is not None]
    by_class = {c: [h for h, y in labeled_only if y == c] for c in order}
    sup = adjust_supervised(init_centroids(by_class, order), labeled_only)
    fin = adjust_unsupervised(sup, [])
    for a, b in zip(fin.centroids, sup.centroids):
        assert np.array_equal(a.array, b.array)


# -- tape parity ----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_taped_pipeline_matches_pure_pipeline(seed):
    embs, labels, order = _random_case(seed + 100)
    cs = run_three_steps(embs, labels, order)
    labeled = [(h, y) for h, y in zip(embs, labels) if y is not None]
    pure_loss = regularization_loss(labeled, cs)

    tape = Tape()
    leaf = tape.leaf(embs)
    out = regularize_on_tape(
        tape, leaf,
        labeled_idx=[i for i, y in enumerate(labels) if y is not None],
        labeled_classes=[order.index(y) for y in labels if y is not None],
        unlabeled_idx=[i for i, y in enumerate(labels) if y is None],
        n_classes=len(order))
    assert abs(float(tape.val(out.loss)) - pure_loss) < 1e-10
    for k in range(len(order)):
        assert np.max(np.abs(tape.val(out.centroids[k])
                             - cs.centroids[k].array)) < 1e-10
    assert out.propagated_counts == cs.propagated_counts
