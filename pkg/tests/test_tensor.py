"""Tensor core: op semantics, backward rules, Adam, tape replay."""

import numpy as np
import pytest

from smate.tensor import (
    Adam,
    ContractError,
    DimensionError,
    Parameter,
    Tape,
    Tensor,
    TrainingAbort,
)


def test_tensor_shape_and_flat_data():
    t = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert t.shape == (2, 2)
    assert t.data.tolist() == [1.0, 2.0, 3.0, 4.0]
    assert int(np.prod(t.shape)) == len(t.data)


def test_matmul_identity():
    tape = Tape()
    out = tape.matmul(tape.leaf(np.eye(2)), tape.leaf([[1.0, 2.0], [3.0, 4.0]]))
    assert tape.val(out).tolist() == [[1.0, 2.0], [3.0, 4.0]]


def test_matmul_annihilation():
    tape = Tape()
    out = tape.matmul(tape.leaf([[1.0, 0.0], [0.0, 0.0]]),
                      tape.leaf([[0.0], [5.0]]))
    assert tape.val(out).tolist() == [[0.0], [0.0]]


def matmul_oracle(a, b):
    """Element-by-element triple loop."""
    p, q = a.shape
    q2, r = b.shape
    out = np.zeros((p, r))
    for i in range(p):
        for j in range(r):
            acc = 0.0
            for k in range(q):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def test_matmul_matches_triple_loop_oracle():
    rng = np.random.default_rng(7)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    tape = Tape()
    out = tape.val(tape.matmul(tape.leaf(a), tape.leaf(b)))
    assert np.max(np.abs(out - matmul_oracle(a, b))) < 1e-12


def test_matmul_shape_error_names_both_shapes():
    tape = Tape()
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        tape.matmul(tape.leaf(np.zeros((2, 3))), tape.leaf(np.zeros((2, 2))))


def test_elementwise_examples():
    tape = Tape()
    assert tape.val(tape.sigmoid(tape.leaf([0.0]))).tolist() == [0.5]
    assert tape.val(tape.relu(tape.leaf([-1.0, 2.0]))).tolist() == [0.0, 2.0]
    out = tape.mul(tape.leaf([1.0, 2.0, 3.0]), tape.leaf([4.0, 5.0, 6.0]))
    assert tape.val(out).tolist() == [4.0, 10.0, 18.0]


def test_elementwise_shape_mismatch():
    tape = Tape()
    with pytest.raises(DimensionError):
        tape.add(tape.leaf(np.zeros(3)), tape.leaf(np.zeros(4)))


def test_backward_sum_gives_ones():
    p = Parameter("p", np.arange(4.0).reshape(2, 2))
    tape = Tape()
    tape.backward(tape.sum(tape.param(p)))
    assert p.gradient.array.tolist() == [[1.0, 1.0], [1.0, 1.0]]


def test_backward_sum_of_squares():
    p = Parameter("p", [1.0, 2.0])
    tape = Tape()
    pid = tape.param(p)
    tape.backward(tape.sum(tape.mul(pid, pid)))
    assert p.gradient.array.tolist() == [2.0, 4.0]


def test_backward_requires_scalar_loss():
    tape = Tape()
    nid = tape.leaf(np.zeros((2, 2)))
    with pytest.raises(ContractError):
        tape.backward(nid)


def test_detached_parameter_keeps_zero_gradient():
    used = Parameter("used", [1.0])
    detached = Parameter("detached", [1.0])
    tape = Tape()
    tape.param(detached)
    tape.backward(tape.sum(tape.param(used)))
    assert detached.gradient.array.tolist() == [0.0]
    assert used.gradient.array.tolist() == [1.0]


def test_gradient_accumulates_across_backward_calls():
    p = Parameter("p", [1.0])
    tape = Tape()
    loss = tape.sum(tape.param(p))
    tape.backward(loss)
    tape.backward(loss)
    assert p.gradient.array.tolist() == [2.0]


def test_shared_input_grad_not_aliased():
    # add(a, a) must accumulate 2g, and mutating accumulators must never
    # leak into sibling gradients
    tape = Tape()
    a = tape.leaf([1.0, 2.0])
    grads = tape.backward(tape.sum(tape.add(a, a)))
    assert grads[a].tolist() == [2.0, 2.0]


def test_determinism_same_inputs_bitwise_identical():
    def run():
        rng = np.random.default_rng(42)
        x, w = rng.normal(size=(5, 3)), rng.normal(size=(3, 4))
        tape = Tape()
        xl, wl = tape.leaf(x), tape.leaf(w)
        loss = tape.sum(tape.tanh(tape.matmul(xl, wl)))
        grads = tape.backward(loss)
        return tape.val(loss).copy(), grads[wl].copy()

    l1, g1 = run()
    l2, g2 = run()
    assert np.array_equal(l1, l2) and np.array_equal(g1, g2)


def test_tape_replay_reproduces_outputs():
    rng = np.random.default_rng(3)
    tape = Tape()
    x = tape.leaf(rng.normal(size=(2, 5, 3)))
    y = tape.avg_pool(tape.window_mean(x, 3), 2)
    tape.sum(y)
    tape.replay()


def test_tape_replay_detects_corruption():
    tape = Tape()
    x = tape.leaf([1.0, 2.0])
    out = tape.relu(x)
    tape.nodes[out].value[0] = 99.0
    with pytest.raises(ContractError, match="replay"):
        tape.replay()


# -- Adam --------------------------------------------------------------------

def test_adam_zero_gradient_leaves_parameter_unchanged():
    p = Parameter("p", [1.0, -2.0])
    opt = Adam([p], lr=0.1)
    for _ in range(5):
        opt.step()
    assert p.value.array.tolist() == [1.0, -2.0]
    assert np.all(opt._m[0] == 0.0) and np.all(opt._v[0] == 0.0)


def test_adam_constant_gradient_update_magnitude_tends_to_lr():
    p = Parameter("p", [0.0])
    opt = Adam([p], lr=0.05)
    prev = p.value.array.copy()
    for t in range(500):
        p.gradient.array[...] = 3.0
        opt.step()
        delta = abs(p.value.array - prev)[0]
        prev = p.value.array.copy()
    assert abs(delta - 0.05) < 0.05 * 0.01


def test_adam_single_step_matches_hand_executed_recurrence():
    # one step on f(p) = p^2 from p = 1 with lr = 0.1
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    g = 2.0  # df/dp at p = 1
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    m_hat = m / (1 - b1)
    v_hat = v / (1 - b2)
    expected = 1.0 - lr * m_hat / (np.sqrt(v_hat) + eps)

    p = Parameter("p", [1.0])
    tape = Tape()
    pid = tape.param(p)
    tape.backward(tape.sum(tape.mul(pid, pid)))
    Adam([p], lr=lr, betas=(b1, b2), eps=eps).step()
    assert abs(p.value.array[0] - expected) < 1e-12


def test_adam_nan_gradient_aborts_naming_parameter():
    p = Parameter("enc.w_r", [1.0])
    p.gradient.array[...] = np.nan
    with pytest.raises(TrainingAbort, match="enc.w_r"):
        Adam([p]).step()
