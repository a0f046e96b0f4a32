"""Finite-difference verification of every backward rule (both backends)."""

import numpy as np
import pytest

import smate.kernels as kernels
from smate.gradcheck import build_suite, fd_check, run_suite


@pytest.mark.parametrize("case", build_suite(), ids=lambda c: c.name)
def test_backward_rule_against_central_differences(case):
    rng = np.random.default_rng(1234)
    worst = max(case.runner(rng) for _ in range(3))
    assert worst < 1e-4, f"{case.name}: max relative error {worst:.3e}"


def test_gru_gradcheck_on_numpy_fallback(monkeypatch):
    from smate.kernels import _numpy as ref
    monkeypatch.setattr(kernels, "gru_forward", ref.gru_forward)
    monkeypatch.setattr(kernels, "gru_backward", ref.gru_backward)
    case = next(c for c in build_suite() if c.name == "gru_layer")
    assert case.runner(np.random.default_rng(0)) < 1e-4


def test_corrupted_backward_rule_is_caught(monkeypatch):
    # negative control: sabotage one backward rule and expect the check to fail
    from smate import tensor

    good = tensor.OPS["tanh"]
    bad = tensor.OpDef("tanh", good.forward,
                       lambda g, v, o, s, a: (g * (1.0 - 0.9 * o * o),))
    monkeypatch.setitem(tensor.OPS, "tanh", bad)
    rng = np.random.default_rng(0)
    x, r = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    err = fd_check(lambda t, l: t.sum(t.mul(t.tanh(l[0]), l[1])), [x, r])
    assert err > 1e-4


def test_run_suite_has_one_row_per_op_kind():
    rows = run_suite(seed=0, trials=1)
    names = [r[0] for r in rows]
    assert len(names) == len(set(names))
    for expected in ("gru_step", "conv_block", "batchnorm_eval", "avg_pool",
                     "smb", "fc", "reconstruction_loss", "regularization_loss"):
        assert expected in names
    assert all(passed for _, _, passed in rows)
