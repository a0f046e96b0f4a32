"""Central finite-difference verification of every backward rule.

``fd_check`` compares tape gradients against central differences for an
arbitrary builder; ``run_suite`` covers one named case per op kind and is
what the ``gradcheck`` CLI command prints as a pass/fail table.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .layers import ConvBlock, GruCell, Linear, SmbBlock
from .tensor import Parameter, Tape

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4


def _loss_value(build, arrays):
    tape = Tape()
    leaves = [tape.leaf(a) for a in arrays]
    return float(tape.val(build(tape, leaves)))


def fd_check(build: Callable[[Tape, list[int]], int],
             arrays: Sequence[np.ndarray],
             params: Sequence[Parameter] = (),
             step: float = DEFAULT_STEP) -> float:
    """Max relative error |analytic - numeric| / max(1, |numeric|).

    ``build(tape, leaf_ids) -> loss id`` must be pure given the leaf arrays
    and the values of ``params`` (referenced from inside via closures).
    """
    arrays = [np.array(a, dtype=np.float64, order="C") for a in arrays]
    tape = Tape()
    leaves = [tape.leaf(a) for a in arrays]
    for p in params:
        p.zero_grad()
    grads = tape.backward(build(tape, leaves))

    worst = 0.0

    def sweep(buf: np.ndarray, analytic: np.ndarray) -> float:
        err = 0.0
        flat = buf.reshape(-1)
        aflat = analytic.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            lp = _loss_value(build, arrays)
            flat[j] = orig - step
            lm = _loss_value(build, arrays)
            flat[j] = orig
            numeric = (lp - lm) / (2.0 * step)
            err = max(err, abs(aflat[j] - numeric) / max(1.0, abs(numeric)))
        return err

    for leaf, arr in zip(leaves, arrays):
        analytic = grads.get(leaf)
        if analytic is None:
            analytic = np.zeros_like(arr)
        worst = max(worst, sweep(arr, analytic))
    for p in params:
        worst = max(worst, sweep(p.value.array, p.gradient.array.copy()))
    return worst


def _probe(tape: Tape, out: int, probe: int) -> int:
    return tape.sum(tape.mul(out, probe))


@dataclass
class GradCase:
    name: str
    runner: Callable[[np.random.Generator], float]


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return x + np.sign(x) * margin


def build_suite() -> list[GradCase]:
    """One finite-difference case per op kind."""

    def case_matmul(rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        r = rng.normal(size=(3, 2))
        return fd_check(lambda t, l: _probe(t, t.matmul(l[0], l[1]), l[2]),
                        [a, b, r])

    def elementwise(op):
        def run(rng):
            a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
            if op == "div":
                b = np.abs(b) + 0.5
            r = rng.normal(size=(3, 3))
            return fd_check(
                lambda t, l: _probe(t, t.apply(op, l[0], l[1]), l[2]),
                [a, b, r])
        return run

    def unary(op):
        def run(rng):
            x = _away_from_zero(rng, (3, 4)) if op == "relu" \
                else rng.normal(size=(3, 4))
            if op == "log":
                x = np.abs(x) + 0.2
            r = rng.normal(size=(3, 4))
            return fd_check(lambda t, l: _probe(t, t.apply(op, l[0]), l[1]),
                            [x, r])
        return run

    def case_add_bias(rng):
        x, b, r = rng.normal(size=(3, 4)), rng.normal(size=4), rng.normal(size=(3, 4))
        return fd_check(lambda t, l: _probe(t, t.add_bias(l[0], l[1]), l[2]),
                        [x, b, r])

    def case_smul(rng):
        s, x, r = rng.normal(size=()), rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        return fd_check(lambda t, l: _probe(t, t.smul(l[0], l[1]), l[2]),
                        [s, x, r])

    def case_shape_ops(rng):
        x = rng.normal(size=(2, 6))
        y = rng.normal(size=(3, 4))
        r = rng.normal(size=(14, 2))

        def build(t, l):
            cat = t.concat([t.reshape(l[0], (6, 2)), t.reshape(l[1], (6, 2))],
                           axis=0)                      # (12, 2)
            row = t.reshape(t.take(cat, 3), (1, 2))
            rep = t.repeat_rows(row, 3, 2)              # (2, 2)
            return _probe(t, t.concat([cat, rep], axis=0), l[2])

        return fd_check(build, [x, y, r])

    def case_avg_pool(rng):
        x = rng.normal(size=(2, 7, 3))
        r = rng.normal(size=(2, 3, 3))
        return fd_check(lambda t, l: _probe(t, t.avg_pool(l[0], 3), l[1]),
                        [x, r])

    def case_window_mean(rng):
        x = rng.normal(size=(2, 6, 3))
        r = rng.normal(size=(2, 6, 3))
        return fd_check(lambda t, l: _probe(t, t.window_mean(l[0], 3), l[1]),
                        [x, r])

    def case_fc(rng):
        block = Linear("fc", 4, 3, rng)
        x = rng.normal(size=(5, 4))
        r = rng.normal(size=(5, 3))
        return fd_check(
            lambda t, l: _probe(t, block.apply_on(t, l[0], "relu"), l[1]),
            [x, r], params=block.params())

    def case_gru_step(rng):
        cell = GruCell("cell", 3, 4, rng)
        x = rng.normal(size=(2, 3))
        h = rng.normal(size=(2, 4))
        r = rng.normal(size=(2, 4))
        return fd_check(
            lambda t, l: _probe(t, cell.step_on(t, l[0], l[1]), l[2]),
            [x, h, r], params=cell.params())

    def case_gru_layer(rng):
        cell = GruCell("cell", 3, 4, rng)
        x = rng.normal(size=(2, 5, 3))
        r = rng.normal(size=(2, 5, 4))
        return fd_check(
            lambda t, l: _probe(t, cell.run_on(t, l[0]), l[1]),
            [x, r], params=cell.params())

    def case_conv_block(rng):
        block = ConvBlock("conv", 3, 4, 3, rng)
        x = rng.normal(size=(2, 6, 3))
        r = rng.normal(size=(2, 6, 4))
        return fd_check(
            lambda t, l: _probe(t, block.forward_on(t, l[0], training=True),
                                l[1]),
            [x, r], params=block.params())

    def case_batchnorm_eval(rng):
        block = ConvBlock("conv", 3, 4, 1, rng)
        block.bn_running_mean = rng.normal(size=4)
        block.bn_running_var = np.abs(rng.normal(size=4)) + 0.5
        x = rng.normal(size=(2, 5, 3))
        r = rng.normal(size=(2, 5, 4))
        return fd_check(
            lambda t, l: _probe(t, block.forward_on(t, l[0], training=False),
                                l[1]),
            [x, r], params=block.params())

    def case_smb(rng):
        block = SmbBlock("smb", 4, 3, rng)
        x = rng.normal(size=(2, 5, 4))
        r1 = rng.normal(size=(2, 5, 4))
        r2 = rng.normal(size=(2, 5, 4))

        def build(t, l):
            hp, s = block.forward_on(t, l[0])
            return t.add(_probe(t, hp, l[1]), _probe(t, s, l[2]))

        return fd_check(build, [x, r1, r2], params=block.params())

    def case_recon_loss(rng):
        x = rng.normal(size=(2, 5, 3))
        xr = rng.normal(size=(2, 5, 3))
        return fd_check(lambda t, l: t.recon_loss(l[0], l[1]), [x, xr])

    def case_frob_dist(rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(3, 4))
        return fd_check(lambda t, l: t.frob_dist(l[0], l[1]), [a, b])

    def case_reg_loss(rng):
        from .regularizer import regularize_on_tape
        n, l_dim, d, k = 6, 2, 3, 2
        # well-separated clusters keep the propagation argmax stable under
        # the +/- step perturbations
        h = rng.normal(size=(n, l_dim, d)) * 0.1
        h[0::2] += 3.0
        labels = [i % k for i in range(4)]

        def build(t, leaves):
            out = regularize_on_tape(t, leaves[0], labeled_idx=[0, 1, 2, 3],
                                     labeled_classes=labels,
                                     unlabeled_idx=[4, 5], n_classes=k)
            return out.loss

        return fd_check(build, [h])

    cases = [
        GradCase("matmul", case_matmul),
        GradCase("add", elementwise("add")),
        GradCase("sub", elementwise("sub")),
        GradCase("mul", elementwise("mul")),
        GradCase("div", elementwise("div")),
        GradCase("add_bias", case_add_bias),
        GradCase("smul", case_smul),
        GradCase("sigmoid", unary("sigmoid")),
        GradCase("tanh", unary("tanh")),
        GradCase("relu", unary("relu")),
        GradCase("log", unary("log")),
        GradCase("shape_ops", case_shape_ops),
        GradCase("avg_pool", case_avg_pool),
        GradCase("window_mean", case_window_mean),
        GradCase("fc", case_fc),
        GradCase("gru_step", case_gru_step),
        GradCase("gru_layer", case_gru_layer),
        GradCase("conv_block", case_conv_block),
        GradCase("batchnorm_eval", case_batchnorm_eval),
        GradCase("smb", case_smb),
        GradCase("reconstruction_loss", case_recon_loss),
        GradCase("embedding_distance", case_frob_dist),
        GradCase("regularization_loss", case_reg_loss),
    ]
    return cases


def run_suite(seed: int = 0, trials: int = 10,
              tol: float = DEFAULT_TOL) -> list[tuple[str, float, bool]]:
    """Run every case on ``trials`` random inputs; returns
    (name, max relative error, passed) rows."""
    results = []
    for case in build_suite():
        rng = np.random.default_rng(seed)
        worst = max(case.runner(rng) for _ in range(trials))
        results.append((case.name, worst, worst < tol))
    return results
