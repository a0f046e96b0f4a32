"""Dense 64-bit tensors and a reverse-mode differentiation tape.

The tape is define-by-run: every operation records a node holding the op
kind, the ids of its input nodes and whatever the backward rule needs.
Nodes are appended in creation order, so the node list is already a
topological order and ``backward`` is a single reverse sweep.

All values are float64. Binary elementwise ops require identical shapes;
the only implicit broadcast is multiplication by a scalar (``scale`` /
``smul``). Shape adaptation is always an explicit op (reshape, concat,
tile-like helpers), which keeps silent-broadcast bugs out of the model
code.
"""

from __future__ import annotations

import os
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import kernels

EPS = 1e-12

_CHECK_FINITE = os.environ.get("SMATE_CHECK_FINITE", "") not in ("", "0", "false")


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(RuntimeError):
    """An operation was invoked outside its contract (order, arity, dtype)."""


class ConfigurationError(ValueError):
    """A run configuration is infeasible (empty class, bad split, ...)."""


class TrainingAbort(RuntimeError):
    """Training was stopped because of a non-finite loss or gradient."""


class Tensor:
    """Dense n-dimensional array of float64 with shape metadata.

    Values are immutable by convention once produced by an operation;
    only ``Parameter`` buffers are updated in place (by the optimizer).
    """

    __slots__ = ("_a",)

    def __init__(self, values, shape: Sequence[int] | None = None):
        a = np.ascontiguousarray(values, dtype=np.float64)
        if shape is not None:
            a = a.reshape(tuple(shape))
        self._a = a

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        return cls(np.zeros(tuple(shape)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self._a.shape

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the entries."""
        return self._a.reshape(-1)

    @property
    def array(self) -> np.ndarray:
        return self._a

    @property
    def size(self) -> int:
        return self._a.size

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self._a.astype(dtype)
        return self._a

    def __len__(self) -> int:
        return len(self._a)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def as_array(x) -> np.ndarray:
    """Coerce a Tensor / ndarray / scalar to a float64 ndarray."""
    if isinstance(x, Tensor):
        return x.array
    return np.asarray(x, dtype=np.float64)


class Parameter:
    """Named trainable value with a same-shape gradient accumulator."""

    __slots__ = ("name", "value", "gradient")

    def __init__(self, name: str, value):
        self.name = name
        self.value = value if isinstance(value, Tensor) else Tensor(value)
        self.gradient = Tensor.zeros(self.value.shape)

    def zero_grad(self) -> None:
        self.gradient.array[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


# ---------------------------------------------------------------------------
# Op registry
# ---------------------------------------------------------------------------

class OpDef:
    __slots__ = ("name", "forward", "backward")

    def __init__(self, name, forward, backward):
        self.name = name
        self.forward = forward
        self.backward = backward


OPS: dict[str, OpDef] = {}


def _register(name: str, forward: Callable, backward: Callable) -> None:
    OPS[name] = OpDef(name, forward, backward)


def _same_shape(name: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")


# -- matmul -----------------------------------------------------------------

def _matmul_fw(vals, attrs):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {a.shape} and {b.shape}"
        )
    return a @ b, None


def _matmul_bw(g, vals, out, saved, attrs):
    a, b = vals
    return g @ b.T, a.T @ g


_register("matmul", _matmul_fw, _matmul_bw)


# -- elementwise binary -----------------------------------------------------

def _add_fw(vals, attrs):
    a, b = vals
    _same_shape("add", a, b)
    return a + b, None


def _sub_fw(vals, attrs):
    a, b = vals
    _same_shape("sub", a, b)
    return a - b, None


def _mul_fw(vals, attrs):
    a, b = vals
    _same_shape("mul", a, b)
    return a * b, None


def _div_fw(vals, attrs):
    a, b = vals
    _same_shape("div", a, b)
    return a / b, None


_register("add", _add_fw, lambda g, v, o, s, a: (g, g))
_register("sub", _sub_fw, lambda g, v, o, s, a: (g, -g))
_register("mul", _mul_fw, lambda g, v, o, s, a: (g * v[1], g * v[0]))
_register("div", _div_fw,
          lambda g, v, o, s, a: (g / v[1], -g * v[0] / (v[1] * v[1])))


def _add_n_fw(vals, attrs):
    first = vals[0]
    out = first.copy()
    for v in vals[1:]:
        _same_shape("add_n", first, v)
        out += v
    return out, None


_register("add_n", _add_n_fw, lambda g, v, o, s, a: tuple(g for _ in v))


# -- scalar scaling ---------------------------------------------------------

def _scale_fw(vals, attrs):
    return vals[0] * attrs["c"], None


_register("scale", _scale_fw, lambda g, v, o, s, a: (g * a["c"],))


def _smul_fw(vals, attrs):
    s, x = vals
    if s.ndim != 0:
        raise DimensionError(f"smul: first operand must be scalar, got {s.shape}")
    return s * x, None


def _smul_bw(g, vals, out, saved, attrs):
    s, x = vals
    return np.asarray((g * x).sum()), s * g


_register("smul", _smul_fw, _smul_bw)


def _add_bias_fw(vals, attrs):
    x, b = vals
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(
            f"add_bias: trailing dimension of {x.shape} does not match {b.shape}"
        )
    return x + b, None


def _add_bias_bw(g, vals, out, saved, attrs):
    return g, g.reshape(-1, g.shape[-1]).sum(axis=0)


_register("add_bias", _add_bias_fw, _add_bias_bw)


# -- activations ------------------------------------------------------------

def _sigmoid_fw(vals, attrs):
    x = vals[0]
    out = np.empty_like(x)
    np.exp(-np.abs(x), out=out)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + out[pos])
    out[~pos] = out[~pos] / (1.0 + out[~pos])
    return out, None


_register("sigmoid", _sigmoid_fw, lambda g, v, o, s, a: (g * o * (1.0 - o),))
_register("tanh", lambda v, a: (np.tanh(v[0]), None),
          lambda g, v, o, s, a: (g * (1.0 - o * o),))
_register("relu", lambda v, a: (np.maximum(v[0], 0.0), None),
          lambda g, v, o, s, a: (g * (v[0] > 0.0),))
_register("log", lambda v, a: (np.log(v[0]), None),
          lambda g, v, o, s, a: (g / v[0],))


# -- reductions & shape -----------------------------------------------------

_register("sum", lambda v, a: (np.asarray(np.sum(v[0])), None),
          lambda g, v, o, s, a: (np.broadcast_to(g, v[0].shape).copy(),))


def _reshape_fw(vals, attrs):
    return vals[0].reshape(attrs["shape"]), None


_register("reshape", _reshape_fw,
          lambda g, v, o, s, a: (g.reshape(v[0].shape),))


def _concat_fw(vals, attrs):
    return np.concatenate(vals, axis=attrs["axis"]), None


def _concat_bw(g, vals, out, saved, attrs):
    axis = attrs["axis"]
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))


_register("concat", _concat_fw, _concat_bw)


def _take_fw(vals, attrs):
    return np.ascontiguousarray(vals[0][attrs["index"]]), None


def _take_bw(g, vals, out, saved, attrs):
    dx = np.zeros_like(vals[0])
    dx[attrs["index"]] = g
    return (dx,)


_register("take", _take_fw, _take_bw)


def _repeat_rows_fw(vals, attrs):
    x = vals[0]
    p, length = attrs["p"], attrs["length"]
    out = np.repeat(x, p, axis=-2)[..., :length, :]
    return np.ascontiguousarray(out), None


def _repeat_rows_bw(g, vals, out, saved, attrs):
    x = vals[0]
    p, length = attrs["p"], attrs["length"]
    l = x.shape[-2]
    buf = np.zeros(x.shape[:-2] + (l * p, x.shape[-1]))
    buf[..., :length, :] = g
    return (buf.reshape(x.shape[:-2] + (l, p, x.shape[-1])).sum(axis=-2),)


_register("repeat_rows", _repeat_rows_fw, _repeat_rows_bw)


# -- pooling and windowed means (time axis = -2) ----------------------------

def _avg_pool_fw(vals, attrs):
    x = vals[0]
    p = attrs["p"]
    if p < 1:
        raise ContractError(f"avg_pool: pool size must be >= 1, got {p}")
    t = x.shape[-2]
    starts = np.arange(0, t, p)
    sums = np.add.reduceat(x, starts, axis=-2)
    counts = np.minimum(starts + p, t) - starts
    return sums / counts[:, None], counts


def _avg_pool_bw(g, vals, out, saved, attrs):
    counts = saved
    return (np.repeat(g / counts[:, None], counts, axis=-2),)


_register("avg_pool", _avg_pool_fw, _avg_pool_bw)


def _window_bounds(t: int, m: int):
    r = m // 2
    idx = np.arange(t)
    lo = np.clip(idx - r, 0, t)
    hi = np.clip(idx + r + 1, 0, t)
    return lo, hi


def _window_sum(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    cs = np.concatenate(
        [np.zeros(x.shape[:-2] + (1, x.shape[-1])), np.cumsum(x, axis=-2)],
        axis=-2,
    )
    return np.take(cs, hi, axis=-2) - np.take(cs, lo, axis=-2)


def _window_mean_fw(vals, attrs):
    x = vals[0]
    m = attrs["m"]
    if m < 1:
        raise ContractError(f"window_mean: window must be >= 1, got {m}")
    lo, hi = _window_bounds(x.shape[-2], m)
    counts = (hi - lo).astype(np.float64)
    return _window_sum(x, lo, hi) / counts[:, None], counts


def _window_mean_bw(g, vals, out, saved, attrs):
    # index j contributes to window i iff |i - j| <= m // 2, so the adjoint
    # is a plain windowed sum of g / count.
    counts = saved
    lo, hi = _window_bounds(g.shape[-2], attrs["m"])
    return (_window_sum(g / counts[:, None], lo, hi),)


_register("window_mean", _window_mean_fw, _window_mean_bw)


# -- 1-D convolution, zero-padded 'same' ------------------------------------

def _conv1d_fw(vals, attrs):
    x, k, b = vals
    if x.ndim != 3 or k.ndim != 3 or x.shape[-1] != k.shape[1]:
        raise DimensionError(
            f"conv1d: input {x.shape} incompatible with kernel {k.shape}"
        )
    n, t, _ = x.shape
    m, _, dc = k.shape
    c = m // 2
    out = np.zeros((n, t, dc))
    for j in range(m):
        off = j - c
        ts, te = max(0, -off), min(t, t - off)
        if ts < te:
            out[:, ts:te] += x[:, ts + off:te + off] @ k[j]
    out += b
    return out, None


def _conv1d_bw(g, vals, out, saved, attrs):
    x, k, b = vals
    n, t, di = x.shape
    m, _, dc = k.shape
    c = m // 2
    dx = np.zeros_like(x)
    dk = np.zeros_like(k)
    for j in range(m):
        off = j - c
        ts, te = max(0, -off), min(t, t - off)
        if ts < te:
            xs = x[:, ts + off:te + off].reshape(-1, di)
            gs = g[:, ts:te].reshape(-1, dc)
            dk[j] = xs.T @ gs
            dx[:, ts + off:te + off] += g[:, ts:te] @ k[j].T
    return dx, dk, g.sum(axis=(0, 1))


_register("conv1d", _conv1d_fw, _conv1d_bw)


# -- batch normalization over (batch, time) per channel ----------------------

def _batchnorm_fw(vals, attrs):
    x, gamma, beta = vals
    if x.ndim != 3 or gamma.shape != (x.shape[-1],):
        raise DimensionError(
            f"batchnorm: input {x.shape} incompatible with gamma {gamma.shape}"
        )
    eps = attrs["eps"]
    if attrs["training"]:
        mean = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
    else:
        mean, var = attrs["mean"], attrs["var"]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return xhat * gamma + beta, (xhat, inv_std, mean, var)


def _batchnorm_bw(g, vals, out, saved, attrs):
    x, gamma, beta = vals
    xhat, inv_std, _, _ = saved
    dgamma = (g * xhat).sum(axis=(0, 1))
    dbeta = g.sum(axis=(0, 1))
    if attrs["training"]:
        n = x.shape[0] * x.shape[1]
        dx = gamma * inv_std / n * (n * g - dbeta - xhat * dgamma)
    else:
        dx = g * gamma * inv_std
    return dx, dgamma, dbeta


_register("batchnorm", _batchnorm_fw, _batchnorm_bw)


# -- fused GRU over a whole sequence (hot kernel) ----------------------------

def _gru_fw(vals, attrs):
    x, wp, up, b = vals
    if x.ndim != 3 or wp.shape[0] != x.shape[-1] or wp.shape[1] != 3 * up.shape[0]:
        raise DimensionError(
            f"gru_sequence: input {x.shape} incompatible with packed weights "
            f"{wp.shape} / {up.shape}"
        )
    h, gates, hr = kernels.gru_forward(x, wp, up, b)
    return h, (gates, hr)


def _gru_bw(g, vals, out, saved, attrs):
    x, wp, up, b = vals
    gates, hr = saved
    return kernels.gru_backward(g, x, wp, up, out, gates, hr)


_register("gru_sequence", _gru_fw, _gru_bw)


# -- distance / loss composites ----------------------------------------------

def _frob_dist_fw(vals, attrs):
    a, b = vals
    _same_shape("frob_dist", a, b)
    diff = a - b
    return np.asarray(np.sqrt(np.sum(diff * diff))), diff


def _frob_dist_bw(g, vals, out, saved, attrs):
    diff = saved
    da = g * diff / max(float(out), EPS)
    return da, -da


_register("frob_dist", _frob_dist_fw, _frob_dist_bw)


def _recon_loss_fw(vals, attrs):
    x, xr = vals
    _same_shape("recon_loss", x, xr)
    diff = x - xr
    norms = np.sqrt(np.sum(diff * diff, axis=-1))
    return np.asarray(norms.mean()), (diff, norms)


def _recon_loss_bw(g, vals, out, saved, attrs):
    diff, norms = saved
    scaled = diff / (np.maximum(norms, EPS)[..., None] * norms.size)
    dx = g * scaled
    return dx, -dx


_register("recon_loss", _recon_loss_fw, _recon_loss_bw)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

class Node:
    __slots__ = ("op", "inputs", "attrs", "value", "saved", "param")

    def __init__(self, op, inputs, attrs, value, saved=None, param=None):
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.value = value
        self.saved = saved
        self.param = param


class Tape:
    """Ordered record of operations; supports backward and exact replay."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._param_nodes: dict[int, int] = {}

    # -- recording ----------------------------------------------------------

    def leaf(self, value) -> int:
        self.nodes.append(Node("leaf", (), {}, as_array(value)))
        return len(self.nodes) - 1

    def const(self, value: float) -> int:
        return self.leaf(np.asarray(float(value)))

    def param(self, p: Parameter) -> int:
        nid = self._param_nodes.get(id(p))
        if nid is None:
            self.nodes.append(Node("leaf", (), {}, p.value.array, param=p))
            nid = len(self.nodes) - 1
            self._param_nodes[id(p)] = nid
        return nid

    def apply(self, op: str, *inputs: int, **attrs) -> int:
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ContractError(f"{op}: unknown input node {i}")
        vals = [self.nodes[i].value for i in inputs]
        value, saved = OPS[op].forward(vals, attrs)
        if _CHECK_FINITE and not np.all(np.isfinite(value)):
            raise TrainingAbort(f"non-finite values produced by op '{op}'")
        self.nodes.append(Node(op, inputs, attrs, value, saved))
        return len(self.nodes) - 1

    # -- access ---------------------------------------------------------------

    def val(self, nid: int) -> np.ndarray:
        return self.nodes[nid].value

    def output(self, nid: int) -> Tensor:
        return Tensor(self.nodes[nid].value)

    def __len__(self) -> int:
        return len(self.nodes)

    # -- op sugar -------------------------------------------------------------

    def matmul(self, a, b):
        return self.apply("matmul", a, b)

    def add(self, a, b):
        return self.apply("add", a, b)

    def sub(self, a, b):
        return self.apply("sub", a, b)

    def mul(self, a, b):
        return self.apply("mul", a, b)

    def div(self, a, b):
        return self.apply("div", a, b)

    def add_n(self, ids: Iterable[int]):
        ids = tuple(ids)
        if len(ids) == 1:
            return ids[0]
        return self.apply("add_n", *ids)

    def scale(self, a, c: float):
        return self.apply("scale", a, c=float(c))

    def smul(self, s, a):
        return self.apply("smul", s, a)

    def add_bias(self, x, b):
        return self.apply("add_bias", x, b)

    def sigmoid(self, a):
        return self.apply("sigmoid", a)

    def tanh(self, a):
        return self.apply("tanh", a)

    def relu(self, a):
        return self.apply("relu", a)

    def log(self, a):
        return self.apply("log", a)

    def sum(self, a):
        return self.apply("sum", a)

    def reshape(self, a, shape):
        return self.apply("reshape", a, shape=tuple(shape))

    def concat(self, ids: Iterable[int], axis: int):
        return self.apply("concat", *ids, axis=axis)

    def take(self, a, index: int):
        return self.apply("take", a, index=index)

    def repeat_rows(self, a, p: int, length: int):
        return self.apply("repeat_rows", a, p=p, length=length)

    def avg_pool(self, a, p: int):
        return self.apply("avg_pool", a, p=p)

    def window_mean(self, a, m: int):
        return self.apply("window_mean", a, m=m)

    def conv1d(self, x, kernel, bias):
        return self.apply("conv1d", x, kernel, bias)

    def batchnorm(self, x, gamma, beta, *, eps, training, mean=None, var=None):
        attrs = {"eps": eps, "training": training}
        if not training:
            attrs["mean"] = np.array(mean, dtype=np.float64, copy=True)
            attrs["var"] = np.array(var, dtype=np.float64, copy=True)
        return self.apply("batchnorm", x, gamma, beta, **attrs)

    def gru_sequence(self, x, wp, up, b):
        return self.apply("gru_sequence", x, wp, up, b)

    def frob_dist(self, a, b):
        return self.apply("frob_dist", a, b)

    def recon_loss(self, x, xr):
        return self.apply("recon_loss", x, xr)

    # -- reverse sweep ----------------------------------------------------------

    def backward(self, loss: int) -> dict[int, np.ndarray]:
        """Accumulate d(loss)/d(leaf) into every reachable Parameter.

        Returns the full gradient map (node id -> gradient array), which is
        what finite-difference checks and unit tests inspect. Parameters not
        feeding the loss simply keep their current (zero) gradient.
        """
        root = self.nodes[loss]
        if root.value.size != 1:
            raise ContractError(
                f"backward: loss must be scalar, got shape {root.value.shape}"
            )
        grads: dict[int, np.ndarray] = {loss: np.ones_like(root.value)}
        for nid in range(loss, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.op == "leaf":
                if node.param is not None:
                    node.param.gradient.array[...] += g
                continue
            vals = [self.nodes[i].value for i in node.inputs]
            in_grads = OPS[node.op].backward(g, vals, node.value, node.saved,
                                             node.attrs)
            for i, gi in zip(node.inputs, in_grads):
                if gi is None:
                    continue
                acc = grads.get(i)
                if acc is None:
                    # own an ndarray: numpy returns immutable scalars from
                    # 0-d arithmetic, and views/aliases of g must not be
                    # mutated by later accumulation
                    if isinstance(gi, np.ndarray) and gi.base is None \
                            and gi is not g:
                        grads[i] = gi
                    else:
                        grads[i] = np.array(gi)
                else:
                    acc += gi
        return grads

    # -- replay -------------------------------------------------------------

    def replay(self) -> None:
        """Recompute every node from recorded leaves; raise on any mismatch."""
        for nid, node in enumerate(self.nodes):
            if node.op == "leaf":
                continue
            vals = [self.nodes[i].value for i in node.inputs]
            value, _ = OPS[node.op].forward(vals, node.attrs)
            if not np.array_equal(value, node.value):
                raise ContractError(
                    f"replay: node {nid} ({node.op}) did not reproduce its value"
                )


def check_finite(name: str, value: np.ndarray) -> None:
    if not np.all(np.isfinite(value)):
        raise TrainingAbort(f"non-finite values in {name}")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class Adam:
    """Adam optimizer with per-parameter first/second moment state."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0 or eps <= 0:
            raise ContractError("Adam: lr and eps must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros(p.value.shape) for p in self.params]
        self._v = [np.zeros(p.value.shape) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.gradient.array
            if not np.all(np.isfinite(g)):
                raise TrainingAbort(
                    f"NaN/Inf gradient in parameter '{p.name}' at step {self.t}"
                )
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            p.value.array[...] -= update
