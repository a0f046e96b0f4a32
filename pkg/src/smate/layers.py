"""Neural building blocks: GRU, 1-D convolution + batch norm, pooling,
fully connected maps, and the spatial calibration block.

Every block is a container of named :class:`~smate.tensor.Parameter`
objects plus ``*_on(tape, ...)`` methods that record the forward pass on a
tape. Tape-level functions work on batched nodes with layout (n, t, d);
the thin value-level wrappers at the bottom expose single-sample
signatures used by tests and downstream callers.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import ContractError, DimensionError, Parameter, Tape, Tensor, as_array


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape=None) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape if shape is not None else (fan_in, fan_out))


class Linear:
    """Affine map d_in -> d_out with optional activation."""

    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator):
        self.w = Parameter(f"{name}.w", glorot_uniform(rng, d_in, d_out))
        self.b = Parameter(f"{name}.b", np.zeros(d_out))

    def params(self) -> list[Parameter]:
        return [self.w, self.b]

    def apply_on(self, tape: Tape, x: int, activation: str = "none") -> int:
        return fc_on(tape, x, tape.param(self.w), tape.param(self.b), activation)


def fc_on(tape: Tape, x: int, w: int, b: int, activation: str = "none") -> int:
    """Row-wise affine map over the trailing dimension of a 2-D or 3-D node."""
    shape = tape.val(x).shape
    d_in, d_out = tape.val(w).shape
    if shape[-1] != d_in:
        raise DimensionError(
            f"fc: trailing dimension of {shape} does not match weights "
            f"{tape.val(w).shape}"
        )
    flat = x if len(shape) == 2 else tape.reshape(x, (-1, d_in))
    out = tape.add_bias(tape.matmul(flat, w), b)
    if activation == "relu":
        out = tape.relu(out)
    elif activation == "sigmoid":
        out = tape.sigmoid(out)
    elif activation != "none":
        raise ContractError(f"fc: unknown activation {activation!r}")
    if len(shape) != 2:
        out = tape.reshape(out, shape[:-1] + (d_out,))
    return out


class GruCell:
    """Gated recurrent cell h_t = (1-z_t)*h_{t-1} + z_t*cand_t.

    cand_t = tanh(W_h x_t + U_h (h_{t-1} * r_t) + b_h), with sigmoid reset
    and update gates r_t, z_t.
    """

    def __init__(self, name: str, d_in: int, d_g: int, rng: np.random.Generator):
        if d_g < 1:
            raise ContractError("GruCell: d_g must be positive")
        self.d_in = d_in
        self.d_g = d_g
        mk = lambda suffix, fi, fo: Parameter(
            f"{name}.{suffix}", glorot_uniform(rng, fi, fo))
        self.w_r, self.w_z, self.w_h = (mk(s, d_in, d_g) for s in ("w_r", "w_z", "w_h"))
        self.u_r, self.u_z, self.u_h = (mk(s, d_g, d_g) for s in ("u_r", "u_z", "u_h"))
        self.b_r = Parameter(f"{name}.b_r", np.zeros(d_g))
        self.b_z = Parameter(f"{name}.b_z", np.zeros(d_g))
        self.b_h = Parameter(f"{name}.b_h", np.zeros(d_g))

    def params(self) -> list[Parameter]:
        return [self.w_r, self.w_z, self.w_h, self.u_r, self.u_z, self.u_h,
                self.b_r, self.b_z, self.b_h]

    def step_on(self, tape: Tape, x: int, h: int) -> int:
        """One recurrence step from primitive ops; x, h are (n, d) nodes."""
        p = tape.param
        r = tape.sigmoid(tape.add_bias(
            tape.add(tape.matmul(x, p(self.w_r)), tape.matmul(h, p(self.u_r))),
            p(self.b_r)))
        z = tape.sigmoid(tape.add_bias(
            tape.add(tape.matmul(x, p(self.w_z)), tape.matmul(h, p(self.u_z))),
            p(self.b_z)))
        cand = tape.tanh(tape.add_bias(
            tape.add(tape.matmul(x, p(self.w_h)),
                     tape.matmul(tape.mul(h, r), p(self.u_h))),
            p(self.b_h)))
        ones = tape.leaf(np.ones(tape.val(z).shape))
        return tape.add(tape.mul(tape.sub(ones, z), h), tape.mul(z, cand))

    def run_on(self, tape: Tape, x: int) -> int:
        """Full sequence via the fused kernel; x is (n, t, d_in), zero h_0."""
        if tape.val(x).shape[-2] < 1:
            raise ContractError("gru: empty sequence")
        p = tape.param
        wp = tape.concat([p(self.w_r), p(self.w_z), p(self.w_h)], axis=1)
        up = tape.concat([p(self.u_r), p(self.u_z), p(self.u_h)], axis=1)
        b = tape.concat([p(self.b_r), p(self.b_z), p(self.b_h)], axis=0)
        return tape.gru_sequence(x, wp, up, b)


class ConvBlock:
    """Zero-padded 'same' 1-D convolution + batch norm + ReLU."""

    def __init__(self, name: str, d_in: int, d_c: int, m: int,
                 rng: np.random.Generator, bn_eps: float = 1e-5,
                 bn_momentum: float = 0.9):
        if m < 1:
            raise ContractError("ConvBlock: kernel window must be >= 1")
        self.name = name
        self.m = m
        self.kernel = Parameter(
            f"{name}.kernel",
            glorot_uniform(rng, m * d_in, d_c, shape=(m, d_in, d_c)))
        self.bias = Parameter(f"{name}.bias", np.zeros(d_c))
        self.bn_gamma = Parameter(f"{name}.bn_gamma", np.ones(d_c))
        self.bn_beta = Parameter(f"{name}.bn_beta", np.zeros(d_c))
        self.bn_running_mean = np.zeros(d_c)
        self.bn_running_var = np.ones(d_c)
        self.bn_eps = bn_eps
        self.bn_momentum = bn_momentum

    def params(self) -> list[Parameter]:
        return [self.kernel, self.bias, self.bn_gamma, self.bn_beta]

    def forward_on(self, tape: Tape, x: int, training: bool) -> int:
        conv = tape.conv1d(x, tape.param(self.kernel), tape.param(self.bias))
        if training:
            bn = tape.batchnorm(conv, tape.param(self.bn_gamma),
                                tape.param(self.bn_beta), eps=self.bn_eps,
                                training=True)
            _, _, mean, var = tape.nodes[bn].saved
            mom = self.bn_momentum
            self.bn_running_mean = mom * self.bn_running_mean + (1 - mom) * mean
            self.bn_running_var = mom * self.bn_running_var + (1 - mom) * var
        else:
            bn = tape.batchnorm(conv, tape.param(self.bn_gamma),
                                tape.param(self.bn_beta), eps=self.bn_eps,
                                training=False, mean=self.bn_running_mean,
                                var=self.bn_running_var)
        return tape.relu(bn)


class SmbBlock:
    """Per-timestep, per-variable calibration weights in (0, 1).

    A truncated windowed mean over time summarizes each variable's local
    context; a bottleneck pair of affine maps (ReLU after the compression,
    sigmoid after the expansion) mixes the variables and emits the weights
    s, applied multiplicatively to the input.
    """

    def __init__(self, name: str, d: int, m: int, rng: np.random.Generator,
                 reduction: int | None = None):
        if m < 1:
            raise ContractError("SmbBlock: window must be >= 1")
        self.m = m
        self.d = d
        d_red = reduction if reduction is not None else max(1, d // 4)
        if not 1 <= d_red <= d:
            raise ContractError(f"SmbBlock: invalid reduction {d_red} for d={d}")
        self.fc_down = Parameter(f"{name}.fc_down", glorot_uniform(rng, d, d_red))
        self.b_down = Parameter(f"{name}.b_down", np.zeros(d_red))
        self.fc_up = Parameter(f"{name}.fc_up", glorot_uniform(rng, d_red, d))
        self.b_up = Parameter(f"{name}.b_up", np.zeros(d))

    def params(self) -> list[Parameter]:
        return [self.fc_down, self.b_down, self.fc_up, self.b_up]

    def forward_on(self, tape: Tape, h: int) -> tuple[int, int]:
        """Returns (calibrated h', weights s); h is (n, t, d)."""
        if tape.val(h).shape[-1] != self.d:
            raise DimensionError(
                f"smb: input {tape.val(h).shape} does not match block d={self.d}"
            )
        s_h = tape.window_mean(h, self.m)
        s_v = fc_on(tape, s_h, tape.param(self.fc_down), tape.param(self.b_down),
                    "relu")
        s = fc_on(tape, s_v, tape.param(self.fc_up), tape.param(self.b_up),
                  "sigmoid")
        return tape.mul(h, s), s


# ---------------------------------------------------------------------------
# Value-level, single-sample surfaces
# ---------------------------------------------------------------------------

def gru_step(cell: GruCell, x_t, h_prev) -> Tensor:
    """One GRU step on plain vectors x_t (d_in,), h_prev (d_g,)."""
    x = as_array(x_t).reshape(1, -1)
    h = as_array(h_prev).reshape(1, -1)
    if x.shape[1] != cell.d_in or h.shape[1] != cell.d_g:
        raise DimensionError(
            f"gru_step: got x {as_array(x_t).shape}, h {as_array(h_prev).shape} "
            f"for cell ({cell.d_in} -> {cell.d_g})"
        )
    tape = Tape()
    out = cell.step_on(tape, tape.leaf(x), tape.leaf(h))
    return Tensor(tape.val(out).reshape(-1))


def gru_layer(cell: GruCell, seq) -> Tensor:
    """Hidden-state sequence [h_1..h_T] for a (T, d_in) input, zero h_0."""
    x = as_array(seq)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ContractError(f"gru_layer: need a non-empty (T, d_in) input, got {x.shape}")
    tape = Tape()
    out = cell.run_on(tape, tape.leaf(x[None]))
    return Tensor(tape.val(out)[0])


def conv1d_block(block: ConvBlock, seq, training: bool = False) -> Tensor:
    x = as_array(seq)
    tape = Tape()
    out = block.forward_on(tape, tape.leaf(x[None]), training)
    return Tensor(tape.val(out)[0])


def smb_forward(block: SmbBlock, h) -> tuple[Tensor, Tensor]:
    x = as_array(h)
    tape = Tape()
    hp, s = block.forward_on(tape, tape.leaf(x[None]))
    return Tensor(tape.val(hp)[0]), Tensor(tape.val(s)[0])


def avg_pool1d(seq, pool: int) -> Tensor:
    """Non-overlapping window means along time; ragged tail averaged over
    its own length. pool > T collapses to a single row."""
    x = as_array(seq)
    tape = Tape()
    return Tensor(tape.val(tape.avg_pool(tape.leaf(x[None]), pool))[0])


def fc(w, b, x, activation: str = "none") -> Tensor:
    """Row-wise affine map plus optional activation on plain values."""
    xa = as_array(x)
    tape = Tape()
    squeeze = xa.ndim == 1
    out = fc_on(tape, tape.leaf(xa[None] if squeeze else xa),
                tape.leaf(as_array(w)), tape.leaf(as_array(b)), activation)
    res = tape.val(out)
    return Tensor(res[0] if squeeze else res)
