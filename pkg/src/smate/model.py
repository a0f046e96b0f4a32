"""The asymmetric auto-encoder: two-channel encoder (recurrent + spatial
convolutional channels concatenated into a pooled embedding), a light
sequential decoder, the reconstruction loss, and the joint training loop.

Checkpoints are a single self-describing JSON document: config plus every
named parameter as nested arrays of decimal literals (repr round-trips
float64 exactly), plus whatever the downstream classifier needs (label
set, normalization stats, final centroids).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import MtsDataset
from .layers import ConvBlock, GruCell, Linear, SmbBlock
from .regularizer import CentroidSet, regularize_on_tape, run_three_steps
from .tensor import (
    Adam,
    ConfigurationError,
    DimensionError,
    Parameter,
    Tape,
    Tensor,
    TrainingAbort,
    as_array,
    check_finite,
)

CHECKPOINT_FORMAT = "smate-checkpoint-v1"


@dataclass
class SmateConfig:
    """Model + training hyperparameters.

    ``pool`` defaults to max(1, t // 8) so the embedding length lands
    near 8 regardless of the series length.
    """

    t: int
    m: int
    d_g: int = 64
    d_c: int = 64
    conv_window: int = 3
    smb_window: int = 3
    pool: int | None = None
    embed_dim: int = 64
    head_hidden: int | None = None
    lam: float = 1.0
    lr: float = 1e-3
    epochs: int = 300
    seed: int = 0
    use_smb: bool = True
    batch_policy: str = "full"

    def __post_init__(self):
        if self.pool is None:
            self.pool = max(1, self.t // 8)
        if self.head_hidden is None:
            self.head_hidden = max(self.embed_dim, (self.d_g + self.d_c) // 2)
        if self.t < 1 or self.m < 1:
            raise ConfigurationError(f"invalid input dims ({self.t}, {self.m})")
        if self.embed_dim < 1 or self.d_g < 1 or self.d_c < 1:
            raise ConfigurationError("model widths must be positive")
        if self.pool < 1:
            raise ConfigurationError(f"pool must be >= 1, got {self.pool}")
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.batch_policy != "full":
            raise ConfigurationError(
                f"unsupported batch policy {self.batch_policy!r}; this build "
                "trains full-batch")

    @property
    def emb_len(self) -> int:
        """Embedding sequence length L = ceil(T / P)."""
        return -(-self.t // self.pool)


class SmateModel:
    """Parameter container and tape-level forward passes."""

    def __init__(self, config: SmateConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.config = config
        c = config
        self.gru_cells = [
            GruCell("encoder.gru0", c.m, c.d_g, rng),
            GruCell("encoder.gru1", c.d_g, c.d_g, rng),
            GruCell("encoder.gru2", c.d_g, c.d_g, rng),
        ]
        self.smb_blocks: list[SmbBlock] = []
        self.conv_blocks: list[ConvBlock] = []
        for i, d_in in enumerate((c.m, c.d_c, c.d_c)):
            if c.use_smb:
                self.smb_blocks.append(
                    SmbBlock(f"encoder.smb{i}", d_in, c.smb_window, rng))
            self.conv_blocks.append(
                ConvBlock(f"encoder.conv{i}", d_in, c.d_c, c.conv_window, rng))
        self.head1 = Linear("encoder.head1", c.d_g + c.d_c, c.head_hidden, rng)
        self.head2 = Linear("encoder.head2", c.head_hidden, c.embed_dim, rng)
        self.decoder_cell = GruCell("decoder.gru", c.embed_dim, c.d_g, rng)
        self.decoder_out = Linear("decoder.out", c.d_g, c.m, rng)

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for cell in self.gru_cells:
            params += cell.params()
        for blk in self.smb_blocks:
            params += blk.params()
        for blk in self.conv_blocks:
            params += blk.params()
        params += self.head1.params() + self.head2.params()
        params += self.decoder_cell.params() + self.decoder_out.params()
        return params

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    # -- forward --------------------------------------------------------------

    def encode_on(self, tape: Tape, x: int, training: bool) -> int:
        shape = tape.val(x).shape
        if shape[-2:] != (self.config.t, self.config.m):
            raise DimensionError(
                f"encode: input {shape} does not match configured "
                f"({self.config.t}, {self.config.m})")
        h = x
        for cell in self.gru_cells:
            h = cell.run_on(tape, h)
        h_temporal = tape.avg_pool(h, self.config.pool)
        g = x
        for i, conv in enumerate(self.conv_blocks):
            if self.config.use_smb:
                g, _ = self.smb_blocks[i].forward_on(tape, g)
            g = conv.forward_on(tape, g, training)
        h_spatial = tape.avg_pool(g, self.config.pool)
        cat = tape.concat([h_temporal, h_spatial], axis=2)
        return self.head2.apply_on(tape, self.head1.apply_on(tape, cat, "relu"),
                                   "none")

    def decode_on(self, tape: Tape, h: int, training: bool) -> int:
        up = tape.repeat_rows(h, self.config.pool, self.config.t)
        dh = self.decoder_cell.run_on(tape, up)
        return self.decoder_out.apply_on(tape, dh, "none")


# -- value-level surfaces -------------------------------------------------------

def encode(model: SmateModel, x) -> Tensor:
    """Embed one (T, M) sample with a frozen model (inference-mode BN)."""
    arr = as_array(x)
    tape = Tape()
    out = model.encode_on(tape, tape.leaf(arr[None]), training=False)
    emb = tape.val(out)[0]
    check_finite("embedding", emb)
    return Tensor(emb)


def decode(model: SmateModel, h) -> Tensor:
    """Reconstruct a (T, M) sample from an (L, D) embedding."""
    arr = as_array(h)
    expected = (model.config.emb_len, model.config.embed_dim)
    if arr.shape != expected:
        raise DimensionError(f"decode: embedding {arr.shape}, expected {expected}")
    tape = Tape()
    out = model.decode_on(tape, tape.leaf(arr[None]), training=False)
    return Tensor(tape.val(out)[0])


def encode_dataset(model: SmateModel, ds: MtsDataset) -> np.ndarray:
    """(N, L, D) embeddings of every sample, inference mode, one batch."""
    tape = Tape()
    out = model.encode_on(tape, tape.leaf(ds.values), training=False)
    emb = tape.val(out)
    check_finite("embeddings", emb)
    return emb


def reconstruction_loss(x, x_rec) -> float:
    """Mean over time of per-step Euclidean reconstruction error."""
    tape = Tape()
    return float(tape.val(tape.recon_loss(tape.leaf(as_array(x)),
                                          tape.leaf(as_array(x_rec)))))


# -- training ---------------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    recon: float
    reg: float
    total: float


@dataclass
class TrainLog:
    entries: list[EpochStats] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,L_R,L_Reg,total"]
        for e in self.entries:
            lines.append(f"{e.epoch},{float(e.recon)!r},{float(e.reg)!r},"
                         f"{float(e.total)!r}")
        return "\n".join(lines) + "\n"

    @property
    def final(self) -> EpochStats:
        return self.entries[-1]


def _supervision_indices(ds: MtsDataset):
    visible = ds.visible_labels()
    labeled_idx = [i for i, y in enumerate(visible) if y is not None]
    unlabeled_idx = [i for i, y in enumerate(visible) if y is None]
    labeled_classes = [ds.label_set.index(visible[i]) for i in labeled_idx]
    for k, cls in enumerate(ds.label_set):
        if k not in labeled_classes:
            raise ConfigurationError(
                f"train: class {cls!r} has no labeled samples; every class "
                "needs at least one visible label")
    return labeled_idx, labeled_classes, unlabeled_idx


def train(model: SmateModel, ds: MtsDataset,
          progress: Callable[[EpochStats], None] | None = None) -> TrainLog:
    """Joint optimization of reconstruction + regularization, full batch.

    Each epoch: encode everything (training-mode batch norm), decode,
    rebuild the three-step centroids on the tape from the current
    embeddings, and take one Adam step on L_R + lambda * L_Reg. With
    lambda = 0 the regularization term is still evaluated and logged but
    excluded from the objective.
    """
    cfg = model.config
    if ds.values.shape[1:] != (cfg.t, cfg.m):
        raise DimensionError(
            f"train: dataset samples {ds.values.shape[1:]} do not match "
            f"configured ({cfg.t}, {cfg.m})")
    labeled_idx, labeled_classes, unlabeled_idx = _supervision_indices(ds)
    opt = Adam(model.parameters(), lr=cfg.lr)
    log = TrainLog()
    for epoch in range(1, cfg.epochs + 1):
        tape = Tape()
        x = tape.leaf(ds.values)
        h = model.encode_on(tape, x, training=True)
        x_rec = model.decode_on(tape, h, training=True)
        recon = tape.recon_loss(x, x_rec)
        reg = regularize_on_tape(tape, h, labeled_idx, labeled_classes,
                                 unlabeled_idx, ds.n_classes)
        total = recon if cfg.lam == 0.0 else \
            tape.add(recon, tape.scale(reg.loss, cfg.lam))
        recon_v = float(tape.val(recon))
        reg_v = float(tape.val(reg.loss))
        total_v = float(tape.val(total))
        if not (math.isfinite(recon_v) and math.isfinite(reg_v)):
            raise TrainingAbort(
                f"epoch {epoch}: non-finite loss (L_R={recon_v}, L_Reg={reg_v})")
        opt.zero_grad()
        tape.backward(total)
        opt.step()
        stats = EpochStats(epoch, recon_v, reg_v, total_v)
        log.entries.append(stats)
        if progress is not None:
            progress(stats)
    return log


def compute_centroids(model: SmateModel, ds: MtsDataset) -> CentroidSet:
    """Final three-step centroids from frozen-model embeddings."""
    return run_three_steps(encode_dataset(model, ds), ds.visible_labels(),
                           ds.label_set)


# -- checkpoints --------------------------------------------------------------------

def save_checkpoint(model: SmateModel, path, label_set: Sequence[str]
                    | None = None, norm_stats=None,
                    centroids: CentroidSet | None = None,
                    supervision_mask=None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "parameters": {p.name: p.value.array.tolist()
                       for p in model.parameters()},
        "bn_buffers": {},
        "label_set": list(label_set) if label_set is not None else None,
        "norm_stats": None,
        "centroids": None,
        "supervision_mask": None if supervision_mask is None
        else [bool(v) for v in supervision_mask],
    }
    for blk in model.conv_blocks:
        doc["bn_buffers"][f"{blk.name}.running_mean"] = blk.bn_running_mean.tolist()
        doc["bn_buffers"][f"{blk.name}.running_var"] = blk.bn_running_var.tolist()
    if norm_stats is not None:
        doc["norm_stats"] = {"mean": np.asarray(norm_stats[0]).tolist(),
                             "std": np.asarray(norm_stats[1]).tolist()}
    if centroids is not None:
        doc["centroids"] = {
            "class_ids": list(centroids.class_ids),
            "step": centroids.step,
            "labeled_counts": list(centroids.labeled_counts),
            "propagated_counts": list(centroids.propagated_counts),
            "values": [np.asarray(c).tolist() for c in centroids.centroids],
        }
    Path(path).write_text(json.dumps(doc, indent=1))


@dataclass
class Checkpoint:
    model: SmateModel
    label_set: list[str] | None
    norm_stats: tuple[np.ndarray, np.ndarray] | None
    centroids: CentroidSet | None
    supervision_mask: np.ndarray | None


def load_checkpoint(path) -> Checkpoint:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(
            f"{path}: not a recognized checkpoint (format "
            f"{doc.get('format')!r})")
    model = SmateModel(SmateConfig(**doc["config"]))
    params = model.named_parameters()
    for name, values in doc["parameters"].items():
        if name not in params:
            raise ConfigurationError(f"{path}: unknown parameter {name!r}")
        arr = np.asarray(values)
        if arr.shape != params[name].value.shape:
            raise ConfigurationError(
                f"{path}: parameter {name!r} has shape {arr.shape}, expected "
                f"{params[name].value.shape}")
        params[name].value.array[...] = arr
    for blk in model.conv_blocks:
        blk.bn_running_mean = np.asarray(doc["bn_buffers"][f"{blk.name}.running_mean"])
        blk.bn_running_var = np.asarray(doc["bn_buffers"][f"{blk.name}.running_var"])
    norm_stats = None
    if doc.get("norm_stats"):
        norm_stats = (np.asarray(doc["norm_stats"]["mean"]),
                      np.asarray(doc["norm_stats"]["std"]))
    centroids = None
    if doc.get("centroids"):
        c = doc["centroids"]
        centroids = CentroidSet([Tensor(v) for v in c["values"]],
                                c["class_ids"], c["step"],
                                c["labeled_counts"], c["propagated_counts"])
    mask = doc.get("supervision_mask")
    return Checkpoint(model, doc.get("label_set"), norm_stats, centroids,
                      None if mask is None else np.asarray(mask, dtype=bool))
