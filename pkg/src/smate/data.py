"""Dataset ingestion (UEA .ts format), z-normalization, supervision-ratio
masking, synthetic corpus generation, and the embedding CSV export.

Datasets are immutable after construction. True labels are kept private:
training code sees them only through ``visible_labels()`` (None where the
supervision mask hides a label); evaluation code must use the explicitly
named ``labels_for_eval()``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tensor import ConfigurationError, Tensor

DECIMALS = 17  # significant digits used when serializing values


class ParseError(ValueError):
    """Malformed .ts input; message carries the 1-based line number."""

    def __init__(self, line_no: int | None, message: str):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)


class UnsupportedFeatureError(ValueError):
    """Valid .ts feature that this implementation deliberately rejects
    (timestamps, unequal lengths, missing values, unlabeled data)."""


class MtsDataset:
    """N samples of shape (T, M) with labels and a supervision mask."""

    def __init__(self, name: str, values: np.ndarray, labels: Sequence[str],
                 label_set: Sequence[str], mask: np.ndarray | None = None):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.ndim != 3:
            raise ConfigurationError(
                f"MtsDataset: values must be (N, T, M), got {values.shape}"
            )
        self.name = name
        self._values = values
        self._labels = list(labels)
        self.label_set = list(label_set)
        if len(self._labels) != len(values):
            raise ConfigurationError("MtsDataset: one label per sample required")
        if len(self.label_set) < 2:
            raise ConfigurationError(
                f"MtsDataset: need at least 2 classes, got {self.label_set}"
            )
        unknown = set(self._labels) - set(self.label_set)
        if unknown:
            raise ConfigurationError(
                f"MtsDataset: labels {sorted(unknown)} outside label set"
            )
        if mask is None:
            mask = np.ones(len(values), dtype=bool)
        self.supervision_mask = np.asarray(mask, dtype=bool).copy()
        if len(self.supervision_mask) != len(values):
            raise ConfigurationError("MtsDataset: mask length must equal N")
        self._values.setflags(write=False)
        self.supervision_mask.setflags(write=False)

    # -- shape metadata -------------------------------------------------------

    @property
    def n(self) -> int:
        return self._values.shape[0]

    @property
    def t(self) -> int:
        return self._values.shape[1]

    @property
    def m(self) -> int:
        return self._values.shape[2]

    @property
    def n_classes(self) -> int:
        return len(self.label_set)

    @property
    def values(self) -> np.ndarray:
        """(N, T, M) block, read-only."""
        return self._values

    def sample(self, i: int) -> Tensor:
        return Tensor(self._values[i])

    @property
    def samples(self) -> list[Tensor]:
        return [self.sample(i) for i in range(self.n)]

    # -- label access ------------------------------------------------------------

    def visible_labels(self) -> list[str | None]:
        """Training-facing accessor: None where the mask hides the label."""
        return [y if vis else None
                for y, vis in zip(self._labels, self.supervision_mask)]

    def labels_for_eval(self) -> list[str]:
        """Full ground truth; evaluation and visualization only."""
        return list(self._labels)

    def with_mask(self, mask: np.ndarray) -> "MtsDataset":
        return MtsDataset(self.name, self._values, self._labels,
                          self.label_set, mask)

    def __repr__(self) -> str:
        return (f"MtsDataset({self.name!r}, N={self.n}, T={self.t}, "
                f"M={self.m}, K={self.n_classes})")


# ---------------------------------------------------------------------------
# .ts parsing
# ---------------------------------------------------------------------------

_BOOL = {"true": True, "false": False}


def _parse_bool(token: str, line_no: int, directive: str) -> bool:
    try:
        return _BOOL[token.lower()]
    except KeyError:
        raise ParseError(line_no, f"{directive} expects true/false, got {token!r}")


def parse_ts(source) -> MtsDataset:
    """Parse a .ts document from a path or from literal text."""
    if isinstance(source, Path):
        text = source.read_text()
        name_hint = source.stem
    elif isinstance(source, str) and "\n" not in source and os.path.exists(source):
        text = Path(source).read_text()
        name_hint = Path(source).stem
    else:
        text = str(source)
        name_hint = "unnamed"
    return parse_ts_text(text, name_hint)


def parse_ts_text(text: str, name_hint: str = "unnamed") -> MtsDataset:
    name = name_hint
    declared_dims: int | None = None
    series_length: int | None = None
    equal_length = True
    class_labels: list[str] | None = None
    in_data = False
    samples: list[np.ndarray] = []
    labels: list[str] = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        low = line.lower()
        if low.startswith("@") and not in_data:
            tokens = line.split()
            directive = tokens[0].lower()
            if directive == "@problemname":
                if len(tokens) < 2:
                    raise ParseError(line_no, "@problemName needs a value")
                name = tokens[1]
            elif directive == "@timestamps":
                if len(tokens) != 2:
                    raise ParseError(line_no, "@timeStamps needs one value")
                if _parse_bool(tokens[1], line_no, "@timeStamps"):
                    raise UnsupportedFeatureError(
                        f"line {line_no}: timestamped series are not supported"
                    )
            elif directive == "@univariate":
                if len(tokens) != 2:
                    raise ParseError(line_no, "@univariate needs one value")
                if _parse_bool(tokens[1], line_no, "@univariate"):
                    declared_dims = 1
            elif directive == "@dimensions":
                if len(tokens) != 2 or not tokens[1].isdigit():
                    raise ParseError(line_no, "@dimensions needs an integer")
                declared_dims = int(tokens[1])
            elif directive == "@equallength":
                if len(tokens) != 2:
                    raise ParseError(line_no, "@equalLength needs one value")
                equal_length = _parse_bool(tokens[1], line_no, "@equalLength")
            elif directive == "@serieslength":
                if len(tokens) != 2 or not tokens[1].isdigit():
                    raise ParseError(line_no, "@seriesLength needs an integer")
                series_length = int(tokens[1])
            elif directive == "@classlabel":
                if len(tokens) < 2:
                    raise ParseError(line_no, "@classLabel needs a value")
                if not _parse_bool(tokens[1], line_no, "@classLabel"):
                    raise UnsupportedFeatureError(
                        f"line {line_no}: unlabeled datasets are not supported"
                    )
                if len(tokens) < 3:
                    raise ParseError(
                        line_no, "@classLabel true requires the label list")
                class_labels = tokens[2:]
            elif directive == "@data":
                if len(tokens) != 1:
                    raise ParseError(line_no, "@data takes no value")
                in_data = True
            else:
                raise ParseError(line_no, f"unknown directive {tokens[0]!r}")
            continue
        if not in_data:
            raise ParseError(line_no, f"unexpected content before @data: {line!r}")

        fields = line.split(":")
        if len(fields) < 2:
            raise ParseError(
                line_no, "a data line needs dimensions and a class label")
        if class_labels is None:
            raise ParseError(line_no, "@classLabel must be declared before @data")
        label = fields[-1].strip()
        if label not in class_labels:
            raise ParseError(
                line_no,
                f"class label {label!r} not among declared labels {class_labels}")
        dims = []
        for d_idx, dim in enumerate(fields[:-1]):
            vals = []
            for tok in dim.split(","):
                tok = tok.strip()
                if tok in ("?", ""):
                    raise UnsupportedFeatureError(
                        f"line {line_no}: missing values are not supported")
                try:
                    vals.append(float(tok))
                except ValueError:
                    raise ParseError(
                        line_no, f"bad numeric literal {tok!r} in dimension {d_idx}")
            dims.append(vals)
        if declared_dims is not None and len(dims) != declared_dims:
            raise ParseError(
                line_no,
                f"sample has {len(dims)} dimensions, header declares {declared_dims}")
        lengths = {len(v) for v in dims}
        if len(lengths) != 1:
            raise UnsupportedFeatureError(
                f"line {line_no}: dimensions of unequal length {sorted(lengths)}")
        sample = np.array(dims).T  # (T, M)
        if samples and sample.shape != samples[0].shape:
            if sample.shape[1] != samples[0].shape[1]:
                raise ParseError(
                    line_no,
                    f"sample has {sample.shape[1]} dimensions, previous samples "
                    f"have {samples[0].shape[1]}")
            raise UnsupportedFeatureError(
                f"line {line_no}: unequal series lengths ({sample.shape[0]} vs "
                f"{samples[0].shape[0]}) are not supported")
        if series_length is not None and sample.shape[0] != series_length:
            raise UnsupportedFeatureError(
                f"line {line_no}: series length {sample.shape[0]} contradicts "
                f"@seriesLength {series_length}")
        samples.append(sample)
        labels.append(label)

    if not in_data:
        raise ParseError(None, "no @data section found")
    if not samples:
        raise ParseError(None, "no data lines found")
    if not equal_length:
        # files declaring unequal length that happen to be equal are fine;
        # the check above already rejected actual inequality
        pass
    return MtsDataset(name, np.stack(samples), labels,
                      class_labels if class_labels is not None else [])


def serialize_ts(ds: MtsDataset) -> str:
    """Render a dataset back to .ts text; floats use repr so that a
    parse -> serialize -> parse round trip is bit-exact."""
    lines = [
        f"@problemName {ds.name}",
        "@timeStamps false",
        f"@dimensions {ds.m}",
        "@equalLength true",
        f"@seriesLength {ds.t}",
        "@classLabel true " + " ".join(ds.label_set),
        "@data",
    ]
    labels = ds.labels_for_eval()
    for i in range(ds.n):
        dims = [",".join(repr(float(v)) for v in ds.values[i, :, j])
                for j in range(ds.m)]
        lines.append(":".join(dims) + ":" + labels[i])
    return "\n".join(lines) + "\n"


def load_dataset_pair(data_dir, name: str) -> tuple[MtsDataset, MtsDataset]:
    """Load <dir>/<name>/<name>_TRAIN.ts and _TEST.ts."""
    base = Path(data_dir) / name
    train = parse_ts(base / f"{name}_TRAIN.ts")
    test = parse_ts(base / f"{name}_TEST.ts")
    return train, test


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

SIGMA_FLOOR = 1e-8


def normalization_stats(ds: MtsDataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-variable mean and (floored) standard deviation over all samples
    and timesteps."""
    mean = ds.values.mean(axis=(0, 1))
    std = np.maximum(ds.values.std(axis=(0, 1)), SIGMA_FLOOR)
    return mean, std


def apply_normalization(ds: MtsDataset,
                        stats: tuple[np.ndarray, np.ndarray]) -> MtsDataset:
    mean, std = stats
    return MtsDataset(ds.name, (ds.values - mean) / std, ds.labels_for_eval(),
                      ds.label_set, ds.supervision_mask)


def z_normalize(ds: MtsDataset, mode: str = "per_variable_global") -> MtsDataset:
    if mode == "none":
        return ds
    if mode != "per_variable_global":
        raise ConfigurationError(f"z_normalize: unknown mode {mode!r}")
    return apply_normalization(ds, normalization_stats(ds))


# ---------------------------------------------------------------------------
# supervision masking
# ---------------------------------------------------------------------------

@dataclass
class SplitSpec:
    """Supervision ratio r with seeded stratified selection."""

    ratio: float
    seed: int = 0
    stratified: bool = True
    floor: int = 1

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigurationError(
                f"SplitSpec: ratio must be in [0, 1], got {self.ratio}")
        if self.floor < 0:
            raise ConfigurationError("SplitSpec: floor must be >= 0")


def apply_supervision(ds: MtsDataset, spec: SplitSpec) -> MtsDataset:
    """Hide labels down to the requested ratio.

    Stratified mode keeps round(r * N_class) labels per class (half-up,
    never below the floor); hidden labels stay available to
    ``labels_for_eval`` only.
    """
    if spec.ratio == 1.0:
        return ds.with_mask(np.ones(ds.n, dtype=bool))
    rng = np.random.default_rng(spec.seed)
    mask = np.zeros(ds.n, dtype=bool)
    labels = ds.labels_for_eval()
    if spec.stratified:
        if spec.ratio * ds.n < spec.floor * ds.n_classes:
            raise ConfigurationError(
                f"apply_supervision: ratio {spec.ratio} cannot satisfy the "
                f"floor of {spec.floor} labeled samples for each of "
                f"{ds.n_classes} classes (N={ds.n})")
        for cls in ds.label_set:
            idx = np.array([i for i, y in enumerate(labels) if y == cls])
            if len(idx) == 0:
                continue
            n_vis = int(math.floor(spec.ratio * len(idx) + 0.5))
            n_vis = min(len(idx), max(spec.floor, n_vis))
            chosen = rng.permutation(idx)[:n_vis]
            mask[chosen] = True
    else:
        n_vis = int(math.floor(spec.ratio * ds.n + 0.5))
        mask[rng.permutation(ds.n)[:n_vis]] = True
    return ds.with_mask(mask)


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

def make_synthetic(k: int, n: int, t: int, m: int, seed: int = 0,
                   noise: float = 0.05, name: str = "synthetic") -> MtsDataset:
    """Coupled-sinusoid classes.

    Class c uses frequency f_c = c + 2 (temporal structure) and a
    class-specific cross-variable phase pattern (spatial structure):
    value[i, j] = sin(2*pi*f_c*i/t + phi_{c,j}) + noise * N(0, 1).
    """
    if k < 2 or m < 2:
        raise ConfigurationError("make_synthetic: need K >= 2 and M >= 2")
    rng = np.random.default_rng(seed)
    label_set = [f"c{c}" for c in range(k)]
    ticks = np.arange(t)[:, None]
    var_idx = np.arange(m)[None, :]
    values = np.empty((n, t, m))
    labels = []
    for i in range(n):
        c = i % k
        phase = 2.0 * np.pi * (c + 1) * var_idx / (k * m)
        clean = np.sin(2.0 * np.pi * (c + 2) * ticks / t + phase)
        values[i] = clean + noise * rng.standard_normal((t, m))
        labels.append(label_set[c])
    return MtsDataset(name, values, labels, label_set)


# ---------------------------------------------------------------------------
# embedding CSV export
# ---------------------------------------------------------------------------

def write_embedding_csv(path, ds: MtsDataset, embeddings: np.ndarray,
                        centroids=None) -> None:
    """One row per sample: sample_id, label, is_labeled, then the flattened
    (row-major) embedding. Centroid rows are appended with sample_id
    ``centroid_<class>``."""
    embeddings = np.asarray(embeddings)
    n, width = embeddings.shape[0], int(np.prod(embeddings.shape[1:]))
    header = ["sample_id", "label", "is_labeled"] \
        + [f"dim_{j}" for j in range(width)]
    rows = [",".join(header)]
    labels = ds.labels_for_eval()
    for i in range(n):
        flat = embeddings[i].reshape(-1)
        rows.append(",".join(
            [str(i), labels[i], str(bool(ds.supervision_mask[i])).lower()]
            + [repr(float(v)) for v in flat]))
    if centroids is not None:
        for cls, cent in zip(centroids.class_ids, centroids.centroids):
            flat = np.asarray(cent).reshape(-1)
            rows.append(",".join(
                [f"centroid_{cls}", str(cls), "true"] + [repr(float(v)) for v in flat]))
    Path(path).write_text("\n".join(rows) + "\n")


def read_embedding_csv(path):
    """Inverse of ``write_embedding_csv``; returns (ids, labels, is_labeled,
    matrix) with centroid rows included."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    width = len(header) - 3
    ids, labels, flags, rows = [], [], [], []
    for line in lines[1:]:
        parts = line.split(",")
        ids.append(parts[0])
        labels.append(parts[1])
        flags.append(parts[2] == "true")
        rows.append([float(v) for v in parts[3:]])
        if len(rows[-1]) != width:
            raise ParseError(None, "embedding CSV row width mismatch")
    return ids, labels, np.array(flags), np.array(rows)
