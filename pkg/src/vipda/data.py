"""Synthetic partial-overlap domain-shift scenarios, dataset file IO and
deterministic batching.

A scenario places one Gaussian blob per source class on a circle; the target
domain re-draws the first ``n_target_classes`` blobs (the shared classes) and
pushes them through a fixed rotation + translation. The remaining source
classes are outliers that never appear in the target. Target ground-truth
labels are kept in an evaluation-only side structure; the training view never
contains them.

Dataset file format (plain text, one sample per line):

    vipda-dataset v1 d=<d> source_classes=<K> target_classes=<Kt> n_source=<ns> n_target=<nt>
    <x1>,...,<xd>,source,<label>
    <x1>,...,<xd>,target,<label or ?>

Floats are written with ``repr`` so a round trip is bit-exact. Target labels
are the hidden evaluation labels; files written with ``?`` load with
evaluation disabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

DATASET_FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """Raised on malformed dataset files; message carries the line number."""


@dataclass(frozen=True)
class ScenarioSpec:
    """Generator settings for one synthetic scenario."""

    input_dim: int = 2
    n_source_classes: int = 5
    n_target_classes: int = 3
    source_per_class: int = 200
    target_per_class: int = 100
    rotation: float = math.radians(30.0)  # radians, applied in the first two dims
    translation: tuple = (1.0, 0.5)
    noise_scale: float = 1.0
    circle_radius: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 2:
            raise ValueError("input_dim must be >= 2 (rotation plane)")
        if not (0 < self.n_target_classes < self.n_source_classes):
            raise ValueError("need 0 < target classes < source classes")
        if self.source_per_class < 1 or self.target_per_class < 1:
            raise ValueError("per-class sample counts must be >= 1")
        if len(self.translation) != self.input_dim:
            raise ValueError("translation length must equal input_dim")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")


@dataclass(frozen=True)
class TrainView:
    """What the training loop is allowed to see: no target labels."""

    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    n_source_classes: int
    n_target_classes: int

    @property
    def input_dim(self) -> int:
        return self.source_x.shape[1]


@dataclass(frozen=True)
class ScenarioDataset:
    """A full scenario; target ground truth lives only here, for evaluation."""

    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    n_source_classes: int
    n_target_classes: int
    hidden_target_labels: np.ndarray | None = None

    @property
    def input_dim(self) -> int:
        return self.source_x.shape[1]

    @property
    def has_eval_labels(self) -> bool:
        return self.hidden_target_labels is not None

    def train_view(self) -> TrainView:
        return TrainView(
            source_x=self.source_x,
            source_y=self.source_y,
            target_x=self.target_x,
            n_source_classes=self.n_source_classes,
            n_target_classes=self.n_target_classes,
        )


def as_train_view(data) -> TrainView:
    if isinstance(data, TrainView):
        return data
    return data.train_view()


def _class_means(spec: ScenarioSpec) -> np.ndarray:
    means = np.zeros((spec.n_source_classes, spec.input_dim))
    angles = 2.0 * np.pi * np.arange(spec.n_source_classes) / spec.n_source_classes
    means[:, 0] = spec.circle_radius * np.cos(angles)
    means[:, 1] = spec.circle_radius * np.sin(angles)
    return means


def _rotate(x: np.ndarray, angle: float) -> np.ndarray:
    out = x.copy()
    c, s = math.cos(angle), math.sin(angle)
    out[:, 0] = c * x[:, 0] - s * x[:, 1]
    out[:, 1] = s * x[:, 0] + c * x[:, 1]
    return out


def generate_scenario(spec: ScenarioSpec) -> ScenarioDataset:
    """Draw a scenario; fully determined by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    means = _class_means(spec)
    d = spec.input_dim

    src_blocks, src_labels = [], []
    for c in range(spec.n_source_classes):
        noise = rng.standard_normal((spec.source_per_class, d))
        src_blocks.append(means[c] + spec.noise_scale * noise)
        src_labels.append(np.full(spec.source_per_class, c, dtype=np.int64))

    translation = np.asarray(spec.translation, dtype=np.float64)
    tgt_blocks, tgt_labels = [], []
    for c in range(spec.n_target_classes):
        noise = rng.standard_normal((spec.target_per_class, d))
        blob = means[c] + spec.noise_scale * noise
        tgt_blocks.append(_rotate(blob, spec.rotation) + translation)
        tgt_labels.append(np.full(spec.target_per_class, c, dtype=np.int64))

    return ScenarioDataset(
        source_x=np.concatenate(src_blocks),
        source_y=np.concatenate(src_labels),
        target_x=np.concatenate(tgt_blocks),
        n_source_classes=spec.n_source_classes,
        n_target_classes=spec.n_target_classes,
        hidden_target_labels=np.concatenate(tgt_labels),
    )


# ---------------------------------------------------------------------------
# dataset file IO
# ---------------------------------------------------------------------------


def save_dataset(ds: ScenarioDataset, path) -> None:
    d = ds.input_dim
    lines = [
        f"vipda-dataset v{DATASET_FORMAT_VERSION} d={d} "
        f"source_classes={ds.n_source_classes} target_classes={ds.n_target_classes} "
        f"n_source={len(ds.source_x)} n_target={len(ds.target_x)}"
    ]
    for x, y in zip(ds.source_x, ds.source_y):
        lines.append(",".join(repr(float(v)) for v in x) + f",source,{int(y)}")
    for j, x in enumerate(ds.target_x):
        label = "?" if ds.hidden_target_labels is None else str(
            int(ds.hidden_target_labels[j])
        )
        lines.append(",".join(repr(float(v)) for v in x) + f",target,{label}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_header(line: str) -> dict:
    parts = line.split()
    if len(parts) != 7 or parts[0] != "vipda-dataset":
        raise DatasetFormatError("line 1: not a vipda dataset header")
    if parts[1] != f"v{DATASET_FORMAT_VERSION}":
        raise DatasetFormatError(f"line 1: unsupported format version {parts[1]}")
    fields = {}
    for token in parts[2:]:
        key, _, value = token.partition("=")
        try:
            fields[key] = int(value)
        except ValueError:
            raise DatasetFormatError(f"line 1: bad header field {token!r}") from None
    expected = {"d", "source_classes", "target_classes", "n_source", "n_target"}
    if set(fields) != expected:
        raise DatasetFormatError("line 1: header fields incomplete")
    return fields


def load_dataset(path) -> ScenarioDataset:
    """Parse a dataset file; any malformation aborts without a partial result."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty file")
    head = _parse_header(lines[0])
    d = head["d"]
    n_total = head["n_source"] + head["n_target"]
    body = lines[1:]
    if len(body) != n_total:
        raise DatasetFormatError(
            f"line {len(lines)}: expected {n_total} sample lines, found {len(body)}"
        )

    src_x, src_y, tgt_x, tgt_labels = [], [], [], []
    for offset, line in enumerate(body):
        lineno = offset + 2
        parts = line.split(",")
        if len(parts) != d + 2:
            raise DatasetFormatError(
                f"line {lineno}: expected {d + 2} comma-separated fields"
            )
        try:
            x = [float(v) for v in parts[:d]]
        except ValueError:
            raise DatasetFormatError(f"line {lineno}: bad feature value") from None
        domain, label = parts[d], parts[d + 1]
        if domain == "source":
            if offset >= head["n_source"]:
                raise DatasetFormatError(f"line {lineno}: source row in target block")
            try:
                y = int(label)
            except ValueError:
                raise DatasetFormatError(f"line {lineno}: bad source label") from None
            if not 0 <= y < head["source_classes"]:
                raise DatasetFormatError(f"line {lineno}: source label out of range")
            src_x.append(x)
            src_y.append(y)
        elif domain == "target":
            if offset < head["n_source"]:
                raise DatasetFormatError(f"line {lineno}: target row in source block")
            tgt_x.append(x)
            tgt_labels.append(label)
        else:
            raise DatasetFormatError(f"line {lineno}: unknown domain tag {domain!r}")

    hidden: np.ndarray | None
    if all(label == "?" for label in tgt_labels):
        hidden = None
    elif any(label == "?" for label in tgt_labels):
        raise DatasetFormatError("target labels must be all present or all '?'")
    else:
        try:
            values = [int(v) for v in tgt_labels]
        except ValueError:
            raise DatasetFormatError("bad target label value") from None
        if any(not 0 <= v < head["target_classes"] for v in values):
            raise DatasetFormatError("target label out of range")
        hidden = np.asarray(values, dtype=np.int64)

    source_y = np.asarray(src_y, dtype=np.int64)
    present = set(source_y.tolist())
    if present != set(range(head["source_classes"])):
        raise DatasetFormatError("some source classes have no samples")
    return ScenarioDataset(
        source_x=np.asarray(src_x, dtype=np.float64),
        source_y=source_y,
        target_x=np.asarray(tgt_x, dtype=np.float64),
        n_source_classes=head["source_classes"],
        n_target_classes=head["target_classes"],
        hidden_target_labels=hidden,
    )


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def epoch_batches(n_items: int, batch_size: int, rng: np.random.Generator):
    """One epoch: a seeded permutation split into batches, short tail kept."""
    if n_items < 1:
        raise ValueError("cannot batch an empty dataset")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = rng.permutation(n_items)
    return [perm[i : i + batch_size] for i in range(0, n_items, batch_size)]


def batch_iterator(data, batch_size: int, seed: int, domain: str):
    """Endless stream of index batches for one domain.

    Each pass over the data is a fresh seeded permutation; the stream recycles
    so that training can pair one source batch with one target batch at every
    step regardless of the two dataset sizes.
    """
    view = as_train_view(data)
    if domain == "source":
        n_items = len(view.source_x)
    elif domain == "target":
        n_items = len(view.target_x)
    else:
        raise ValueError(f"unknown domain {domain!r}")
    rng = np.random.default_rng(seed)

    def stream():
        while True:
            yield from epoch_batches(n_items, batch_size, rng)

    return stream()


class TargetCycler:
    """Stateful recycling batch source for the target domain.

    Equivalent to :func:`batch_iterator` but with an explicit, serializable
    position so checkpoint resume reproduces the exact batch sequence.
    """

    def __init__(self, n_items: int, batch_size: int, rng: np.random.Generator):
        if n_items < 1:
            raise ValueError("cannot batch an empty dataset")
        self.n_items = n_items
        self.batch_size = batch_size
        self.rng = rng
        self._pending = []

    def next_batch(self) -> np.ndarray:
        if not self._pending:
            self._pending = epoch_batches(self.n_items, self.batch_size, self.rng)
        return self._pending.pop(0)

    def get_state(self) -> dict:
        return {
            "rng_state": self.rng.bit_generator.state,
            "pending": [b.tolist() for b in self._pending],
        }

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state["rng_state"]
        self._pending = [np.asarray(b, dtype=np.int64) for b in state["pending"]]


# ---------------------------------------------------------------------------
# scenario config files (flat key = value text)
# ---------------------------------------------------------------------------

SCENARIO_CONFIG_KEYS = (
    "input_dim",
    "source_classes",
    "target_classes",
    "source_per_class",
    "target_per_class",
    "rotation_degrees",
    "translation",
    "noise_scale",
    "circle_radius",
    "seed",
)


def read_kv_file(path) -> dict:
    """Parse a flat ``key = value`` file; '#' starts a comment."""
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
            entries[key.strip()] = value.strip()
    return entries


def scenario_from_config(path) -> ScenarioSpec:
    """Build a ScenarioSpec from a flat config file (all keys optional)."""
    entries = read_kv_file(path)
    unknown = set(entries) - set(SCENARIO_CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown scenario config keys: {sorted(unknown)}")
    spec = ScenarioSpec()
    kwargs = {}
    for key, value in entries.items():
        if key == "rotation_degrees":
            kwargs["rotation"] = math.radians(float(value))
        elif key == "translation":
            kwargs["translation"] = tuple(float(v) for v in value.split(","))
        elif key in ("noise_scale", "circle_radius"):
            kwargs[key] = float(value)
        elif key == "source_classes":
            kwargs["n_source_classes"] = int(value)
        elif key == "target_classes":
            kwargs["n_target_classes"] = int(value)
        else:
            kwargs[key] = int(value)
    return replace(spec, **kwargs)
