"""Seeded synthetic long-tail classification data.

Classes are indexed by frequency rank (class 0 is the most frequent). Each
class is an isotropic Gaussian blob around a mean on a sphere of radius
``separation``; background samples come from a broad zero-mean Gaussian that
covers all blobs.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .loss_core import BACKGROUND

RARE, COMMON, FREQUENT = "rare", "common", "frequent"
GROUP_NAMES = (RARE, COMMON, FREQUENT)

# background samples kept per classifier during fine-tuning, by group
RETENTION = {RARE: 0.01, COMMON: 0.10, FREQUENT: 1.0}

FORMAT_TAG = "acsl-lab-dataset v1"


class DatasetConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FrequencyGroups:
    rare_max: int = 10
    common_max: int = 100

    def __post_init__(self):
        if not 0 < self.rare_max < self.common_max:
            raise DatasetConfigError("need 0 < rare_max < common_max")


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 30
    feature_dim: int = 16
    zipf_exponent: float = 1.2
    max_count: int = 1000
    min_count: int = 5
    background_fraction: float = 0.5
    cluster_spread: float = 1.0
    separation: float = 3.0
    test_per_class: int = 20
    test_background: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.feature_dim < 1:
            raise DatasetConfigError("num_classes and feature_dim must be positive")
        if self.zipf_exponent < 0:
            raise DatasetConfigError("zipf_exponent must be non-negative")
        if not self.max_count >= self.min_count >= 1:
            raise DatasetConfigError("need max_count >= min_count >= 1")
        if not 0.0 <= self.background_fraction < 1.0:
            raise DatasetConfigError("background_fraction must lie in [0, 1)")
        if self.cluster_spread <= 0 or self.separation < 0:
            raise DatasetConfigError("cluster_spread must be positive and separation non-negative")
        if self.test_per_class < 1:
            raise DatasetConfigError("test_per_class must be at least 1")
        if self.test_background < 0:
            raise DatasetConfigError("test_background must be non-negative")


@dataclass
class LongTailDataset:
    spec: DatasetSpec
    groups: FrequencyGroups
    features: np.ndarray  # (N, d) training features
    labels: np.ndarray  # (N,) class index or BACKGROUND
    test_features: np.ndarray
    test_labels: np.ndarray
    class_counts: np.ndarray  # training foreground count per class
    group_of: tuple  # group name per class

    @property
    def num_classes(self):
        return self.spec.num_classes

    def group_index(self):
        """Map group name to the list of its classes."""
        return {g: [c for c, name in enumerate(self.group_of) if name == g] for g in GROUP_NAMES}


def generate_counts(spec: DatasetSpec):
    ranks = np.arange(1, spec.num_classes + 1, dtype=np.float64)
    raw = np.array([round(spec.max_count / r ** spec.zipf_exponent) for r in ranks], dtype=np.int64)
    return np.maximum(spec.min_count, raw)


def assign_groups(counts, groups: FrequencyGroups):
    counts = list(counts)
    if not counts:
        raise DatasetConfigError("counts must be non-empty")
    out = []
    for n in counts:
        if n <= groups.rare_max:
            out.append(RARE)
        elif n <= groups.common_max:
            out.append(COMMON)
        else:
            out.append(FREQUENT)
    return tuple(out)


def background_retention(group):
    try:
        return RETENTION[group]
    except KeyError:
        raise DatasetConfigError(f"unknown group {group!r}") from None


def background_count(spec: DatasetSpec, num_foreground):
    f = spec.background_fraction
    return int(round(num_foreground * f / (1.0 - f)))


def class_means(spec: DatasetSpec):
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    directions = rng.standard_normal((spec.num_classes, spec.feature_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return spec.separation * directions


def _class_samples(spec, means, c, n):
    # independent substream per class so classes can be drawn in any order
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1, c]))
    return means[c] + spec.cluster_spread * rng.standard_normal((n, spec.feature_dim))


def _background_samples(spec, n, stream):
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 2, stream]))
    scale = np.sqrt(spec.separation ** 2 / spec.feature_dim + spec.cluster_spread ** 2)
    return 1.5 * scale * rng.standard_normal((n, spec.feature_dim))


def sample_dataset(spec: DatasetSpec, groups: FrequencyGroups = FrequencyGroups()):
    counts = generate_counts(spec)
    means = class_means(spec)
    train_x, train_y, test_x, test_y = [], [], [], []
    for c, n in enumerate(counts):
        x = _class_samples(spec, means, c, int(n) + spec.test_per_class)
        train_x.append(x[:n])
        train_y.append(np.full(n, c, dtype=np.int64))
        test_x.append(x[n:])
        test_y.append(np.full(spec.test_per_class, c, dtype=np.int64))
    n_bg = background_count(spec, int(counts.sum()))
    if n_bg:
        train_x.append(_background_samples(spec, n_bg, 0))
        train_y.append(np.full(n_bg, BACKGROUND, dtype=np.int64))
    if spec.test_background:
        test_x.append(_background_samples(spec, spec.test_background, 1))
        test_y.append(np.full(spec.test_background, BACKGROUND, dtype=np.int64))
    return LongTailDataset(
        spec=spec,
        groups=groups,
        features=np.concatenate(train_x),
        labels=np.concatenate(train_y),
        test_features=np.concatenate(test_x),
        test_labels=np.concatenate(test_y),
        class_counts=counts,
        group_of=assign_groups(counts, groups),
    )


# --- columnar text export -------------------------------------------------
#
# Line 1: "# acsl-lab-dataset v1"
# Line 2: "# spec <json>"  (DatasetSpec fields)
# Line 3: "# groups <json>" (FrequencyGroups fields)
# Line 4: tab-separated column names: split, label, group, f0 .. f{d-1}
# Then one row per sample. ``label`` is the class index or "bg"; ``group`` is
# the class's frequency group or "bg". Floats use repr() so they round-trip.


def export_dataset(ds: LongTailDataset, fh):
    d = ds.spec.feature_dim
    fh.write(f"# {FORMAT_TAG}\n")
    fh.write("# spec " + json.dumps(asdict(ds.spec), sort_keys=True) + "\n")
    fh.write("# groups " + json.dumps(asdict(ds.groups), sort_keys=True) + "\n")
    fh.write("\t".join(["split", "label", "group"] + [f"f{j}" for j in range(d)]) + "\n")
    for split, xs, ys in (("train", ds.features, ds.labels), ("test", ds.test_features, ds.test_labels)):
        for x, y in zip(xs, ys):
            label = "bg" if y == BACKGROUND else str(int(y))
            group = "bg" if y == BACKGROUND else ds.group_of[y]
            fh.write("\t".join([split, label, group] + [repr(float(v)) for v in x]) + "\n")


def dumps_dataset(ds: LongTailDataset):
    buf = io.StringIO()
    export_dataset(ds, buf)
    return buf.getvalue()


def import_dataset(fh):
    lines = fh.read().splitlines()
    if not lines or lines[0] != f"# {FORMAT_TAG}":
        raise DatasetConfigError("not an acsl-lab dataset file")
    spec_fields = {f.name for f in fields(DatasetSpec)}
    spec = DatasetSpec(**{k: v for k, v in json.loads(lines[1][len("# spec "):]).items() if k in spec_fields})
    groups = FrequencyGroups(**json.loads(lines[2][len("# groups "):]))
    rows = {"train": ([], []), "test": ([], [])}
    for line in lines[4:]:
        split, label, _group, *feats = line.split("\t")
        xs, ys = rows[split]
        xs.append([float(v) for v in feats])
        ys.append(BACKGROUND if label == "bg" else int(label))
    d = spec.feature_dim
    train_y = np.array(rows["train"][1], dtype=np.int64)
    counts = np.bincount(train_y[train_y != BACKGROUND], minlength=spec.num_classes)
    return LongTailDataset(
        spec=spec,
        groups=groups,
        features=np.array(rows["train"][0], dtype=np.float64).reshape(-1, d),
        labels=train_y,
        test_features=np.array(rows["test"][0], dtype=np.float64).reshape(-1, d),
        test_labels=np.array(rows["test"][1], dtype=np.int64),
        class_counts=counts,
        group_of=assign_groups(counts, groups),
    )
