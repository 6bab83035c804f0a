"""Comparison losses: softmax cross-entropy, Equalization Loss, group softmax."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .loss_core import BACKGROUND, InvalidInput, _as_batch, _unbatch, masked_bce, one_hot


class ConfigError(ValueError):
    pass


def log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _require_foreground(y):
    if np.any(y == BACKGROUND):
        raise InvalidInput(
            "softmax cross-entropy needs an explicit background class; "
            "append one to the logits and label background samples with its index")


def softmax_ce_loss(logits, labels):
    z, y, single = _as_batch(logits, labels)
    _require_foreground(y)
    loss = -log_softmax(z)[np.arange(len(y)), y]
    return _unbatch(loss, single)


def softmax_ce_grad(logits, labels):
    z, y, single = _as_batch(logits, labels)
    _require_foreground(y)
    return _unbatch(np.exp(log_softmax(z)) - one_hot(y, z.shape[1]), single)


@dataclass(frozen=True)
class EqlConfig:
    tail_threshold: float = 100.0

    def __post_init__(self):
        if self.tail_threshold < 0:
            raise InvalidInput("tail_threshold must be non-negative")


def eql_weights(labels, class_counts, cfg: EqlConfig):
    """Mask that drops negatives from foreground samples onto tail classes.

    A class is tail when its training count is below ``cfg.tail_threshold``.
    The target entry is always kept; background samples keep every entry.
    """
    counts = np.asarray(class_counts)
    y = np.atleast_1d(np.asarray(labels)).astype(np.int64)
    single = np.ndim(labels) == 0
    tail = counts < cfg.tail_threshold
    w = np.ones((len(y), len(counts)))
    fg = y != BACKGROUND
    w[np.ix_(fg, tail)] = 0.0
    w[np.flatnonzero(fg), y[fg]] = 1.0
    return w[0] if single else w


def eql_loss(logits, labels, class_counts, cfg: EqlConfig):
    return masked_bce(logits, labels, eql_weights(labels, class_counts, cfg))[0]


def eql_grad(logits, labels, class_counts, cfg: EqlConfig):
    return masked_bce(logits, labels, eql_weights(labels, class_counts, cfg))[1]


@dataclass(frozen=True)
class GroupPartition:
    """Classes split into groups by training count.

    Group ``g`` holds the classes whose count ``n`` satisfies
    ``thresholds[g-1] <= n < thresholds[g]``, so ``(500,)`` splits into
    ``(0, 500)`` and ``[500, inf)``.

    With more than one group, every group owns an extra "others" logit.
    Logit vectors for group softmax are laid out as the ``C`` class logits
    followed by one others slot per group (none for a single group).
    """

    thresholds: tuple
    class_counts: tuple
    groups: tuple = field(init=False)

    def __post_init__(self):
        thresholds = tuple(float(t) for t in self.thresholds)
        if list(thresholds) != sorted(set(thresholds)):
            raise ConfigError(f"thresholds must be strictly ascending, got {thresholds}")
        counts = tuple(int(c) for c in self.class_counts)
        if not counts:
            raise ConfigError("partition needs at least one class")
        groups = tuple(bisect.bisect_right(thresholds, c) for c in counts)
        for g in range(len(thresholds) + 1):
            if g not in groups:
                raise ConfigError(f"group {g} is empty for thresholds {thresholds}")
        object.__setattr__(self, "thresholds", thresholds)
        object.__setattr__(self, "class_counts", counts)
        object.__setattr__(self, "groups", groups)

    @property
    def num_classes(self):
        return len(self.class_counts)

    @property
    def num_groups(self):
        return len(self.thresholds) + 1

    @property
    def num_slots(self):
        return self.num_groups if self.num_groups > 1 else 0

    @property
    def width(self):
        return self.num_classes + self.num_slots

    def columns(self, g):
        """Logit columns of group ``g``: others slot first (if any), then members."""
        members = [c for c, grp in enumerate(self.groups) if grp == g]
        if self.num_slots:
            return [self.num_classes + g] + members
        return members


def _group_targets(y, part: GroupPartition, g, cols):
    # position inside ``cols`` of each sample's target for group g
    pos = np.zeros(len(y), dtype=np.int64)
    index = {c: j for j, c in enumerate(cols)}
    for n, label in enumerate(y):
        if label != BACKGROUND and part.groups[label] == g:
            pos[n] = index[label]
        elif part.num_slots:
            pos[n] = 0
        else:
            raise InvalidInput("background sample with a single-group partition has no target")
    return pos


def group_softmax(logits, labels, part: GroupPartition):
    """Loss and gradient of the sum of within-group softmax cross-entropies."""
    z, y, single = _as_batch(logits, labels)
    if z.shape[1] != part.width:
        raise InvalidInput(f"expected {part.width} logits, got {z.shape[1]}")
    if np.any(y >= part.num_classes):
        raise InvalidInput("label refers to an others slot")
    loss = np.zeros(z.shape[0])
    grad = np.zeros_like(z)
    rows = np.arange(z.shape[0])
    for g in range(part.num_groups):
        cols = part.columns(g)
        pos = _group_targets(y, part, g, cols)
        logp = log_softmax(z[:, cols])
        loss -= logp[rows, pos]
        g_grad = np.exp(logp)
        g_grad[rows, pos] -= 1.0
        grad[:, cols] = g_grad
    return _unbatch(loss, single), _unbatch(grad, single)


def group_softmax_loss(logits, labels, part: GroupPartition):
    return group_softmax(logits, labels, part)[0]


def group_softmax_grad(logits, labels, part: GroupPartition):
    return group_softmax(logits, labels, part)[1]


def group_softmax_probs(logits, part: GroupPartition):
    """Within-group probability of each real class, shape ``(N, C)``."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    out = np.zeros((z.shape[0], part.num_classes))
    for g in range(part.num_groups):
        cols = part.columns(g)
        probs = np.exp(log_softmax(z[:, cols]))
        members = cols[1:] if part.num_slots else cols
        out[:, members] = probs[:, 1:] if part.num_slots else probs
    return out
