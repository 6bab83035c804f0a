"""Sigmoid binary cross-entropy and Adaptive Class Suppression Loss.

Every function accepts either a single logit vector of shape ``(C,)`` with a
scalar label, or a batch of shape ``(N, C)`` with an ``(N,)`` label array.
Labels are class indices in ``[0, C)``; :data:`BACKGROUND` marks a sample that
is a negative for every class.

Losses are returned per sample (a float for a single vector, an ``(N,)`` array
for a batch). Gradients are with respect to the logits and have the same shape
as the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BACKGROUND = -1


class InvalidInput(ValueError):
    """Raised for malformed logits, labels or configs."""


@dataclass(frozen=True)
class AcslConfig:
    xi: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.xi <= 1.0:
            raise InvalidInput(f"xi must lie in [0, 1], got {self.xi}")


def _as_batch(logits, labels):
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    if z.ndim != 2 or z.shape[1] == 0:
        raise InvalidInput(f"logits must have shape (C,) or (N, C), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInput("logits contain non-finite values")
    y = np.atleast_1d(np.asarray(labels))
    if y.shape != (z.shape[0],):
        raise InvalidInput(f"labels shape {y.shape} does not match {z.shape[0]} samples")
    if not np.issubdtype(y.dtype, np.integer):
        raise InvalidInput("labels must be integer class indices or BACKGROUND")
    y = y.astype(np.int64)
    if np.any((y != BACKGROUND) & ((y < 0) | (y >= z.shape[1]))):
        raise InvalidInput(f"label out of range for C={z.shape[1]}")
    return z, y, single


def _unbatch(value, single):
    if single:
        out = value[0]
        return float(out) if np.ndim(out) == 0 else out
    return value


def one_hot(labels, num_classes):
    """Float one-hot targets; background rows are all zero."""
    y = np.asarray(labels, dtype=np.int64)
    targets = np.zeros((y.shape[0], num_classes))
    fg = y != BACKGROUND
    targets[np.flatnonzero(fg), y[fg]] = 1.0
    return targets


def sigmoid(z):
    """Elementwise logistic function without overflow for large ``|z|``."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_probs(logits):
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InvalidInput("logits contain non-finite values")
    return sigmoid(z)


def _log_phat(z, targets):
    # log p = -softplus(-z), log(1 - p) = -softplus(z)
    return -np.logaddexp(0.0, np.where(targets > 0, -z, z))


def masked_bce(logits, labels, weights):
    """Binary cross-entropy with a per-entry weight on each ``-log(p_hat)`` term.

    ``weights`` broadcasts against the batch logits. The weights are treated as
    constants, so the gradient is ``weights * (p - y)``.
    """
    z, y, single = _as_batch(logits, labels)
    w = np.asarray(weights, dtype=np.float64)
    if single and w.ndim == 1:
        w = w[None, :]
    w = np.broadcast_to(w, z.shape)
    targets = one_hot(y, z.shape[1])
    loss = -(w * _log_phat(z, targets)).sum(axis=1)
    grad = w * (sigmoid(z) - targets)
    return _unbatch(loss, single), _unbatch(grad, single)


def bce_loss(logits, labels):
    z, y, single = _as_batch(logits, labels)
    loss = -_log_phat(z, one_hot(y, z.shape[1])).sum(axis=1)
    return _unbatch(loss, single)


def bce_grad(logits, labels):
    z, y, single = _as_batch(logits, labels)
    return _unbatch(sigmoid(z) - one_hot(y, z.shape[1]), single)


def acsl_weights(probs, labels, cfg: AcslConfig):
    """Binary suppression mask.

    The target class always gets weight 1. Any other class is kept only when
    its confidence reaches ``cfg.xi`` (inclusive). Background samples apply
    the non-target rule to every class.
    """
    p = np.asarray(probs, dtype=np.float64)
    single = p.ndim == 1
    p2 = p[None, :] if single else p
    if np.any(~np.isfinite(p2)) or np.any((p2 < 0.0) | (p2 > 1.0)):
        raise InvalidInput("probabilities must lie in [0, 1]")
    y = np.atleast_1d(np.asarray(labels)).astype(np.int64)
    if y.shape != (p2.shape[0],) or np.any((y != BACKGROUND) & ((y < 0) | (y >= p2.shape[1]))):
        raise InvalidInput("labels do not match probabilities")
    w = (p2 >= cfg.xi).astype(np.float64)
    w = np.maximum(w, one_hot(y, p2.shape[1]))
    return w[0] if single else w


def acsl_loss(logits, labels, cfg: AcslConfig):
    z, y, single = _as_batch(logits, labels)
    w = acsl_weights(sigmoid(z), y, cfg)
    loss = -(w * _log_phat(z, one_hot(y, z.shape[1]))).sum(axis=1)
    return _unbatch(loss, single)


def acsl_grad(logits, labels, cfg: AcslConfig):
    z, y, single = _as_batch(logits, labels)
    p = sigmoid(z)
    targets = one_hot(y, z.shape[1])
    w = acsl_weights(p, y, cfg)
    return _unbatch(w * (p - targets), single)
