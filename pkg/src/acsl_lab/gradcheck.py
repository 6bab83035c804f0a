"""Central finite-difference checks for every loss family."""

from __future__ import annotations

import numpy as np

from . import baselines, loss_core
from .loss_core import BACKGROUND

STEP = 1e-5
MASK_MARGIN = 1e-3


def numeric_grad(f, z, step=STEP, vectorized=False):
    """Central differences of scalar ``f`` at ``z``.

    With ``vectorized=True``, ``f`` maps a stack of logit rows ``(M, n)`` to
    ``(M,)`` losses and every perturbation is evaluated in one call.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.size
    shift = step * np.eye(n)
    stack = np.concatenate([z.ravel() + shift, z.ravel() - shift])
    if vectorized:
        values = np.asarray(f(stack.reshape((2 * n,) + z.shape)))
    else:
        values = np.array([f(row.reshape(z.shape)) for row in stack])
    return ((values[:n] - values[n:]) / (2 * step)).reshape(z.shape)


def relative_error(analytic, numeric):
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - n) / scale)


def _logits_away_from(rng, c, xi):
    # resample until no confidence sits within MASK_MARGIN of the threshold
    while True:
        z = rng.normal(0.0, 3.0, size=c)
        if np.all(np.abs(loss_core.sigmoid(z) - xi) > MASK_MARGIN):
            return z


def _label(rng, c, allow_background=True):
    if allow_background and rng.random() < 0.2:
        return BACKGROUND
    return int(rng.integers(c))


def _rows(label):
    # repeat one sample's label for a stack of perturbed logit rows
    return lambda v: label if np.ndim(v) == 1 else np.full(len(v), label)


def random_case(rng, family, max_classes=16):
    """Draw one ``(loss_fn, grad_fn, logits)`` case for ``family``.

    ``loss_fn`` accepts a single logit vector or a stack of them.
    """
    c = int(rng.integers(2, max_classes + 1))
    if family == "bce":
        y = _label(rng, c)
        ys = _rows(y)
        z = rng.normal(0.0, 3.0, size=c)
        return (lambda v: loss_core.bce_loss(v, ys(v))), (lambda v: loss_core.bce_grad(v, ys(v))), z
    if family == "acsl":
        cfg = loss_core.AcslConfig(float(rng.uniform(0.01, 0.99)))
        y = _label(rng, c)
        ys = _rows(y)
        z = _logits_away_from(rng, c, cfg.xi)
        return (lambda v: loss_core.acsl_loss(v, ys(v), cfg)), (lambda v: loss_core.acsl_grad(v, ys(v), cfg)), z
    if family == "eql":
        counts = rng.integers(1, 1000, size=c)
        cfg = baselines.EqlConfig(float(rng.uniform(1, 1000)))
        y = _label(rng, c)
        ys = _rows(y)
        z = rng.normal(0.0, 3.0, size=c)
        return ((lambda v: baselines.eql_loss(v, ys(v), counts, cfg)),
                (lambda v: baselines.eql_grad(v, ys(v), counts, cfg)), z)
    if family == "softmax":
        y = int(rng.integers(c))
        ys = _rows(y)
        z = rng.normal(0.0, 3.0, size=c)
        return (lambda v: baselines.softmax_ce_loss(v, ys(v))), (lambda v: baselines.softmax_ce_grad(v, ys(v))), z
    if family == "group_softmax":
        counts = rng.permutation(np.arange(1, c + 1) * 10)
        n_lines = int(rng.integers(0, min(3, c - 1) + 1))
        lines = sorted(rng.choice(np.arange(2, c + 1) * 10, size=n_lines, replace=False))
        part = baselines.GroupPartition(tuple(lines), tuple(counts))
        y = _label(rng, c, allow_background=part.num_slots > 0)
        ys = _rows(y)
        z = rng.normal(0.0, 3.0, size=part.width)
        return ((lambda v: baselines.group_softmax_loss(v, ys(v), part)),
                (lambda v: baselines.group_softmax_grad(v, ys(v), part)), z)
    raise ValueError(f"unknown family {family!r}")


FAMILIES = ("bce", "acsl", "eql", "softmax", "group_softmax")


def run_suite(cases_per_family=1000, seed=0, max_classes=16):
    """Maximum relative error per loss family over random cases."""
    rng = np.random.default_rng(seed)
    worst = {}
    for family in FAMILIES:
        err = 0.0
        for _ in range(cases_per_family):
            f, g, z = random_case(rng, family, max_classes)
            err = max(err, relative_error(g(z), numeric_grad(f, z, vectorized=True)))
        worst[family] = err
    return worst
