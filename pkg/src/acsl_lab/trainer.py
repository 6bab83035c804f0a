"""One-hidden-layer classifier trained by hand-written backprop and SGD.

The two-stage recipe first trains everything with softmax cross-entropy
(background as an extra class), then freezes the hidden layer and fine-tunes
the classifier layer with the loss under study.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, loss_core
from .loss_core import BACKGROUND, InvalidInput
from .synth_data import LongTailDataset, background_retention

log = logging.getLogger(__name__)

BINARY_FAMILIES = ("bce", "acsl", "eql")
SOFTMAX_FAMILIES = ("softmax", "group_softmax")
FAMILIES = BINARY_FAMILIES + SOFTMAX_FAMILIES


class TrainingDiverged(RuntimeError):
    def __init__(self, message, stage=None, iteration=None):
        super().__init__(message)
        self.stage = stage
        self.iteration = iteration


# --- losses over a batch ------------------------------------------------------


@dataclass(frozen=True)
class LossSpec:
    """Which loss to train the classifier with, plus its hyper-parameters.

    ``end_to_end`` trains all parameters with this loss for the stage-1
    schedule only, instead of the two-stage recipe.
    """

    family: str = "acsl"
    xi: float = 0.7
    tail_threshold: float = 100.0
    group_thresholds: tuple = ()
    end_to_end: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInput(f"unknown loss family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "group_thresholds", tuple(float(t) for t in self.group_thresholds))
        loss_core.AcslConfig(self.xi)
        baselines.EqlConfig(self.tail_threshold)

    @property
    def label(self):
        name = {
            "acsl": f"acsl(xi={self.xi:g})",
            "eql": f"eql(tail<{self.tail_threshold:g})",
            "group_softmax": "group_softmax(" + ",".join(f"{t:g}" for t in self.group_thresholds) + ")",
        }.get(self.family, self.family)
        return name + (" end-to-end" if self.end_to_end else "")


class Objective:
    """A :class:`LossSpec` bound to a dataset's class counts."""

    def __init__(self, spec: LossSpec, class_counts):
        self.spec = spec
        self.class_counts = np.asarray(class_counts)
        self.num_classes = len(self.class_counts)
        self.partition = None
        if spec.family == "group_softmax":
            self.partition = baselines.GroupPartition(spec.group_thresholds, tuple(self.class_counts))
            if self.partition.num_slots == 0:
                raise InvalidInput("group softmax needs at least one dividing line to place background samples")

    @property
    def binary(self):
        return self.spec.family in BINARY_FAMILIES

    @property
    def width(self):
        if self.spec.family == "softmax":
            return self.num_classes + 1
        if self.partition is not None:
            return self.partition.width
        return self.num_classes

    def loss_and_grad(self, logits, labels, retention=None):
        """Per-sample losses ``(N,)`` and logit gradients ``(N, width)``.

        ``retention`` is an optional ``(N, C)`` 0/1 weight multiplied into the
        binary-family masks; softmax families ignore it.
        """
        fam = self.spec.family
        if fam == "softmax":
            y = np.where(labels == BACKGROUND, self.num_classes, labels)
            return (np.atleast_1d(baselines.softmax_ce_loss(logits, y)),
                    np.atleast_2d(baselines.softmax_ce_grad(logits, y)))
        if fam == "group_softmax":
            loss, grad = baselines.group_softmax(logits, labels, self.partition)
            return np.atleast_1d(loss), np.atleast_2d(grad)
        if fam == "bce":
            w = np.ones_like(logits)
        elif fam == "acsl":
            w = loss_core.acsl_weights(loss_core.sigmoid(logits), labels, loss_core.AcslConfig(self.spec.xi))
        else:
            w = baselines.eql_weights(labels, self.class_counts, baselines.EqlConfig(self.spec.tail_threshold))
        if retention is not None:
            w = w * retention
        loss, grad = loss_core.masked_bce(logits, labels, w)
        return np.atleast_1d(loss), np.atleast_2d(grad)

    def scores(self, logits):
        """Per-class confidences used for ranking at evaluation time, ``(N, C)``."""
        fam = self.spec.family
        if fam in BINARY_FAMILIES:
            return loss_core.sigmoid(logits)
        if fam == "softmax":
            return np.exp(baselines.log_softmax(logits))[:, : self.num_classes]
        return baselines.group_softmax_probs(logits, self.partition)

    @property
    def score_semantics(self):
        return {
            "bce": "sigmoid",
            "acsl": "sigmoid",
            "eql": "sigmoid",
            "softmax": "global softmax incl. background",
            "group_softmax": "within-group softmax",
        }[self.spec.family]


# --- model ------------------------------------------------------------------

PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass
class MlpClassifier:
    w1: np.ndarray  # (d, h)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h, K)
    b2: np.ndarray  # (K,)

    @classmethod
    def init(cls, d, h, k, rng):
        return cls(
            w1=rng.standard_normal((d, h)) * np.sqrt(2.0 / d),
            b1=np.zeros(h),
            w2=rng.standard_normal((h, k)) * np.sqrt(1.0 / h),
            b2=np.zeros(k),
        )

    def params(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_params(self, params):
        return replace(self, **params)

    def hidden(self, x):
        return np.maximum(x @ self.w1 + self.b1, 0.0)

    def logits(self, x):
        return self.hidden(x) @ self.w2 + self.b2


def forward_backward(model: MlpClassifier, x, labels, objective: Objective, retention=None):
    """Mean batch loss and its gradient for every parameter."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[0] != labels.shape[0]:
        raise InvalidInput(f"batch features {x.shape} do not match labels {labels.shape}")
    if x.shape[1] != model.w1.shape[0]:
        raise InvalidInput(f"feature dim {x.shape[1]} != model input {model.w1.shape[0]}")
    if model.w2.shape[1] != objective.width:
        raise InvalidInput(f"model head has {model.w2.shape[1]} outputs, loss needs {objective.width}")
    n = x.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        pre = x @ model.w1 + model.b1
        hid = np.maximum(pre, 0.0)
        logits = hid @ model.w2 + model.b2
    if not np.all(np.isfinite(logits)):
        raise TrainingDiverged("non-finite logits")
    losses, dz = objective.loss_and_grad(logits, labels, retention)
    dz = dz / n
    dhid = (dz @ model.w2.T) * (pre > 0)
    grads = {
        "w2": hid.T @ dz,
        "b2": dz.sum(axis=0),
        "w1": x.T @ dhid,
        "b1": dhid.sum(axis=0),
    }
    return float(losses.mean()), grads


def mean_loss(model, x, labels, objective):
    losses, _ = objective.loss_and_grad(model.logits(x), np.asarray(labels), None)
    return float(losses.mean())


# --- optimisation -------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_iters: int = 500
    warmup_ratio: float = 1.0 / 3.0
    decay_milestones: tuple = (8, 11)
    decay_factor: float = 0.1
    epochs: int = 12
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "decay_milestones", tuple(int(m) for m in self.decay_milestones))
        ms = self.decay_milestones
        if self.base_lr <= 0:
            raise InvalidInput("base_lr must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidInput("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidInput("weight_decay must be non-negative")
        if not 0 < self.decay_factor < 1:
            raise InvalidInput("decay_factor must lie in (0, 1)")
        if self.warmup_iters < 0 or not 0 < self.warmup_ratio <= 1:
            raise InvalidInput("warmup_iters must be >= 0 and warmup_ratio in (0, 1]")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidInput("epochs must be >= 0 and batch_size >= 1")
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise InvalidInput("decay_milestones must be strictly increasing")
        # a zero-epoch stage is a no-op, so its milestones are not checked
        if self.epochs > 0 and any(m >= self.epochs for m in ms):
            raise InvalidInput("decay_milestones must be < epochs")


def lr_at(iteration, epoch, cfg: TrainConfig):
    """Step-decayed learning rate with a linear warmup over the first iterations."""
    lr = cfg.base_lr * cfg.decay_factor ** sum(epoch >= m for m in cfg.decay_milestones)
    if iteration < cfg.warmup_iters:
        frac = iteration / cfg.warmup_iters
        lr *= cfg.warmup_ratio + (1.0 - cfg.warmup_ratio) * frac
    return lr


def sgd_step(params, grads, velocity, lr, cfg: TrainConfig):
    """One momentum-SGD update; returns new ``(params, velocity)`` dicts.

    Only the keys present in ``grads`` are updated.
    """
    new_params = dict(params)
    new_velocity = dict(velocity)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {name}")
        v = cfg.momentum * velocity[name] + g + cfg.weight_decay * params[name]
        new_velocity[name] = v
        new_params[name] = params[name] - lr * v
    return new_params, new_velocity


# --- two-stage training ---------------------------------------------------------


@dataclass(frozen=True)
class TwoStageSchedule:
    stage1: TrainConfig = TrainConfig()
    stage2: TrainConfig = TrainConfig()
    hidden_dim: int = 32

    @classmethod
    def reuse_stage1(cls, stage1: TrainConfig, lr_scale=1.0, hidden_dim=32):
        """Stage 2 repeats the stage-1 schedule with the learning rate scaled."""
        return cls(stage1, replace(stage1, base_lr=stage1.base_lr * lr_scale), hidden_dim)


@dataclass(frozen=True)
class LogRow:
    stage: int
    epoch: int
    iteration: int
    lr: float
    loss: float


LOG_HEADER = "stage\tepoch\titeration\tlr\tloss"


def format_log(rows):
    """Tab-separated training log: one row per epoch, ``lr`` is the epoch's last value."""
    lines = [LOG_HEADER] + [f"{r.stage}\t{r.epoch}\t{r.iteration}\t{r.lr!r}\t{r.loss!r}" for r in rows]
    return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    model: MlpClassifier
    objective: Objective
    log: list = field(default_factory=list)
    initial_loss: float = float("nan")
    stage1_model: MlpClassifier | None = None


def retention_mask(dataset: LongTailDataset, seed, epoch):
    """Per-(sample, class) 0/1 keep mask for background negatives.

    Foreground rows are all ones. For a background row, class ``c`` is kept
    with the retention probability of its frequency group; draws depend only on
    ``(seed, epoch, sample, class)``.
    """
    rates = np.array([background_retention(g) for g in dataset.group_of])
    u = np.random.default_rng(np.random.SeedSequence([seed, 7, epoch])).random(
        (len(dataset.labels), dataset.num_classes))
    keep = (u < rates).astype(np.float64)
    keep[dataset.labels != BACKGROUND] = 1.0
    return keep


def train_stage(model, dataset, cfg: TrainConfig, objective: Objective, stage, train_hidden=True,
                use_retention=False):
    """Run one stage of mini-batch training; returns ``(model, log rows)``."""
    params = model.params()
    trainable = PARAM_NAMES if train_hidden else ("w2", "b2")
    velocity = {name: np.zeros_like(params[name]) for name in trainable}
    x, y = dataset.features, dataset.labels
    rows = []
    it = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, stage, epoch])).permutation(len(y))
        keep = retention_mask(dataset, cfg.seed, epoch) if use_retention and objective.binary else None
        total, seen, lr = 0.0, 0, 0.0
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            lr = lr_at(it, epoch, cfg)
            current = model.with_params(params)
            try:
                loss, grads = forward_backward(current, x[idx], y[idx], objective,
                                               None if keep is None else keep[idx])
                if not np.isfinite(loss):
                    raise TrainingDiverged(f"loss became {loss}")
                params, velocity = sgd_step(params, {k: grads[k] for k in trainable}, velocity, lr, cfg)
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"{exc} at stage {stage} iteration {it}", stage, it) from None
            total += loss * len(idx)
            seen += len(idx)
            it += 1
        rows.append(LogRow(stage, epoch, it, lr, total / seen))
        log.debug("stage %d epoch %d lr %.5g loss %.5f", stage, epoch, lr, total / seen)
    return model.with_params(params), rows


def convert_head(model: MlpClassifier, objective: Objective):
    """Reshape a stage-1 softmax head (C classes + background) for ``objective``.

    Class columns are kept; group-softmax others slots start from the
    background column; binary heads drop the background column.
    """
    c = objective.num_classes
    w_cls, b_cls = model.w2[:, :c], model.b2[:c]
    w_bg, b_bg = model.w2[:, c:c + 1], model.b2[c:c + 1]
    extra = objective.width - c
    w2 = np.concatenate([w_cls] + [w_bg] * extra, axis=1)
    b2 = np.concatenate([b_cls] + [b_bg] * extra)
    return replace(model, w1=model.w1.copy(), b1=model.b1.copy(), w2=w2.copy(), b2=b2.copy())


def train_two_stage(dataset: LongTailDataset, sched: TwoStageSchedule, loss: LossSpec):
    objective = Objective(loss, dataset.class_counts)
    rng = np.random.default_rng(np.random.SeedSequence([sched.stage1.seed, 99]))
    d = dataset.spec.feature_dim
    if loss.end_to_end:
        model = MlpClassifier.init(d, sched.hidden_dim, objective.width, rng)
        initial = mean_loss(model, dataset.features, dataset.labels, objective)
        model, rows = train_stage(model, dataset, sched.stage1, objective, stage=1)
        return TrainResult(model, objective, rows, initial, model)

    stage1_obj = Objective(LossSpec("softmax"), dataset.class_counts)
    model = MlpClassifier.init(d, sched.hidden_dim, stage1_obj.width, rng)
    initial = mean_loss(model, dataset.features, dataset.labels, stage1_obj)
    model, rows = train_stage(model, dataset, sched.stage1, stage1_obj, stage=1)
    stage1_model = model
    model = convert_head(model, objective)
    model, rows2 = train_stage(model, dataset, sched.stage2, objective, stage=2, train_hidden=False,
                               use_retention=True)
    return TrainResult(model, objective, rows + rows2, initial, stage1_model)
