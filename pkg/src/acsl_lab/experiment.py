"""Experiment configs, sweeps and loss comparisons written to disk.

Config files are JSON. Every omitted field takes its default, and the fully
resolved config is written back as ``config.json`` in the output directory.

Output layout::

    out/config.json
    out/runs/<point>/seed<k>/report.json | report.tsv | train_log.tsv
    out/runs/<point>/summary.json        seed-averaged m_ap / ap_r / ap_c / ap_f
    out/table.tsv, out/table.json        one row per point
"""

from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .eval_metrics import evaluate, mean_reports
from .synth_data import DatasetSpec, FrequencyGroups, generate_counts, sample_dataset
from .trainer import LossSpec, Objective, TrainConfig, TrainingDiverged, TwoStageSchedule, format_log, train_two_stage

SWEEP_AXES = ("none", "xi", "partition")
METRICS = ("m_ap", "ap_r", "ap_c", "ap_f")


class ConfigError(ValueError):
    pass


def default_dataset():
    return DatasetSpec(test_background=0)


def default_schedule():
    stage1 = TrainConfig(base_lr=0.02, warmup_iters=100, batch_size=64)
    return TwoStageSchedule(stage1, replace(stage1, base_lr=0.01, warmup_iters=0), hidden_dim=32)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=default_dataset)
    groups: FrequencyGroups = FrequencyGroups(rare_max=25, common_max=100)
    schedule: TwoStageSchedule = field(default_factory=default_schedule)
    loss: LossSpec = LossSpec("acsl", xi=0.7)
    compare: tuple = ()
    sweep_axis: str = "none"
    sweep_values: tuple = ()
    seeds: tuple = (0,)

    def __post_init__(self):
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis: expected one of {SWEEP_AXES}, got {self.sweep_axis!r}")
        if self.sweep_axis != "none" and not self.sweep_values:
            raise ConfigError("sweep.values: must be non-empty when a sweep axis is selected")
        if self.sweep_axis == "xi" and self.loss.family != "acsl":
            raise ConfigError("sweep.axis: xi sweeps need loss.family = 'acsl'")
        if self.sweep_axis == "partition" and self.loss.family != "group_softmax":
            raise ConfigError("sweep.axis: partition sweeps need loss.family = 'group_softmax'")
        if not self.seeds:
            raise ConfigError("seeds: must list at least one seed")
        try:
            points = self.points()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"sweep.values: {exc}") from None
        counts = tuple(generate_counts(self.dataset))
        for point, loss in points + [(loss.label, loss) for loss in self.compare]:
            if loss.family == "group_softmax":
                try:
                    Objective(loss, counts)
                except ValueError as exc:
                    raise ConfigError(f"{point}: {exc}") from None

    def points(self):
        """``(name, LossSpec)`` for every sweep point, in sweep order."""
        if self.sweep_axis == "xi":
            return [(f"xi={v:g}", replace(self.loss, xi=float(v))) for v in sorted(self.sweep_values)]
        if self.sweep_axis == "partition":
            def key(v):
                return tuple(v) if isinstance(v, (list, tuple)) else (v,)
            return [("partition=" + ",".join(f"{t:g}" for t in key(v)),
                     replace(self.loss, group_thresholds=tuple(float(t) for t in key(v))))
                    for v in sorted(self.sweep_values, key=key)]
        return [("single", self.loss)]

    def to_dict(self):
        return {
            "dataset": {k: v for k, v in asdict(self.dataset).items() if k != "seed"},
            "groups": asdict(self.groups),
            "schedule": {
                "stage1": {k: v for k, v in _listify(asdict(self.schedule.stage1)).items() if k != "seed"},
                "stage2": {k: v for k, v in _listify(asdict(self.schedule.stage2)).items() if k != "seed"},
                "hidden_dim": self.schedule.hidden_dim,
            },
            "loss": _listify(asdict(self.loss)),
            "compare": [_listify(asdict(c)) for c in self.compare],
            "sweep": {"axis": self.sweep_axis, "values": [list(v) if isinstance(v, tuple) else v
                                                          for v in self.sweep_values]},
            "seeds": list(self.seeds),
        }


def _listify(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _build(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}: unknown field")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(data):
    """Build an :class:`ExperimentConfig` from a parsed JSON object."""
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    known = {"dataset", "groups", "schedule", "loss", "compare", "sweep", "seeds"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown field")
    base = ExperimentConfig()
    ds = {k: v for k, v in asdict(base.dataset).items() if k != "seed"}
    ds.update(data.get("dataset") or {})
    dataset = _build(DatasetSpec, ds, "dataset")
    groups = _build(FrequencyGroups, {**asdict(base.groups), **(data.get("groups") or {})}, "groups")
    sched = data.get("schedule") or {}
    if not isinstance(sched, dict):
        raise ConfigError("schedule: expected an object")
    unknown = sorted(set(sched) - {"stage1", "stage2", "hidden_dim"})
    if unknown:
        raise ConfigError(f"schedule.{unknown[0]}: unknown field")
    stage1 = _build(TrainConfig, {**asdict(base.schedule.stage1), **(sched.get("stage1") or {})}, "schedule.stage1")
    stage2 = _build(TrainConfig, {**asdict(base.schedule.stage2), **(sched.get("stage2") or {})}, "schedule.stage2")
    hidden = sched.get("hidden_dim", base.schedule.hidden_dim)
    if not isinstance(hidden, int) or hidden < 1:
        raise ConfigError("schedule.hidden_dim: must be a positive integer")
    loss = _build(LossSpec, {**asdict(base.loss), **(data.get("loss") or {})}, "loss")
    compare = tuple(_build(LossSpec, {**asdict(LossSpec()), **c}, f"compare[{i}]")
                    for i, c in enumerate(data.get("compare") or []))
    sweep = data.get("sweep") or {}
    if not isinstance(sweep, dict):
        raise ConfigError("sweep: expected an object")
    values = tuple(tuple(v) if isinstance(v, list) else v for v in sweep.get("values", []))
    seeds = data.get("seeds", list(base.seeds))
    if not isinstance(seeds, list) or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds: must be a list of non-negative integers")
    return ExperimentConfig(
        dataset=dataset,
        groups=groups,
        schedule=TwoStageSchedule(stage1, stage2, hidden),
        loss=loss,
        compare=compare,
        sweep_axis=sweep.get("axis", "none"),
        sweep_values=values,
        seeds=tuple(seeds),
    )


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return parse_config(data)


# --- running -------------------------------------------------------------------


@dataclass(frozen=True)
class RunTask:
    point: str
    loss: LossSpec
    seed: int
    dataset: DatasetSpec
    groups: FrequencyGroups
    schedule: TwoStageSchedule


def run_one(task: RunTask):
    """Train and evaluate one (point, seed); returns ``(report, log text)``."""
    ds = sample_dataset(replace(task.dataset, seed=task.seed), task.groups)
    sched = TwoStageSchedule(
        replace(task.schedule.stage1, seed=task.seed),
        replace(task.schedule.stage2, seed=task.seed),
        task.schedule.hidden_dim,
    )
    result = train_two_stage(ds, sched, task.loss)
    return evaluate(result, ds), format_log(result.log)


def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _slug(text):
    return "".join(ch if ch.isalnum() or ch in "=.,-" else "_" for ch in text)


def _execute(cfg: ExperimentConfig, points, out: Path, jobs=1):
    """Run every point over every seed and persist per-run files.

    Returns ``{point: seed-averaged summary}`` in point order.
    """
    tasks = [RunTask(p, loss, s, cfg.dataset, cfg.groups, cfg.schedule) for p, loss in points for s in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(run_one, tasks))
    else:
        outputs = [run_one(t) for t in tasks]
    summaries = {}
    for point, _ in points:
        reports = []
        for task, (report, log_text) in zip(tasks, outputs):
            if task.point != point:
                continue
            run_dir = out / "runs" / _slug(point) / f"seed{task.seed}"
            atomic_write(run_dir / "report.json", report.to_json())
            atomic_write(run_dir / "report.tsv", report.to_tsv())
            atomic_write(run_dir / "train_log.tsv", log_text)
            reports.append(report)
        summary = mean_reports(reports)
        summaries[point] = summary
        atomic_write(out / "runs" / _slug(point) / "summary.json",
                     json.dumps({"point": point, "seeds": list(cfg.seeds), "summary": summary},
                                indent=2, sort_keys=True) + "\n")
    return summaries


def _fmt(v):
    return "absent" if v is None else f"{v:.6f}"


def _write_config(cfg, out):
    atomic_write(out / "config.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def run(cfg: ExperimentConfig, out, jobs=1):
    """Run the configured sweep; writes reports plus a combined table."""
    out = Path(out)
    _write_config(cfg, out)
    points = cfg.points()
    summaries = _execute(cfg, points, out, jobs)
    rows = [{"point": p, "loss": loss.label, **summaries[p]} for p, loss in points]
    lines = ["point\tloss\t" + "\t".join(METRICS)]
    lines += [f"{r['point']}\t{r['loss']}\t" + "\t".join(_fmt(r[m]) for m in METRICS) for r in rows]
    atomic_write(out / "table.tsv", "\n".join(lines) + "\n")
    atomic_write(out / "table.json", json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return rows


def compare(cfg: ExperimentConfig, out, jobs=1):
    """Train every loss in ``cfg.compare``; table rows carry deltas vs the first."""
    if len(cfg.compare) < 2:
        raise ConfigError("compare: list at least two losses")
    out = Path(out)
    _write_config(cfg, out)
    points = [(f"{i}-{loss.label}", loss) for i, loss in enumerate(cfg.compare)]
    summaries = _execute(cfg, points, out, jobs)
    base = summaries[points[0][0]]
    rows = []
    for p, loss in points:
        s = summaries[p]
        deltas = {f"d_{m}": (None if s[m] is None or base[m] is None else s[m] - base[m]) for m in METRICS}
        rows.append({"point": p, "loss": loss.label, **s, **deltas})
    cols = list(METRICS) + [f"d_{m}" for m in METRICS]
    lines = ["point\tloss\t" + "\t".join(cols)]
    lines += [f"{r['point']}\t{r['loss']}\t" + "\t".join(_fmt(r[c]) for c in cols) for r in rows]
    atomic_write(out / "table.tsv", "\n".join(lines) + "\n")
    atomic_write(out / "table.json", json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return rows


__all__ = ["ConfigError", "ExperimentConfig", "TrainingDiverged", "compare", "load_config", "parse_config", "run"]
