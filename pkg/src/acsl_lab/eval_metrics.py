"""Per-class average precision and rare/common/frequent aggregation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .synth_data import GROUP_NAMES


def rank(scores, is_positive):
    """Sort by descending score; ties keep ascending sample index."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    return np.asarray(is_positive, dtype=bool)[order]


def average_precision(ranked_positive):
    """Mean of the precision measured at the rank of each positive.

    ``ranked_positive`` is a boolean sequence already in ranked order.
    Returns ``None`` when there is no positive.
    """
    hits = np.asarray(ranked_positive, dtype=bool)
    n_pos = int(hits.sum())
    if n_pos == 0:
        return None
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision[hits].sum() / n_pos)


def per_class_ap(scores, labels):
    """AP of every class, scoring column ``c`` against ``labels == c``."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    return [average_precision(rank(scores[:, c], labels == c)) for c in range(scores.shape[1])]


@dataclass
class GroupReport:
    per_class: list  # AP per class, None when the class had no positives
    group_of: tuple
    score_semantics: str = ""
    m_ap: float | None = None
    ap_r: float | None = None
    ap_c: float | None = None
    ap_f: float | None = None
    excluded: list = field(default_factory=list)

    def summary(self):
        return {"m_ap": self.m_ap, "ap_r": self.ap_r, "ap_c": self.ap_c, "ap_f": self.ap_f}

    def to_json(self):
        return json.dumps({
            "score_semantics": self.score_semantics,
            "summary": self.summary(),
            "per_class": [{"class": c, "group": g, "ap": ap}
                          for c, (g, ap) in enumerate(zip(self.group_of, self.per_class))],
            "excluded": self.excluded,
        }, indent=2, sort_keys=True) + "\n"

    def to_tsv(self):
        lines = [f"# scores: {self.score_semantics}", "class\tgroup\tap"]
        for c, (g, ap) in enumerate(zip(self.group_of, self.per_class)):
            lines.append(f"{c}\t{g}\t{_fmt(ap)}")
        lines.append("")
        lines.append("metric\tvalue")
        lines.extend(f"{k}\t{_fmt(v)}" for k, v in self.summary().items())
        return "\n".join(lines) + "\n"


def _fmt(value):
    return "absent" if value is None else repr(float(value))


def _mean(values):
    return float(np.mean(values)) if values else None


def group_report(per_class, group_of, score_semantics=""):
    """Unweighted means over all classes and within each group.

    Classes whose AP is ``None`` are excluded and listed in ``excluded``;
    a group with no evaluated class reports ``None`` rather than zero.
    """
    per_class = list(per_class)
    if len(per_class) != len(group_of):
        raise ValueError("group map must cover every class")
    evaluated = [(c, ap) for c, ap in enumerate(per_class) if ap is not None]
    by_group = {g: [ap for c, ap in evaluated if group_of[c] == g] for g in GROUP_NAMES}
    return GroupReport(
        per_class=per_class,
        group_of=tuple(group_of),
        score_semantics=score_semantics,
        m_ap=_mean([ap for _, ap in evaluated]),
        ap_r=_mean(by_group["rare"]),
        ap_c=_mean(by_group["common"]),
        ap_f=_mean(by_group["frequent"]),
        excluded=[c for c, ap in enumerate(per_class) if ap is None],
    )


def evaluate(result, dataset):
    """GroupReport for a trained model on the dataset's balanced test split."""
    logits = result.model.logits(dataset.test_features)
    scores = result.objective.scores(logits)
    aps = per_class_ap(scores, dataset.test_labels)
    return group_report(aps, dataset.group_of, result.objective.score_semantics)


def mean_reports(reports):
    """Average the summary of several reports (e.g. across seeds), skipping absent values."""
    out = {}
    for key in ("m_ap", "ap_r", "ap_c", "ap_f"):
        vals = [r.summary()[key] for r in reports if r.summary()[key] is not None]
        out[key] = float(np.mean(vals)) if vals else None
    return out

