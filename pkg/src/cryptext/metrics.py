"""Classification reports: per-class precision/recall/F1, averages, accuracy."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Sequence

import numpy as np

_AVG_KEYS = ("precision", "recall", "f1")


@dataclass
class ClassMetrics:
    label_name: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    per_class: List[ClassMetrics]
    macro_avg: Dict[str, float]
    weighted_avg: Dict[str, float]
    accuracy: float
    n_samples: int
    zero_division: str = "zero"

    @property
    def label_names(self) -> List[str]:
        return [c.label_name for c in self.per_class]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": [asdict(c) for c in self.per_class],
            "macro_avg": dict(self.macro_avg),
            "weighted_avg": dict(self.weighted_avg),
            "n_samples": self.n_samples,
            "zero_division": self.zero_division,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MetricsReport":
        return cls([ClassMetrics(**c) for c in obj["per_class"]], dict(obj["macro_avg"]),
                   dict(obj["weighted_avg"]), obj["accuracy"], obj["n_samples"],
                   obj.get("zero_division", "zero"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def render(self, digits: int = 2) -> str:
        """Text table in the familiar classification-report layout."""
        width = max([len(n) for n in self.label_names] + [len("weighted avg")])
        head = f"{'':>{width}} {'precision':>9} {'recall':>9} {'f1-score':>9} {'support':>9}"
        fmt = lambda v: f"{v:>9.{digits}f}"
        lines = [head, ""]
        for c in self.per_class:
            lines.append(f"{c.label_name:>{width}} {fmt(c.precision)} {fmt(c.recall)} {fmt(c.f1)} {c.support:>9}")
        lines.append("")
        lines.append(f"{'accuracy':>{width}} {'':>9} {'':>9} {fmt(self.accuracy)} {self.n_samples:>9}")
        for name, avg in (("macro avg", self.macro_avg), ("weighted avg", self.weighted_avg)):
            lines.append(f"{name:>{width}} {fmt(avg['precision'])} {fmt(avg['recall'])} {fmt(avg['f1'])} {self.n_samples:>9}")
        return "\n".join(lines) + "\n"


def _safe_div(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def compute_report(y_true, y_pred, label_names: Sequence[str]) -> MetricsReport:
    """Undefined precision or recall (zero denominator) counts as 0."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape[0]} true vs {y_pred.shape[0]} predicted labels")
    if y_true.size == 0:
        raise ValueError("cannot score an empty prediction set")
    C = len(label_names)
    for arr in (y_true, y_pred):
        if arr.min() < 0 or arr.max() >= C:
            raise ValueError(f"labels must lie in [0, {C})")
    cm = confusion_matrix(y_true, y_pred, C)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = _safe_div(tp, predicted.astype(np.float64))
    recall = _safe_div(tp, support.astype(np.float64))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    n = int(y_true.size)
    per_class = [ClassMetrics(name, float(p), float(r), float(f), int(s))
                 for name, p, r, f, s in zip(label_names, precision, recall, f1, support)]
    stacked = {"precision": precision, "recall": recall, "f1": f1}
    macro = {k: float(np.mean(v)) for k, v in stacked.items()}
    weighted = {k: float(np.dot(v, support) / n) for k, v in stacked.items()}
    return MetricsReport(per_class, macro, weighted, float(tp.sum() / n), n)


@dataclass
class DeltaReport:
    """Signed differences ``a - b`` for every metric of two reports."""

    accuracy: float
    macro_avg: Dict[str, float]
    weighted_avg: Dict[str, float]
    per_class: Dict[str, Dict[str, float]]
    max_abs_delta: float
    exact_equal: bool

    def to_dict(self) -> dict:
        return asdict(self)


def compare_reports(a: MetricsReport, b: MetricsReport) -> DeltaReport:
    if a.label_names != b.label_names:
        raise ValueError(f"label sets differ: {a.label_names} vs {b.label_names}")
    per_class = {}
    deltas = [a.accuracy - b.accuracy]
    for ca, cb in zip(a.per_class, b.per_class):
        row = {k: getattr(ca, k) - getattr(cb, k) for k in _AVG_KEYS}
        row["support"] = ca.support - cb.support
        per_class[ca.label_name] = row
        deltas.extend(row.values())
    macro = {k: a.macro_avg[k] - b.macro_avg[k] for k in _AVG_KEYS}
    weighted = {k: a.weighted_avg[k] - b.weighted_avg[k] for k in _AVG_KEYS}
    deltas.extend(macro.values())
    deltas.extend(weighted.values())
    exact = a.to_dict() == b.to_dict()
    return DeltaReport(a.accuracy - b.accuracy, macro, weighted, per_class,
                       float(max(abs(x) for x in deltas)), exact)
