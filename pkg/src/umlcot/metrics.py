"""Similarity and thresholded precision/recall/F1 over match traces."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .exceptions import EmptyCorpus, InputError
from .reward import MatchTrace, RewardBreakdown

DEFAULT_THRESHOLD = 0.5

CSV_COLUMNS = (
    "id",
    "similarity",
    "precision",
    "recall",
    "success_rate",
    "f1",
    "tp",
    "fp",
    "fn",
    "format_reward",
    "accuracy_reward",
    "total",
)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return _ratio(2 * p * r, p + r)


@dataclass(frozen=True)
class InstanceMetrics:
    similarity: float
    precision: float
    recall: float
    f1: float
    tp: float
    fp: float
    fn: float
    threshold: float = DEFAULT_THRESHOLD
    matched: float = 0

    @property
    def success_rate(self) -> float:
        return self.recall

    def to_dict(self) -> dict:
        out = asdict(self)
        out["success_rate"] = self.success_rate
        return out


def _check_threshold(threshold: float) -> None:
    if not 0.0 <= threshold <= 1.0:
        raise InputError(f"threshold must lie in [0, 1], got {threshold}")


def _from_counts(sims: Sequence[float], n_gt: int, n_pred: int, threshold: float) -> InstanceMetrics:
    tp = sum(1 for s in sims if s > threshold)
    fn = n_gt - tp
    fp = n_pred - tp
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    similarity = math.fsum(sims) / len(sims) if sims else 0.0
    return InstanceMetrics(
        similarity=similarity,
        precision=precision,
        recall=recall,
        f1=_f1(precision, recall),
        tp=tp,
        fp=fp,
        fn=fn,
        threshold=threshold,
        matched=len(sims),
    )


def instance_metrics(trace: MatchTrace, threshold: float = DEFAULT_THRESHOLD) -> InstanceMetrics:
    """Pool all partitions of ``trace`` into one set of counts.

    A matched pair at or below the threshold is counted twice: its
    reference node as FN and its predicted node as FP, which keeps
    ``tp + fn`` equal to the reference node count and ``tp + fp`` equal
    to the predicted node count.
    """
    _check_threshold(threshold)
    sims = [s for _, _, s in trace.pairs]
    return _from_counts(sims, trace.total_gt_nodes, trace.total_pred_nodes, threshold)


def text_metrics(
    similarity: float, pred_present: bool, threshold: float = DEFAULT_THRESHOLD
) -> InstanceMetrics:
    """Text-mode plans compare as a single reference node against a single prediction."""
    _check_threshold(threshold)
    if not pred_present:
        return _from_counts([], 1, 0, threshold)
    return _from_counts([similarity], 1, 1, threshold)


def _mean(values: Sequence[float]) -> float:
    first = values[0]
    if all(v == first for v in values):
        return first
    return math.fsum(values) / len(values)


def aggregate(reports: Sequence[InstanceMetrics]) -> InstanceMetrics:
    """Macro average: the arithmetic mean of every field."""
    if not reports:
        raise EmptyCorpus("cannot aggregate an empty list of metrics")
    return InstanceMetrics(
        similarity=_mean([r.similarity for r in reports]),
        precision=_mean([r.precision for r in reports]),
        recall=_mean([r.recall for r in reports]),
        f1=_mean([r.f1 for r in reports]),
        tp=_mean([r.tp for r in reports]),
        fp=_mean([r.fp for r in reports]),
        fn=_mean([r.fn for r in reports]),
        threshold=_mean([r.threshold for r in reports]),
        matched=_mean([r.matched for r in reports]),
    )


def micro_counts(reports: Sequence[InstanceMetrics]) -> dict:
    tp = sum(r.tp for r in reports)
    fp = sum(r.fp for r in reports)
    fn = sum(r.fn for r in reports)
    matched = sum(r.matched for r in reports)
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    sim_total = math.fsum(r.similarity * r.matched for r in reports)
    return {
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "precision": precision,
        "recall": recall,
        "success_rate": recall,
        "f1": _f1(precision, recall),
        "similarity": _ratio(sim_total, matched),
    }


@dataclass(frozen=True)
class InstanceResult:
    id: str
    metrics: InstanceMetrics
    reward: RewardBreakdown


@dataclass(frozen=True)
class CorpusReport:
    per_instance: tuple[InstanceResult, ...]
    aggregate: InstanceMetrics
    micro: dict
    reward_means: dict
    count: int
    config: dict = field(default_factory=dict)

    @classmethod
    def build(cls, results: Sequence[InstanceResult], config: dict | None = None) -> "CorpusReport":
        if not results:
            raise EmptyCorpus("corpus has no instances")
        ordered = tuple(sorted(results, key=lambda r: r.id))
        metrics = [r.metrics for r in ordered]
        rewards = [r.reward for r in ordered]
        return cls(
            per_instance=ordered,
            aggregate=aggregate(metrics),
            micro=micro_counts(metrics),
            reward_means={
                "format_reward": _mean([r.format_reward for r in rewards]),
                "accuracy_reward": _mean([r.accuracy_reward for r in rewards]),
                "total": _mean([r.total for r in rewards]),
            },
            count=len(ordered),
            config=dict(config or {}),
        )

    def to_dict(self, include_traces: bool = False) -> dict:
        return {
            "count": self.count,
            "config": self.config,
            "aggregate": self.aggregate.to_dict(),
            "micro": self.micro,
            "reward_means": self.reward_means,
            "per_instance": [
                {
                    "id": r.id,
                    "metrics": r.metrics.to_dict(),
                    "reward": r.reward.to_dict(include_trace=include_traces),
                }
                for r in self.per_instance
            ],
        }

    def to_json(self, include_traces: bool = False) -> str:
        return json.dumps(self.to_dict(include_traces), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.per_instance:
            m = r.metrics
            writer.writerow(
                [
                    r.id,
                    repr(m.similarity),
                    repr(m.precision),
                    repr(m.recall),
                    repr(m.success_rate),
                    repr(m.f1),
                    m.tp,
                    m.fp,
                    m.fn,
                    repr(r.reward.format_reward),
                    repr(r.reward.accuracy_reward),
                    repr(r.reward.total),
                ]
            )
        return buf.getvalue()
