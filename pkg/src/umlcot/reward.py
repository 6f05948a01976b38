"""Plan rewards: format + accuracy, with per-partition greedy node matching.

In UML mode the reference and predicted activity diagrams are split into
three canonical partitions.  Inside each partition every reference node is
greedily paired (one-to-one, highest cosine first) with a predicted node;
the accuracy is the sum of paired similarities divided by the number of
reference nodes, so reference nodes left unpaired, or living in a
partition the prediction omits, count as 0.0.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .embed import Embedder, EmbedderConfig, cosine, resolve_embedder, similarity_matrix
from .exceptions import InvalidReference, ParseError
from .tagged import extract, format_reward
from .uml import ActivityDiagram, check_markers, parse_activity

MESSY_AREAS = "messy_areas"
PRIORITY_ORDER = "priority_order"
CLEANING_STEPS = "cleaning_steps"
CANONICAL_PARTITIONS = (MESSY_AREAS, PRIORITY_ORDER, CLEANING_STEPS)

_PREFIXES = (
    ("main messy areas", MESSY_AREAS),
    ("cleaning priority order", PRIORITY_ORDER),
    ("specific cleaning steps", CLEANING_STEPS),
)
_ENUMERATOR = re.compile(r"^\(?\d+[.)]\s*")
_TRAILING_PUNCT = re.compile(r"[\s.,;:!?\-]+$")

MODES = ("uml", "text")

EmbedderLike = Union[EmbedderConfig, Embedder, None]


def canonical_partition(name: str) -> str | None:
    """Map a partition title to one of the three canonical ids, or None."""
    text = " ".join(name.lower().split())
    text = _ENUMERATOR.sub("", text)
    text = _TRAILING_PUNCT.sub("", text)
    for prefix, ident in _PREFIXES:
        if text.startswith(prefix):
            return ident
    return None


@dataclass(frozen=True)
class PartitionMatch:
    pairs: tuple[tuple[int, int, float], ...] = ()
    unmatched_gt: tuple[int, ...] = ()
    unmatched_pred: tuple[int, ...] = ()
    partition_missing_in_pred: bool = False
    gt_labels: tuple[str, ...] = ()
    pred_labels: tuple[str, ...] = ()

    @property
    def n_gt(self) -> int:
        return len(self.pairs) + len(self.unmatched_gt)

    @property
    def n_pred(self) -> int:
        return len(self.pairs) + len(self.unmatched_pred)

    def to_dict(self) -> dict:
        return {
            "pairs": [[i, j, s] for i, j, s in self.pairs],
            "unmatched_gt": list(self.unmatched_gt),
            "unmatched_pred": list(self.unmatched_pred),
            "partition_missing_in_pred": self.partition_missing_in_pred,
            "gt_labels": list(self.gt_labels),
            "pred_labels": list(self.pred_labels),
        }


@dataclass(frozen=True)
class MatchTrace:
    """Per-partition matches for one prediction.

    ``extra_pred_nodes`` counts predicted nodes outside the canonical
    partitions; they never match but are false positives in metrics.
    """

    per_partition: dict[str, PartitionMatch]
    total_gt_nodes: int
    total_pred_nodes: int
    extra_pred_nodes: int = 0
    error: str | None = None

    @property
    def pairs(self) -> list[tuple[int, int, float]]:
        return [p for pid in CANONICAL_PARTITIONS for p in self.per_partition[pid].pairs]

    def to_dict(self) -> dict:
        return {
            "per_partition": {pid: self.per_partition[pid].to_dict() for pid in CANONICAL_PARTITIONS},
            "total_gt_nodes": self.total_gt_nodes,
            "total_pred_nodes": self.total_pred_nodes,
            "extra_pred_nodes": self.extra_pred_nodes,
            "error": self.error,
        }


@dataclass(frozen=True)
class RewardBreakdown:
    format_reward: float
    accuracy_reward: float
    mode: str
    trace: MatchTrace | None = None
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", self.format_reward + self.accuracy_reward)

    def to_dict(self, include_trace: bool = True) -> dict:
        out = {
            "format_reward": self.format_reward,
            "accuracy_reward": self.accuracy_reward,
            "total": self.total,
            "mode": self.mode,
        }
        if include_trace:
            out["trace"] = self.trace.to_dict() if self.trace is not None else None
        return out


# --------------------------------------------------------------------------
# Matching


def greedy_match(sim, n_gt: int | None = None, n_pred: int | None = None) -> PartitionMatch:
    """Greedy one-to-one matching on a ``n_gt x n_pred`` similarity matrix.

    Cells are visited by descending similarity, ties by row then column;
    a cell is taken when both its row and column are still free.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if n_gt is None or n_pred is None:
        n_gt, n_pred = sim.shape if sim.ndim == 2 else (0, 0)
    if sim.size and sim.shape != (n_gt, n_pred):
        raise ValueError(f"similarity matrix has shape {sim.shape}, expected {(n_gt, n_pred)}")

    pairs = []
    if n_gt and n_pred:
        rows, cols = np.divmod(np.arange(n_gt * n_pred), n_pred)
        # lexsort: last key is primary
        order = np.lexsort((cols, rows, -sim.ravel()))
        used_gt = np.zeros(n_gt, dtype=bool)
        used_pred = np.zeros(n_pred, dtype=bool)
        limit = min(n_gt, n_pred)
        for cell in order:
            i, j = int(rows[cell]), int(cols[cell])
            if used_gt[i] or used_pred[j]:
                continue
            used_gt[i] = used_pred[j] = True
            pairs.append((i, j, float(sim[i, j])))
            if len(pairs) == limit:
                break
    matched_gt = {i for i, _, _ in pairs}
    matched_pred = {j for _, j, _ in pairs}
    return PartitionMatch(
        pairs=tuple(pairs),
        unmatched_gt=tuple(i for i in range(n_gt) if i not in matched_gt),
        unmatched_pred=tuple(j for j in range(n_pred) if j not in matched_pred),
    )


# --------------------------------------------------------------------------
# References


def canonical_nodes(diagram: ActivityDiagram) -> tuple[dict[str, list[str]], int]:
    """Labels per canonical partition, plus the count of all other nodes.

    Partitions whose titles map to the same canonical id are merged in
    source order.  Canonical ids absent from the diagram are absent from
    the returned mapping.
    """
    grouped: dict[str, list[str]] = {}
    other = len(diagram.orphan_nodes)
    for p in diagram.partitions:
        ident = canonical_partition(p.name)
        if ident is None:
            other += len(p.nodes)
        else:
            grouped.setdefault(ident, []).extend(p.labels)
    return grouped, other


def as_reference_diagram(reference: ActivityDiagram | str) -> ActivityDiagram:
    if isinstance(reference, ActivityDiagram):
        diagram = reference
    else:
        try:
            diagram = parse_activity(reference)
        except ParseError as exc:
            raise InvalidReference(f"reference does not parse: {exc}") from exc
    grouped, _ = canonical_nodes(diagram)
    if not any(grouped.values()):
        raise InvalidReference("reference has no nodes in the canonical partitions")
    return diagram


def _unscored_trace(ref_nodes: dict[str, list[str]], error: str) -> MatchTrace:
    per = {}
    for pid in CANONICAL_PARTITIONS:
        labels = ref_nodes.get(pid, [])
        per[pid] = PartitionMatch(
            unmatched_gt=tuple(range(len(labels))),
            partition_missing_in_pred=True,
            gt_labels=tuple(labels),
        )
    total = sum(len(v) for v in ref_nodes.values())
    return MatchTrace(per, total_gt_nodes=total, total_pred_nodes=0, error=error)


def match_diagrams(
    reference: ActivityDiagram, prediction: ActivityDiagram, embedder: EmbedderLike = None
) -> MatchTrace:
    enc = resolve_embedder(embedder)
    ref_nodes, _ = canonical_nodes(reference)
    pred_nodes, extra = canonical_nodes(prediction)

    # one embedding call for every label that takes part in a comparison
    texts: list[str] = []
    for pid in CANONICAL_PARTITIONS:
        if ref_nodes.get(pid) and pred_nodes.get(pid):
            texts.extend(ref_nodes[pid])
            texts.extend(pred_nodes[pid])
    vectors = iter(enc.embed(texts) if texts else [])

    per = {}
    for pid in CANONICAL_PARTITIONS:
        gt = ref_nodes.get(pid, [])
        pred = pred_nodes.get(pid)
        if pred is None:
            per[pid] = PartitionMatch(
                unmatched_gt=tuple(range(len(gt))),
                partition_missing_in_pred=True,
                gt_labels=tuple(gt),
            )
            continue
        if gt and pred:
            gt_vecs = [next(vectors) for _ in gt]
            pred_vecs = [next(vectors) for _ in pred]
            sim = np.clip(similarity_matrix(gt_vecs, pred_vecs), 0.0, 1.0)
        else:
            sim = np.zeros((len(gt), len(pred)))
        m = greedy_match(sim, len(gt), len(pred))
        per[pid] = PartitionMatch(
            pairs=m.pairs,
            unmatched_gt=m.unmatched_gt,
            unmatched_pred=m.unmatched_pred,
            gt_labels=tuple(gt),
            pred_labels=tuple(pred),
        )
    return MatchTrace(
        per,
        total_gt_nodes=sum(len(v) for v in ref_nodes.values()),
        total_pred_nodes=prediction.node_count,
        extra_pred_nodes=extra,
    )


def trace_accuracy(trace: MatchTrace) -> float:
    if trace.total_gt_nodes == 0:
        return 0.0
    total = math.fsum(max(0.0, s) for _, _, s in trace.pairs)
    return min(1.0, max(0.0, total / trace.total_gt_nodes))


def accuracy_reward_uml(
    reference: ActivityDiagram | str, pred_answer: str, embedder: EmbedderLike = None
) -> tuple[float, MatchTrace]:
    ref = as_reference_diagram(reference)
    ref_nodes, _ = canonical_nodes(ref)
    if not check_markers(pred_answer):
        return 0.0, _unscored_trace(ref_nodes, "missing @startuml/@enduml markers")
    try:
        pred = parse_activity(pred_answer)
    except ParseError as exc:
        return 0.0, _unscored_trace(ref_nodes, f"{type(exc).__name__}: {exc}")
    trace = match_diagrams(ref, pred, embedder)
    return trace_accuracy(trace), trace


def accuracy_reward_text(ref_plan: str, pred_answer: str, embedder: EmbedderLike = None) -> float:
    if not ref_plan.strip():
        raise InvalidReference("reference plan is empty")
    ref_vec, pred_vec = resolve_embedder(embedder).embed([ref_plan, pred_answer])
    return min(1.0, max(0.0, cosine(ref_vec, pred_vec)))


def total_reward(
    raw_output: str,
    reference: ActivityDiagram | str,
    mode: str = "uml",
    embedder: EmbedderLike = None,
) -> RewardBreakdown:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    fmt = format_reward(raw_output)
    answer = extract(raw_output).answer
    if mode == "uml":
        ref = as_reference_diagram(reference)
        if answer is None:
            ref_nodes, _ = canonical_nodes(ref)
            return RewardBreakdown(fmt, 0.0, mode, _unscored_trace(ref_nodes, "no <answer> block"))
        acc, trace = accuracy_reward_uml(ref, answer, embedder)
        return RewardBreakdown(fmt, acc, mode, trace)

    if not isinstance(reference, str):
        raise InvalidReference("text mode needs a plain-text reference")
    if not reference.strip():
        raise InvalidReference("reference plan is empty")
    acc = 0.0 if answer is None else accuracy_reward_text(reference, answer, embedder)
    return RewardBreakdown(fmt, acc, mode)


def score_outputs(
    outputs: Sequence[str],
    reference: ActivityDiagram | str,
    mode: str = "uml",
    embedder: EmbedderLike = None,
) -> list[RewardBreakdown]:
    """Rewards for a group of candidate outputs against one reference."""
    if mode == "uml":
        reference = as_reference_diagram(reference)
    return [total_reward(o, reference, mode, embedder) for o in outputs]
