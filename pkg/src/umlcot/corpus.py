"""JSONL corpora, run configuration and whole-corpus evaluation.

A corpus line looks like::

    {"id": "scene-001",
     "reference": {"format": "uml", "content": "@startuml ... @enduml"},
     "prediction": "<think>...</think><answer>...</answer>",
     "meta": {"scene": "bedroom"}}

Configuration values are resolved with the precedence
command line > config file > environment > built-in default.  The config
file is a flat ``key = value`` document (``#`` starts a comment)::

    embedder = builtin
    threshold = 0.5
    epsilon = 1e-4
"""

from __future__ import annotations

import configparser
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping

from .embed import ENDPOINT_ENV, EmbedderConfig
from .exceptions import DuplicateId, InputError, InvalidReference, MalformedLine
from .grpo import DEFAULT_EPSILON, DEFAULT_GROUP_SIZE
from .metrics import DEFAULT_THRESHOLD, CorpusReport, InstanceResult, instance_metrics, text_metrics
from .reward import MODES, as_reference_diagram, total_reward
from .tagged import extract
from .uml import ActivityDiagram

ENV_PREFIX = "UMLCOT_"


@dataclass(frozen=True)
class Reference:
    format: str
    content: str


@dataclass(frozen=True)
class CorpusInstance:
    id: str
    reference: Reference
    prediction: str
    meta: dict[str, str] = field(default_factory=dict)
    diagram: ActivityDiagram | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "id": self.id,
            "reference": {"format": self.reference.format, "content": self.reference.content},
            "prediction": self.prediction,
        }
        if self.meta:
            out["meta"] = dict(self.meta)
        return out


def _instance_from_record(record: Any, line: int) -> CorpusInstance:
    if not isinstance(record, dict):
        raise MalformedLine(line, "expected a JSON object")
    for key in ("id", "reference", "prediction"):
        if key not in record:
            raise MalformedLine(line, f"missing {key!r} field")
    inst_id, ref, pred = record["id"], record["reference"], record["prediction"]
    if not isinstance(inst_id, str) or not inst_id:
        raise MalformedLine(line, "'id' must be a non-empty string")
    if not isinstance(pred, str):
        raise MalformedLine(line, "'prediction' must be a string")
    if not isinstance(ref, dict):
        raise MalformedLine(line, "'reference' must be an object with 'format' and 'content'")
    fmt, content = ref.get("format"), ref.get("content")
    if fmt not in MODES:
        raise MalformedLine(line, f"reference format must be one of {MODES}, got {fmt!r}")
    if not isinstance(content, str) or not content.strip():
        raise MalformedLine(line, "reference content must be a non-empty string")

    meta = record.get("meta") or {}
    if not isinstance(meta, dict):
        raise MalformedLine(line, "'meta' must be an object")
    clean_meta = {}
    for k, v in meta.items():
        if isinstance(v, (dict, list)) or v is None:
            raise MalformedLine(line, f"meta value for {k!r} must be a scalar")
        clean_meta[str(k)] = v if isinstance(v, str) else json.dumps(v)

    diagram = None
    if fmt == "uml":
        try:
            diagram = as_reference_diagram(content)
        except InvalidReference as exc:
            raise MalformedLine(line, f"reference: {exc}") from exc
    return CorpusInstance(inst_id, Reference(fmt, content), pred, clean_meta, diagram)


def parse_corpus_lines(lines: Iterable[str]) -> list[CorpusInstance]:
    instances: list[CorpusInstance] = []
    seen: set[str] = set()
    for lineno, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            record = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedLine(lineno, f"invalid JSON: {exc.msg}") from exc
        inst = _instance_from_record(record, lineno)
        if inst.id in seen:
            raise DuplicateId(lineno, inst.id)
        seen.add(inst.id)
        instances.append(inst)
    return instances


def load_corpus(path: str | os.PathLike) -> list[CorpusInstance]:
    """Read and validate a JSONL corpus, failing on the first bad line."""
    with open(path, encoding="utf-8") as fh:
        return parse_corpus_lines(fh)


def write_corpus(instances: Iterable[CorpusInstance], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class RunConfig:
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    threshold: float = DEFAULT_THRESHOLD
    epsilon: float = DEFAULT_EPSILON
    group_size: int = DEFAULT_GROUP_SIZE
    mode: str | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise InputError(f"threshold must lie in [0, 1], got {self.threshold}")
        if not self.epsilon > 0:
            raise InputError(f"epsilon must be positive, got {self.epsilon}")
        if self.group_size < 2:
            raise InputError(f"group_size must be >= 2, got {self.group_size}")
        if self.mode is not None and self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {self.mode!r}")

    def to_dict(self) -> dict:
        return {
            "embedder": self.embedder.backend,
            "endpoint": self.embedder.endpoint,
            "dimension": self.embedder.dimension,
            "threshold": self.threshold,
            "epsilon": self.epsilon,
            "group_size": self.group_size,
            "mode": self.mode,
            "seed": self.seed,
        }


# key -> parser; "embedder" is the backend name
_CONFIG_KEYS = {
    "embedder": str,
    "endpoint": str,
    "dimension": int,
    "timeout_ms": int,
    "batch_size": int,
    "threshold": float,
    "epsilon": float,
    "group_size": int,
    "mode": str,
    "seed": int,
}


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    try:
        parser.read_string("[run]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise InputError(f"cannot parse config file {path}: {exc}") from exc
    values = dict(parser["run"])
    unknown = sorted(set(values) - set(_CONFIG_KEYS))
    if unknown:
        raise InputError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return values


def _env_values(env: Mapping[str, str]) -> dict[str, str]:
    values = {}
    for key in _CONFIG_KEYS:
        name = ENV_PREFIX + key.upper()
        if env.get(name):
            values[key] = env[name]
    if env.get(ENDPOINT_ENV):
        values["endpoint"] = env[ENDPOINT_ENV]
    return values


def _convert(key: str, value: Any) -> Any:
    if isinstance(value, str):
        try:
            return _CONFIG_KEYS[key](value.strip())
        except ValueError as exc:
            raise InputError(f"bad value for {key}: {value!r}") from exc
    return value


def resolve_config(
    cli: Mapping[str, Any] | None = None,
    config_file: str | os.PathLike | None = None,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    """Merge settings: ``cli`` beats ``config_file`` beats ``env``.

    ``None`` values in ``cli`` mean "not given".
    """
    env = os.environ if env is None else env
    merged: dict[str, Any] = dict(_env_values(env))
    if config_file is not None:
        merged.update(read_config_file(config_file))
    merged.update({k: v for k, v in (cli or {}).items() if v is not None})
    unknown = sorted(set(merged) - set(_CONFIG_KEYS))
    if unknown:
        raise InputError(f"unknown settings: {', '.join(unknown)}")
    values = {k: _convert(k, v) for k, v in merged.items()}

    backend = values.pop("embedder", "builtin")
    endpoint = values.pop("endpoint", None)
    emb_kwargs = {k: values.pop(k) for k in ("dimension", "timeout_ms", "batch_size") if k in values}
    embedder = EmbedderConfig(
        backend=backend, endpoint=endpoint if backend == "service" else None, **emb_kwargs
    )
    names = {f.name for f in fields(RunConfig)}
    return RunConfig(embedder=embedder, **{k: v for k, v in values.items() if k in names})


# --------------------------------------------------------------------------
# Evaluation


def score_instance(inst: CorpusInstance, cfg: RunConfig) -> InstanceResult:
    mode = cfg.mode or inst.reference.format
    if mode == "uml":
        reference = inst.diagram if inst.diagram is not None else inst.reference.content
        reward = total_reward(inst.prediction, reference, "uml", cfg.embedder)
        metrics = instance_metrics(reward.trace, cfg.threshold)
    else:
        reward = total_reward(inst.prediction, inst.reference.content, "text", cfg.embedder)
        answer = extract(inst.prediction).answer
        present = answer is not None and bool(answer.strip())
        metrics = text_metrics(reward.accuracy_reward, present, cfg.threshold)
    return InstanceResult(inst.id, metrics, reward)


def evaluate_corpus(
    instances: Iterable[CorpusInstance], cfg: RunConfig | None = None, jobs: int = 1
) -> CorpusReport:
    """Score every instance; the report is ordered by instance id."""
    cfg = cfg or RunConfig()
    instances = list(instances)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda inst: score_instance(inst, cfg), instances))
    else:
        results = [score_instance(inst, cfg) for inst in instances]
    return CorpusReport.build(results, cfg.to_dict())
