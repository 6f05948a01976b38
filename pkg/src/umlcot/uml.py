"""Parser and canonical renderer for the PlantUML subset used by plans.

Two diagram kinds are supported: activity diagrams (the plan, organised
into named partitions of ``:label;`` nodes) and class diagrams (the
reasoning sketch: classes, members and relations).

Parsing is lenient about lines it does not understand; those are skipped
and recorded in ``warnings`` so that scoring stays total over imperfect
model output.  Structural errors (missing markers, unbalanced braces,
unterminated nodes) raise.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .exceptions import MissingMarkers, UnbalancedBraces, UnterminatedNode

__all__ = [
    "ActivityNode",
    "ControlConstruct",
    "Partition",
    "ActivityDiagram",
    "ClassDecl",
    "Relation",
    "ClassDiagram",
    "CONTROL_KINDS",
    "RELATION_ARROWS",
    "check_markers",
    "parse_activity",
    "parse_class",
    "render_activity",
    "render_class",
]

START_MARKER = "@startuml"
END_MARKER = "@enduml"

CONTROL_KINDS = ("if", "else", "endif", "while", "endwhile", "fork", "join")

# kind name -> arrow as written
RELATION_ARROWS = {
    "association": "-->",
    "inheritance": "--|>",
    "aggregation": "o--",
    "composition": "*--",
    "plain": "--",
}
_ARROW_KINDS = {v: k for k, v in RELATION_ARROWS.items()}

_WS = re.compile(r"\s+")


def _collapse(text: str) -> str:
    return _WS.sub(" ", text).strip()


# --------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class ActivityNode:
    label: str


@dataclass(frozen=True)
class ControlConstruct:
    """A retained control-flow line.

    ``index`` is the number of nodes of the owning scope that precede the
    construct, so rendering can put it back between the right nodes.
    """

    kind: str
    condition: str | None = None
    index: int = 0


@dataclass(frozen=True)
class Partition:
    name: str
    nodes: tuple[ActivityNode, ...] = ()
    controls: tuple[ControlConstruct, ...] = ()

    @property
    def labels(self) -> list[str]:
        return [n.label for n in self.nodes]


@dataclass(frozen=True)
class ActivityDiagram:
    partitions: tuple[Partition, ...] = ()
    has_start: bool = False
    has_stop: bool = False
    orphan_nodes: tuple[ActivityNode, ...] = ()
    orphan_controls: tuple[ControlConstruct, ...] = ()
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def node_count(self) -> int:
        return len(self.orphan_nodes) + sum(len(p.nodes) for p in self.partitions)

    def partition(self, name: str) -> Partition | None:
        for p in self.partitions:
            if p.name == name:
                return p
        return None

    def to_dict(self) -> dict:
        return {
            "kind": "activity",
            "has_start": self.has_start,
            "has_stop": self.has_stop,
            "orphan_nodes": [n.label for n in self.orphan_nodes],
            "orphan_controls": [_control_dict(c) for c in self.orphan_controls],
            "partitions": [
                {
                    "name": p.name,
                    "nodes": p.labels,
                    "controls": [_control_dict(c) for c in p.controls],
                }
                for p in self.partitions
            ],
            "warnings": list(self.warnings),
        }


def _control_dict(c: ControlConstruct) -> dict:
    return {"kind": c.kind, "condition": c.condition, "index": c.index}


@dataclass(frozen=True)
class ClassDecl:
    name: str
    members: tuple[str, ...] = ()
    implicit: bool = False


@dataclass(frozen=True)
class Relation:
    source: str
    target: str
    kind: str
    label: str | None = None


@dataclass(frozen=True)
class ClassDiagram:
    classes: tuple[ClassDecl, ...] = ()
    relations: tuple[Relation, ...] = ()
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def get(self, name: str) -> ClassDecl | None:
        for c in self.classes:
            if c.name == name:
                return c
        return None

    def to_dict(self) -> dict:
        return {
            "kind": "class",
            "classes": [
                {"name": c.name, "members": list(c.members), "implicit": c.implicit}
                for c in self.classes
            ],
            "relations": [
                {"source": r.source, "target": r.target, "kind": r.kind, "label": r.label}
                for r in self.relations
            ],
            "warnings": list(self.warnings),
        }


# --------------------------------------------------------------------------
# Markers


def check_markers(source: str) -> bool:
    """True iff ``@startuml`` occurs and a later ``@enduml`` follows it."""
    start = source.find(START_MARKER)
    if start < 0:
        return False
    return source.find(END_MARKER, start + len(START_MARKER)) >= 0


def _diagram_body(source: str) -> str:
    start = source.find(START_MARKER)
    if start < 0:
        raise MissingMarkers("no @startuml marker")
    begin = start + len(START_MARKER)
    end = source.find(END_MARKER, begin)
    if end < 0:
        raise MissingMarkers("no @enduml after @startuml")
    return source[begin:end]


# --------------------------------------------------------------------------
# Activity diagrams

_PARTITION_RE = re.compile(r'partition\s+(?:"([^"\n]*)"|([^{"\n]*?))\s*\{')
_IF_RE = re.compile(r"if\s*\((.*)\)\s*then\b(?:\s*\([^)\n]*\))?")
_ELSEIF_RE = re.compile(r"(?:elseif|else\s+if)\b")
_ELSE_RE = re.compile(r"else\b(?:\s*\(([^)\n]*)\))?")
_ENDIF_RE = re.compile(r"endif\b")
_WHILE_IS_RE = re.compile(r"while\s*\((.*)\)\s*is\s*\([^)\n]*\)")
_WHILE_RE = re.compile(r"while\s*\((.*)\)")
_ENDWHILE_RE = re.compile(r"endwhile\b(?:\s*\(([^)\n]*)\))?")
_FORK_AGAIN_RE = re.compile(r"fork\s+again\b")
_FORK_RE = re.compile(r"fork\b")
_JOIN_RE = re.compile(r"(?:join|end\s+fork|end\s+merge)\b")
_START_RE = re.compile(r"start\b")
_STOP_RE = re.compile(r"(?:stop|end)\b")
_ARROW_RE = re.compile(r"-+(?:\[[^\]\n]*\]-*)?>")

_OPENERS = {"endif": ("if",), "else": ("if",), "endwhile": ("while",), "join": ("fork",)}
# constructs that continue an open block without closing it
_CONTINUATIONS = {"else", "fork again"}


class _Scope:
    """One entry of the brace stack: either a partition or anonymous."""

    __slots__ = ("partition",)

    def __init__(self, partition: str | None):
        self.partition = partition


class _PartitionBuilder:
    __slots__ = ("name", "nodes", "controls", "open_controls")

    def __init__(self, name: str | None):
        self.name = name
        self.nodes: list[ActivityNode] = []
        self.controls: list[ControlConstruct] = []
        self.open_controls: list[str] = []


def _line_end(text: str, pos: int) -> int:
    nl = text.find("\n", pos)
    return len(text) if nl < 0 else nl


def parse_activity(source: str) -> ActivityDiagram:
    """Parse an activity diagram.

    Partition bodies are delimited with a nesting counter: any ``{`` seen
    inside a partition opens an anonymous scope, and nodes found there
    still belong to the innermost enclosing partition.
    """
    body = _diagram_body(source)
    n = len(body)
    pos = 0
    at_line_start = True

    stack: list[_Scope] = []
    builders: dict[str, _PartitionBuilder] = {}
    orphans = _PartitionBuilder(None)
    has_start = has_stop = False
    warnings: list[str] = []

    def current() -> _PartitionBuilder:
        for scope in reversed(stack):
            if scope.partition is not None:
                return builders[scope.partition]
        return orphans

    def add_control(kind: str, condition: str | None) -> None:
        # "fork again" is stored as kind "fork" with condition "again"
        owner = current()
        key = "fork again" if (kind, condition) == ("fork", "again") else kind
        if key in _OPENERS or key in _CONTINUATIONS:
            opener = ("fork",) if key == "fork again" else _OPENERS[key]
            if not owner.open_controls or owner.open_controls[-1] not in opener:
                warnings.append(f"'{key}' without matching opener ignored")
                return
            if key not in _CONTINUATIONS:
                owner.open_controls.pop()
        else:
            owner.open_controls.append(kind)
        owner.controls.append(ControlConstruct(kind, condition or None, len(owner.nodes)))

    while pos < n:
        ch = body[pos]
        if ch == "\n":
            at_line_start = True
            pos += 1
            continue
        if ch.isspace():
            pos += 1
            continue

        if body.startswith("/'", pos):
            close = body.find("'/", pos + 2)
            pos = n if close < 0 else close + 2
            continue
        if ch == "'" and at_line_start:
            pos = _line_end(body, pos)
            continue
        at_line_start = False

        if ch == ":":
            semi = body.find(";", pos + 1)
            if semi < 0:
                raise UnterminatedNode(f"node starting at offset {pos} has no closing ';'")
            label = _collapse(body[pos + 1 : semi])
            if label:
                current().nodes.append(ActivityNode(label))
            else:
                warnings.append("empty activity node ignored")
            pos = semi + 1
            continue
        if ch == "{":
            stack.append(_Scope(None))
            pos += 1
            continue
        if ch == "}":
            if not stack:
                raise UnbalancedBraces(f"unmatched '}}' at offset {pos}")
            stack.pop()
            pos += 1
            continue

        seg = body[pos : _line_end(body, pos)]
        m = _PARTITION_RE.match(seg)
        if m:
            name = _collapse(m.group(1) if m.group(1) is not None else m.group(2))
            if name:
                if name not in builders:
                    builders[name] = _PartitionBuilder(name)
                stack.append(_Scope(name))
            else:
                warnings.append("partition with empty name treated as plain block")
                stack.append(_Scope(None))
            pos += m.end()
            continue

        m = _IF_RE.match(seg)
        if m:
            add_control("if", _collapse(m.group(1)))
            pos += m.end()
            continue
        if _ELSEIF_RE.match(seg):
            warnings.append(f"unsupported line skipped: {seg.strip()!r}")
            pos += len(seg)
            continue
        m = _ELSE_RE.match(seg)
        if m:
            add_control("else", _collapse(m.group(1) or ""))
            pos += m.end()
            continue
        m = _ENDIF_RE.match(seg)
        if m:
            add_control("endif", None)
            pos += m.end()
            continue
        m = _WHILE_IS_RE.match(seg) or _WHILE_RE.match(seg)
        if m:
            add_control("while", _collapse(m.group(1)))
            pos += m.end()
            continue
        m = _ENDWHILE_RE.match(seg)
        if m:
            add_control("endwhile", _collapse(m.group(1) or ""))
            pos += m.end()
            continue
        m = _FORK_AGAIN_RE.match(seg)
        if m:
            add_control("fork", "again")
            pos += m.end()
            continue
        m = _FORK_RE.match(seg)
        if m:
            add_control("fork", None)
            pos += m.end()
            continue
        m = _JOIN_RE.match(seg)
        if m:
            add_control("join", None)
            pos += m.end()
            continue
        m = _START_RE.match(seg)
        if m:
            has_start = True
            pos += m.end()
            continue
        m = _STOP_RE.match(seg)
        if m:
            has_stop = True
            pos += m.end()
            continue
        if _ARROW_RE.match(seg):
            pos += len(seg)
            continue

        # Unknown text: skip it but keep any braces so nesting stays counted.
        stop = len(seg)
        for i, c in enumerate(seg):
            if c in "{}":
                stop = i
                break
        warnings.append(f"unrecognized text skipped: {seg[:stop].strip()!r}")
        pos += stop

    if stack:
        raise UnbalancedBraces(f"{len(stack)} unclosed '{{' at @enduml")

    partitions = tuple(
        Partition(b.name, tuple(b.nodes), tuple(b.controls)) for b in builders.values()
    )
    return ActivityDiagram(
        partitions=partitions,
        has_start=has_start,
        has_stop=has_stop,
        orphan_nodes=tuple(orphans.nodes),
        orphan_controls=tuple(orphans.controls),
        warnings=tuple(warnings),
    )


def _render_control(c: ControlConstruct) -> str:
    if c.kind == "if":
        return f"if ({c.condition or ''}) then"
    if c.kind == "while":
        return f"while ({c.condition or ''})"
    if c.kind == "fork":
        return "fork again" if c.condition == "again" else "fork"
    if c.kind in ("else", "endwhile") and c.condition:
        return f"{c.kind} ({c.condition})"
    return c.kind


def _render_sequence(
    nodes: tuple[ActivityNode, ...], controls: tuple[ControlConstruct, ...], indent: str
) -> list[str]:
    lines = []
    pending = sorted(controls, key=lambda c: c.index)  # stable: keeps source order
    k = 0
    for i in range(len(nodes) + 1):
        while k < len(pending) and pending[k].index <= i:
            lines.append(indent + _render_control(pending[k]))
            k += 1
        if i < len(nodes):
            lines.append(f"{indent}:{nodes[i].label};")
    return lines


def render_activity(d: ActivityDiagram) -> str:
    """Canonical text for ``d``: one construct per line, LF endings."""
    lines = [START_MARKER]
    if d.has_start:
        lines.append("start")
    lines.extend(_render_sequence(d.orphan_nodes, d.orphan_controls, ""))
    for p in d.partitions:
        lines.append(f'partition "{p.name}" {{')
        lines.extend(_render_sequence(p.nodes, p.controls, "  "))
        lines.append("}")
    if d.has_stop:
        lines.append("stop")
    lines.append(END_MARKER)
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Class diagrams

_NAME = r'(?:"[^"\n]+"|[A-Za-z_][\w.]*)'
_CLASS_RE = re.compile(
    r"(?:abstract\s+class|abstract|class|interface|enum)\s+(" + _NAME + r")"
    r"(?:\s*<<[^>\n]*>>)?\s*(\{)?"
)
_RELATION_RE = re.compile(
    r"(" + _NAME + r")\s*(--\|>|-->|\*--|--)\s*(" + _NAME + r")\s*(?::\s*(.*))?$"
)
_AGGREGATION_RE = re.compile(
    r"(" + _NAME + r")\s+(o--)\s*(" + _NAME + r")\s*(?::\s*(.*))?$"
)
_IDENT_RE = re.compile(r"[A-Za-z_][\w.]*")


def _unquote(name: str) -> str:
    if len(name) >= 2 and name[0] == name[-1] == '"':
        return _collapse(name[1:-1])
    return name


def _matching_brace(text: str, open_pos: int) -> int:
    depth = 0
    for i in range(open_pos, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return i
    return -1


def parse_class(source: str) -> ClassDiagram:
    body = _diagram_body(source)
    order: list[str] = []
    members: dict[str, list[str]] = {}
    relations: list[Relation] = []
    warnings: list[str] = []
    depth = 0
    pos = 0
    n = len(body)

    while pos < n:
        end = _line_end(body, pos)
        line = body[pos:end].strip()
        if not line or line.startswith("'"):
            pos = end + 1
            continue

        m = _CLASS_RE.match(line)
        if m:
            name = _unquote(m.group(1))
            if name not in members:
                order.append(name)
                members[name] = []
            if m.group(2):
                raw_line = body[pos:end]
                open_pos = pos + len(raw_line) - len(raw_line.lstrip()) + m.start(2)
                close = _matching_brace(body, open_pos)
                if close < 0:
                    raise UnbalancedBraces(f"class {name!r} body is never closed")
                for raw in body[open_pos + 1 : close].split("\n"):
                    member = raw.strip()
                    if member and not member.startswith("'"):
                        members[name].append(member)
                rest_end = _line_end(body, close)
                trailing = body[close + 1 : rest_end].strip()
                if trailing:
                    warnings.append(f"text after class body skipped: {trailing!r}")
                pos = rest_end + 1
            else:
                pos = end + 1
            continue

        m = _RELATION_RE.match(line) or _AGGREGATION_RE.match(line)
        if m:
            label = _collapse(m.group(4)) if m.group(4) else None
            relations.append(
                Relation(_unquote(m.group(1)), _unquote(m.group(3)), _ARROW_KINDS[m.group(2)], label or None)
            )
            pos = end + 1
            continue

        if line == "}":
            if depth == 0:
                raise UnbalancedBraces("unmatched '}'")
            depth -= 1
            pos = end + 1
            continue

        opens, closes = line.count("{"), line.count("}")
        depth += opens - closes
        if depth < 0:
            raise UnbalancedBraces("unmatched '}'")
        warnings.append(f"unrecognized line skipped: {line!r}")
        pos = end + 1

    if depth:
        raise UnbalancedBraces(f"{depth} unclosed '{{' at @enduml")

    classes = [ClassDecl(name, tuple(members[name])) for name in order]
    declared = set(order)
    for r in relations:
        for endpoint in (r.source, r.target):
            if endpoint not in declared:
                declared.add(endpoint)
                classes.append(ClassDecl(endpoint, (), implicit=True))
    return ClassDiagram(tuple(classes), tuple(relations), tuple(warnings))


def _render_class_name(name: str) -> str:
    return name if _IDENT_RE.fullmatch(name) else f'"{name}"'


def render_class(d: ClassDiagram) -> str:
    lines = [START_MARKER]
    for c in d.classes:
        if c.implicit:
            continue  # re-created from the relations on re-parse
        name = _render_class_name(c.name)
        if c.members:
            lines.append(f"class {name} {{")
            lines.extend(f"  {m}" for m in c.members)
            lines.append("}")
        else:
            lines.append(f"class {name}")
    for r in d.relations:
        text = f"{_render_class_name(r.source)} {RELATION_ARROWS[r.kind]} {_render_class_name(r.target)}"
        if r.label:
            text += f" : {r.label}"
        lines.append(text)
    lines.append(END_MARKER)
    return "\n".join(lines)
