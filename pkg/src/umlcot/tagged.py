"""Split raw model output into ``<think>`` / ``<answer>`` blocks."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class TaggedOutput:
    raw: str
    think: str | None
    answer: str | None

    @property
    def format_valid(self) -> bool:
        return self.think is not None and self.answer is not None


def _block(raw: str, tag: str) -> str | None:
    # first opening tag, then the first closing tag after it
    open_tag, close_tag = f"<{tag}>", f"</{tag}>"
    start = raw.find(open_tag)
    if start < 0:
        return None
    start += len(open_tag)
    end = raw.find(close_tag, start)
    if end < 0:
        return None
    return raw[start:end]


def extract(raw: str) -> TaggedOutput:
    """Never raises; missing or unclosed tags give an absent block."""
    return TaggedOutput(raw=raw, think=_block(raw, "think"), answer=_block(raw, "answer"))


def format_reward(raw: str) -> float:
    return 1.0 if extract(raw).format_valid else 0.0
