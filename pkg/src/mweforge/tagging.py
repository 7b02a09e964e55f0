"""Span <-> per-token label conversion for MWE sequence tagging.

Labels: ``O`` outside, ``B-cat`` first token of an MWE, ``I-cat`` later
member tokens, ``o-`` non-member tokens inside a discontinuous MWE's span.
MWEs without a category use the placeholder suffix ``_``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .cupt import MweInstance, Sentence

OUTSIDE = "O"
GAP = "o-"
NO_CATEGORY = "_"


class TagDecodeError(ValueError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"token {position}: {message}")


@dataclass
class Dropped:
    sentence_id: str
    mwe: MweInstance
    reason: str

    def __str__(self) -> str:
        positions = ",".join(map(str, self.mwe.token_positions))
        return f"{self.sentence_id}\t{self.mwe.category or NO_CATEGORY}\t{positions}\t{self.reason}"


@dataclass
class EncodeResult:
    labels: list[str]
    kept: list[MweInstance]
    dropped: list[Dropped] = field(default_factory=list)


def label_vocabulary(categories) -> list[str]:
    labels = [OUTSIDE, GAP]
    for cat in sorted(categories):
        labels += [f"B-{cat}", f"I-{cat}"]
    return labels


def _suffix(m: MweInstance) -> str:
    return m.category if m.category is not None else NO_CATEGORY


def select_flat(mwes: list[MweInstance]) -> tuple[list[MweInstance], list[MweInstance]]:
    """Keep MWEs whose spans do not intersect, preferring earlier then longer ones."""
    ordered = sorted(mwes, key=lambda m: (m.span[0], -(m.span[1] - m.span[0]), m.token_positions))
    kept: list[MweInstance] = []
    dropped: list[MweInstance] = []
    last_end = 0
    for m in ordered:
        if m.span[0] > last_end:
            kept.append(m)
            last_end = m.span[1]
        else:
            dropped.append(m)
    return kept, dropped


def encode_tags(sentence: Sentence) -> EncodeResult:
    n = len(sentence.tokens)
    kept, dropped = select_flat(list(sentence.mwes))
    labels = [OUTSIDE] * n
    for m in kept:
        first, last = m.span
        for p in range(first, last + 1):
            labels[p - 1] = GAP
        for j, p in enumerate(m.token_positions):
            labels[p - 1] = ("B-" if j == 0 else "I-") + _suffix(m)
    return EncodeResult(
        labels,
        [MweInstance(i, m.category, m.token_positions) for i, m in enumerate(kept, start=1)],
        [Dropped(sentence.sentence_id, m, "overlaps an earlier MWE") for m in dropped],
    )


def decode_tags(labels, *, strict: bool = False) -> list[MweInstance]:
    """Rebuild MWEs from a label sequence.

    In tolerant mode an ``I-cat`` with no open MWE of that category starts a
    new MWE and dangling ``o-`` labels are ignored; strict mode raises
    :class:`TagDecodeError` instead.
    """
    found: list[tuple[str, list[int]]] = []
    open_idx: int | None = None
    pending_gap: int | None = None

    def close(pos: int):
        nonlocal open_idx, pending_gap
        if strict and pending_gap is not None:
            raise TagDecodeError("gap label not followed by a member of its MWE", pending_gap)
        open_idx = None
        pending_gap = None

    for pos, label in enumerate(labels, start=1):
        if label == OUTSIDE:
            close(pos)
        elif label == GAP:
            if open_idx is None:
                if strict:
                    raise TagDecodeError("gap label outside any MWE", pos)
            elif pending_gap is None:
                pending_gap = pos
        elif label.startswith("B-"):
            close(pos)
            found.append((label[2:], [pos]))
            open_idx = len(found) - 1
        elif label.startswith("I-"):
            cat = label[2:]
            if open_idx is not None and found[open_idx][0] == cat:
                found[open_idx][1].append(pos)
                pending_gap = None
            else:
                if strict:
                    raise TagDecodeError(f"{label} without an open MWE of category {cat}", pos)
                close(pos)
                found.append((cat, [pos]))
                open_idx = len(found) - 1
        else:
            raise TagDecodeError(f"unknown label {label!r}", pos)
    close(len(labels) + 1)
    return [
        MweInstance(i, None if cat == NO_CATEGORY else cat, tuple(pos))
        for i, (cat, pos) in enumerate(found, start=1)
    ]
