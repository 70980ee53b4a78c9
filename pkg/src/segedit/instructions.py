"""Instruction parsing and text-to-class matching.

Turns free text like "2x large" or "this bird is red" into a structured
action plus the noun targets used to pick the object class to edit. Word
similarity runs over a pluggable embedding table so the matching space can
be swapped without touching the grammar.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import AmbiguityError, NoTargetError, ParameterError

__all__ = [
    "ActionKind",
    "Action",
    "ParsedInstruction",
    "EmbeddingTable",
    "TargetSelection",
    "parse_instruction",
    "cosine_similarity",
    "select_target_class",
    "DEFAULT_NOUNS",
]


class ActionKind(Enum):
    ATTRIBUTE = "attribute"
    RESIZE = "resize"
    REMOVE = "remove"
    BACKGROUND_SWAP = "background_swap"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    factor: float | None = None  # only for RESIZE, linear scale > 0

    def __post_init__(self):
        if self.kind is ActionKind.RESIZE:
            if self.factor is None or self.factor <= 0:
                raise ParameterError("resize factor must be a positive real")
        elif self.factor is not None:
            raise ParameterError(f"{self.kind.value} takes no factor")

    @staticmethod
    def attribute() -> "Action":
        return Action(ActionKind.ATTRIBUTE)

    @staticmethod
    def resize(factor: float) -> "Action":
        return Action(ActionKind.RESIZE, float(factor))

    @staticmethod
    def remove() -> "Action":
        return Action(ActionKind.REMOVE)

    @staticmethod
    def background_swap() -> "Action":
        return Action(ActionKind.BACKGROUND_SWAP)


# Nouns recognized without a backend-supplied lexicon. Covers the synthetic
# vocabulary plus common object words so attribute instructions parse usefully
# out of the box. Extend via the ``lexicon`` argument or a lexicon file.
DEFAULT_NOUNS = frozenset(
    {
        "circle", "square", "triangle", "shape", "object",
        "background", "sky", "ground",
        "bird", "beak", "belly", "wing", "wings", "tail", "head", "eye", "eyes",
        "breast", "feathers", "crown",
        "book", "dog", "cat", "puppy", "kitten", "car", "tree", "flower",
        "person", "man", "woman", "horse", "cow", "sheep", "boat", "plane",
        "train", "bus", "table", "chair", "bottle", "cup", "ball",
    }
)

_WORD_RE = re.compile(r"[0-9]*\.?[0-9]+x?|[a-z]+(?:'[a-z]+)?", re.UNICODE)
_RESIZE_NUM_RE = re.compile(r"^([0-9]*\.?[0-9]+)x$")
_GROW_WORDS = {"large", "larger", "big", "bigger"}
_SHRINK_WORDS = {"small", "smaller"}
_BACKGROUND_PHRASE = ("change", "the", "background")


@dataclass(frozen=True)
class ParsedInstruction:
    """Structured form of a raw instruction string."""

    raw: str
    tokens: tuple[str, ...]
    nouns: tuple[str, ...]
    action: Action
    descriptive_text: str

    def descriptive_tokens(self) -> tuple[str, ...]:
        return _tokenize(self.descriptive_text)


def _tokenize(raw: str) -> tuple[str, ...]:
    return tuple(_WORD_RE.findall(raw.lower()))


def _find_actions(tokens: Sequence[str]) -> list[tuple[Action, set[int]]]:
    """All keyword-rule matches with the token indices they consume."""
    matches: list[tuple[Action, set[int]]] = []
    for i, tok in enumerate(tokens):
        m = _RESIZE_NUM_RE.match(tok)
        if m and i + 1 < len(tokens):
            nxt = tokens[i + 1]
            number = float(m.group(1))
            if number > 0 and nxt in _GROW_WORDS:
                matches.append((Action.resize(number), {i, i + 1}))
            elif number > 0 and nxt in _SHRINK_WORDS:
                matches.append((Action.resize(1.0 / number), {i, i + 1}))
    for i, tok in enumerate(tokens):
        if tok == "remove":
            matches.append((Action.remove(), {i}))
    for i in range(len(tokens) - len(_BACKGROUND_PHRASE) + 1):
        if tuple(tokens[i : i + len(_BACKGROUND_PHRASE)]) == _BACKGROUND_PHRASE:
            matches.append((Action.background_swap(), set(range(i, i + 3))))
    return matches


def parse_instruction(
    raw: str, lexicon: Iterable[str] | None = None
) -> ParsedInstruction:
    """Parse an instruction string into action, nouns and descriptive text.

    Keyword grammar, in precedence order: ``<number>x large|larger`` ->
    resize by number, ``<number>x small|smaller`` -> resize by 1/number,
    ``remove`` -> remove, the phrase ``change the background`` -> background
    swap; anything else is an attribute edit. Distinct conflicting keyword
    actions raise :class:`AmbiguityError`. Total on arbitrary text.
    """
    tokens = _tokenize(raw)
    noun_set = set(w.lower() for w in lexicon) if lexicon is not None else set(DEFAULT_NOUNS)
    matches = _find_actions(tokens)
    distinct = []
    for action, _idx in matches:
        if action not in distinct:
            distinct.append(action)
    if len(distinct) > 1:
        names = ", ".join(a.kind.value for a in distinct)
        raise AmbiguityError(f"conflicting action keywords in {raw!r}: {names}")
    action = distinct[0] if distinct else Action.attribute()
    consumed: set[int] = set()
    for _action, idx in matches:
        consumed |= idx
    kept = [t for i, t in enumerate(tokens) if i not in consumed]
    nouns = tuple(t for t in kept if t in noun_set)
    return ParsedInstruction(
        raw=raw,
        tokens=tokens,
        nouns=nouns,
        action=action,
        descriptive_text=" ".join(kept),
    )


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """u.v / (|u||v|), defined only for nonzero vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ParameterError("cosine similarity is undefined for zero vectors")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _hash_unit_vector(word: str, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(word.encode("utf-8")).digest()[:8], "big")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class EmbeddingTable:
    """Word -> unit vector map with deterministic out-of-vocabulary fallback.

    Unknown words get a hash-seeded random unit vector, so lookups are total
    and reproducible across processes.
    """

    def __init__(self, vectors: dict[str, np.ndarray] | None = None, dim: int = 64):
        if dim < 1:
            raise ParameterError("embedding dimension must be >= 1")
        self.dim = dim
        self._vectors: dict[str, np.ndarray] = {}
        for word, vec in (vectors or {}).items():
            self.add(word, vec)

    def add(self, word: str, vector: np.ndarray) -> None:
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ParameterError(f"vector for {word!r} must have dim {self.dim}")
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise ParameterError(f"vector for {word!r} must be nonzero")
        self._vectors[word.lower()] = v / norm

    def __contains__(self, word: str) -> bool:
        return word.lower() in self._vectors

    def embed(self, word: str) -> np.ndarray:
        key = word.lower()
        vec = self._vectors.get(key)
        if vec is None:
            vec = _hash_unit_vector(key, self.dim)
            self._vectors[key] = vec
        return vec

    @staticmethod
    def load_text(path: str | Path, dim: int | None = None) -> "EmbeddingTable":
        """Load ``word v1 ... vD`` lines (whitespace separated)."""
        table: EmbeddingTable | None = None
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            parts = line.split()
            if len(parts) < 2:
                continue
            word, comps = parts[0], [float(p) for p in parts[1:]]
            if table is None:
                table = EmbeddingTable(dim=dim or len(comps))
            table.add(word, np.asarray(comps))
        if table is None:
            raise ParameterError(f"no vectors found in {path}")
        return table

    @staticmethod
    def reference(dim: int = 64) -> "EmbeddingTable":
        """Table for the synthetic vocabulary: shape nouns get orthogonal
        cluster centers, related words sit close to their cluster."""
        table = EmbeddingTable(dim=dim)
        clusters = {
            "circle": ["circle", "round", "disc", "ball"],
            "square": ["square", "box", "block"],
            "triangle": ["triangle", "wedge"],
            "bird": ["bird", "wing", "beak", "belly", "feathers"],
            "background": ["background", "sky", "ground", "backdrop"],
        }
        for center_word, members in clusters.items():
            center = _hash_unit_vector("cluster:" + center_word, dim)
            for j, word in enumerate(members):
                if j == 0:
                    table.add(word, center)
                else:
                    jitter = 0.15 * _hash_unit_vector("member:" + word, dim)
                    table.add(word, center + jitter)
        return table


@dataclass(frozen=True)
class TargetSelection:
    label: str
    score: float
    low_confidence: bool = False


def select_target_class(
    candidates: Sequence[str],
    instruction: ParsedInstruction,
    table: EmbeddingTable,
    threshold: float = 0.2,
) -> TargetSelection:
    """Pick the candidate label most similar to any instruction noun.

    Argmax over all (candidate, noun) pairs of embedding cosine similarity;
    ties break toward the earlier candidate, then the earlier noun. A best
    score below ``threshold`` flags the result as low confidence.
    """
    if not candidates:
        raise NoTargetError("no candidate labels to match against")
    if not instruction.nouns:
        raise NoTargetError(f"instruction {instruction.raw!r} names no known object")
    best: tuple[float, int] | None = None
    # iteration order makes strict improvement break ties toward the
    # earlier candidate, then the earlier noun
    for ci, cand in enumerate(candidates):
        cvec = table.embed(cand)
        for noun in instruction.nouns:
            score = cosine_similarity(cvec, table.embed(noun))
            if best is None or score > best[0]:
                best = (score, ci)
    assert best is not None
    score, ci = best
    return TargetSelection(
        label=candidates[ci], score=score, low_confidence=score < threshold
    )


def load_lexicon(path: str | Path) -> frozenset[str]:
    """One noun per line, UTF-8; blank lines and # comments ignored."""
    words = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        word = line.strip().lower()
        if word and not word.startswith("#"):
            words.add(word)
    return frozenset(words)
