"""Presentation vectors and answer-embedding tables.

No pretrained model runs in-process. Vectors come either from a precomputed
file or from :func:`hash_embed`, a deterministic signed feature-hashing
embedder.
"""
from dataclasses import dataclass, field
import hashlib
import json
import re

import numpy as np

from .errors import (
    ConfigError,
    DegenerateDeckError,
    EmptyInputError,
    FormatError,
    ParseError,
    SchemaError,
    UnassignedRecordError,
)

DEFAULT_DIM = 384
NORM_TOL = 1e-9


@dataclass(frozen=True)
class DeckText:
    deck_id: str
    slides: tuple
    topic_keywords: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "slides", tuple(self.slides))
        object.__setattr__(self, "topic_keywords", tuple(self.topic_keywords))
        if not self.deck_id:
            raise SchemaError("deck_id must be non-empty")
        if not self.slides or any(not s.strip() for s in self.slides):
            raise SchemaError(f"deck {self.deck_id!r} needs at least one non-empty slide")

    def to_dict(self):
        return {"deck_id": self.deck_id, "topic_keywords": list(self.topic_keywords),
                "slides": list(self.slides)}


@dataclass(frozen=True)
class PresentationVector:
    deck_id: str
    vector: np.ndarray = field(repr=False)
    source: str = "hashed"

    @property
    def dim(self):
        return self.vector.shape[0]


@dataclass
class AnswerEmbeddingTable:
    """One (V_q, E) unit-row matrix per question."""

    tables: list

    @property
    def dim(self):
        return self.tables[0].shape[1]

    def __getitem__(self, q):
        return self.tables[q]

    def __len__(self):
        return len(self.tables)


def tokenize(text):
    return text.lower().split()


def _token_hash(token):
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


def hash_embed(text, dim=DEFAULT_DIM):
    """Signed feature hashing of whitespace tokens, L2-normalised.

    Each lowercased token maps through 64-bit BLAKE2b (little-endian digest) to
    ``index = h % dim`` and ``sign = -1 if bit 63 of h is set else +1``.
    """
    if dim < 8:
        raise ConfigError(f"embedding dimension must be >= 8, got {dim}")
    tokens = tokenize(text)
    if not tokens:
        raise EmptyInputError("cannot embed empty or whitespace-only text")
    vec = np.zeros(dim)
    for tok in tokens:
        h = _token_hash(tok)
        vec[h % dim] += -1.0 if (h >> 63) & 1 else 1.0
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        # every token cancelled out; fall back to the first token's bucket
        h = _token_hash(tokens[0])
        vec[h % dim] = 1.0
        norm = 1.0
    return vec / norm


def normalize(vec):
    vec = np.asarray(vec, dtype=np.float64)
    norm = np.linalg.norm(vec)
    if not np.isfinite(norm) or norm == 0.0:
        raise FormatError("cannot normalise a zero or non-finite vector")
    return vec / norm


def pool_deck(slide_vectors, deck_id=""):
    """Mean of unit slide vectors, renormalised."""
    vecs = [np.asarray(v, dtype=np.float64) for v in slide_vectors]
    if not vecs:
        raise EmptyInputError("pool_deck needs at least one slide vector")
    mean = np.mean(vecs, axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        raise DegenerateDeckError(f"slide vectors of deck {deck_id!r} cancel out")
    return PresentationVector(deck_id, mean / norm, "hashed")


def embed_deck(deck, dim=DEFAULT_DIM):
    pv = pool_deck([hash_embed(s, dim) for s in deck.slides], deck.deck_id)
    return pv


# ---------------------------------------------------------------------------
# deck assignment
# ---------------------------------------------------------------------------

_WORD = re.compile(r"[a-z0-9]+")


def _words(text):
    return set(_WORD.findall(text.lower()))


def assign_deck(record, decks):
    """Explicit ``deck_id`` wins; otherwise the best keyword overlap with the topic."""
    if not decks:
        raise UnassignedRecordError("no decks available")
    known = {d.deck_id for d in decks}
    if record.deck_id and record.deck_id in known:
        return record.deck_id
    topic_words = _words(record.topic)
    best, best_score = None, 0
    for deck in sorted(decks, key=lambda d: d.deck_id):
        kw = set()
        for k in deck.topic_keywords:
            kw |= _words(k)
        score = len(topic_words & kw)
        if score > best_score:
            best, best_score = deck.deck_id, score
    if best is None:
        raise UnassignedRecordError(
            f"record {record.participant_id!r} (topic {record.topic!r}) matches no deck")
    return best


def default_deck(topic, keywords=None, slides=None):
    """Deck authored from a topic name when no slide export is supplied."""
    words = topic.replace("_", " ")
    keywords = list(keywords) if keywords else words.split()
    if slides is None:
        slides = [
            f"{words} overview for the deliberation session",
            f"evidence and striking facts about {words}",
            f"arguments for and against {words} " + " ".join(keywords),
            f"summary of {words} risks and benefits",
        ]
    return DeckText(f"deck_{topic}", tuple(slides), tuple(keywords))


# ---------------------------------------------------------------------------
# answer tables
# ---------------------------------------------------------------------------

def init_answer_table(vocab, embed_fn):
    tables = []
    for q in range(vocab.n_questions):
        rows = [np.asarray(embed_fn(ans), dtype=np.float64) for ans in vocab.answers(q)]
        tables.append(np.stack(rows))
    return AnswerEmbeddingTable(tables)


def deck_key(deck_id):
    return f"deck:{deck_id}"


def answer_key(answer):
    return f"answer:{answer}"


class Embedder:
    """Lookup in precomputed vectors with hashed fallback for missing keys."""

    def __init__(self, dim=DEFAULT_DIM, precomputed=None):
        self.precomputed = dict(precomputed or {})
        if self.precomputed:
            dims = {v.shape[0] for v in self.precomputed.values()}
            if len(dims) != 1:
                raise FormatError("precomputed vectors have mixed dimensions")
            dim = dims.pop()
        self.dim = dim

    def answer(self, text):
        vec = self.precomputed.get(answer_key(text))
        return vec if vec is not None else hash_embed(text, self.dim)

    def deck(self, deck):
        vec = self.precomputed.get(deck_key(deck.deck_id))
        if vec is not None:
            return PresentationVector(deck.deck_id, vec, "precomputed")
        return embed_deck(deck, self.dim)

    def deck_vectors(self, decks):
        return {d.deck_id: self.deck(d) for d in decks}


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def load_precomputed(path):
    """Read ``dim <E>`` header then ``key<TAB>v1,v2,...`` lines; rows are renormalised."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2 or parts[0] != "dim":
            raise FormatError("expected header 'dim <E>'", line=1)
        try:
            dim = int(parts[1])
        except ValueError:
            raise FormatError(f"bad dimension {parts[1]!r}", line=1) from None
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            key, sep, values = line.partition("\t")
            if not sep:
                raise FormatError("expected key<TAB>values", line=lineno)
            try:
                vec = np.array([float(v) for v in values.split(",")])
            except ValueError:
                raise FormatError("non-numeric vector entry", line=lineno) from None
            if vec.shape[0] != dim:
                raise FormatError(f"vector for {key!r} has {vec.shape[0]} values, header says {dim}",
                                  line=lineno)
            if key in out:
                raise FormatError(f"duplicate key {key!r}", line=lineno)
            try:
                # leave already-unit rows untouched so load/write round trips are exact
                norm = np.linalg.norm(vec)
                out[key] = vec if abs(norm - 1.0) <= 1e-12 else normalize(vec)
            except FormatError:
                raise FormatError(f"zero vector for {key!r}", line=lineno) from None
    return out


def write_precomputed(vectors, path):
    dims = {np.asarray(v).shape[0] for v in vectors.values()}
    if len(dims) > 1:
        raise FormatError("vectors have mixed dimensions")
    dim = dims.pop() if dims else 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"dim {dim}\n")
        for key in sorted(vectors):
            fh.write(key + "\t" + ",".join(repr(float(x)) for x in vectors[key]) + "\n")


def load_decks(path):
    decks, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
            try:
                deck = DeckText(obj["deck_id"], tuple(obj["slides"]),
                                tuple(obj.get("topic_keywords", ())))
            except KeyError as exc:
                raise SchemaError(f"missing field {exc.args[0]!r}", line=lineno) from None
            except SchemaError as exc:
                raise SchemaError(str(exc), line=lineno) from None
            if deck.deck_id in seen:
                raise SchemaError(f"duplicate deck_id {deck.deck_id!r}", line=lineno)
            seen.add(deck.deck_id)
            decks.append(deck)
    return decks


def write_decks(decks, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in decks:
            fh.write(json.dumps(d.to_dict(), ensure_ascii=False) + "\n")
