"""Survey records: ingestion, vocabularies, splitting and the synthetic generator."""
from dataclasses import dataclass, field
import json
import math

import numpy as np

from . import embeddings
from .errors import ConfigError, ParseError, SchemaError, VocabularyError


@dataclass(frozen=True)
class SurveyRecord:
    participant_id: str
    topic: str
    pre_answers: tuple
    post_answers: tuple
    deck_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "pre_answers", tuple(self.pre_answers))
        object.__setattr__(self, "post_answers", tuple(self.post_answers))
        if len(self.pre_answers) != len(self.post_answers):
            raise SchemaError(
                f"record {self.participant_id!r}: {len(self.pre_answers)} pre answers "
                f"vs {len(self.post_answers)} post answers")
        if not self.pre_answers:
            raise SchemaError(f"record {self.participant_id!r} has no answers")
        for a in self.pre_answers + self.post_answers:
            if not isinstance(a, str) or not a:
                raise SchemaError(f"record {self.participant_id!r}: answers must be non-empty strings")

    @property
    def n_questions(self):
        return len(self.pre_answers)

    def to_dict(self):
        return {
            "participant_id": self.participant_id,
            "topic": self.topic,
            "deck_id": self.deck_id,
            "pre_answers": list(self.pre_answers),
            "post_answers": list(self.post_answers),
        }


_REQUIRED = ("participant_id", "topic", "pre_answers", "post_answers")


def parse_record(obj, topics=None, line=None):
    if not isinstance(obj, dict):
        raise SchemaError("record must be a JSON object", line=line)
    for key in _REQUIRED:
        if key not in obj:
            raise SchemaError(f"missing field {key!r}", line=line)
    for key in ("pre_answers", "post_answers"):
        if not isinstance(obj[key], list):
            raise SchemaError(f"{key} must be an array", line=line)
    if topics is not None and obj["topic"] not in topics:
        raise SchemaError(f"unknown topic {obj['topic']!r}", line=line)
    try:
        return SurveyRecord(str(obj["participant_id"]), obj["topic"], obj["pre_answers"],
                            obj["post_answers"], obj.get("deck_id"))
    except SchemaError as exc:
        raise SchemaError(str(exc), line=line) from None


def load_records(path, topics=None):
    """Read line-delimited JSON records; ``topics`` restricts the allowed topic names."""
    topics = None if topics is None else set(topics)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
            records.append(parse_record(obj, topics, lineno))
    return records


def write_records(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------

class AnswerVocabulary:
    """Per-question answer -> id maps, ids assigned in sorted order."""

    def __init__(self, per_question):
        self.per_question = [dict(m) for m in per_question]
        self._inverse = [sorted(m, key=m.get) for m in self.per_question]

    @classmethod
    def from_answers(cls, answers_per_question):
        return cls([{a: i for i, a in enumerate(sorted(set(ans)))} for ans in answers_per_question])

    @property
    def n_questions(self):
        return len(self.per_question)

    @property
    def sizes(self):
        return [len(m) for m in self.per_question]

    def answers(self, q):
        return list(self._inverse[q])

    def encode(self, q, answer):
        try:
            return self.per_question[q][answer]
        except KeyError:
            raise VocabularyError(q, answer) from None

    def decode(self, q, idx):
        return self._inverse[q][idx]

    def to_list(self):
        return [self.answers(q) for q in range(self.n_questions)]

    @classmethod
    def from_list(cls, answers):
        return cls([{a: i for i, a in enumerate(ans)} for ans in answers])

    def __eq__(self, other):
        return isinstance(other, AnswerVocabulary) and self.per_question == other.per_question

    def __repr__(self):
        return f"AnswerVocabulary(sizes={self.sizes})"


def build_vocabulary(records):
    if not records:
        raise SchemaError("cannot build a vocabulary from zero records")
    Q = records[0].n_questions
    seen = [set() for _ in range(Q)]
    for r in records:
        if r.n_questions != Q:
            raise SchemaError(f"record {r.participant_id!r} has {r.n_questions} questions, expected {Q}")
        for q in range(Q):
            seen[q].add(r.pre_answers[q])
            seen[q].add(r.post_answers[q])
    return AnswerVocabulary.from_answers(seen)


def encode_record(record, vocab):
    pre = [vocab.encode(q, a) for q, a in enumerate(record.pre_answers)]
    post = [vocab.encode(q, a) for q, a in enumerate(record.post_answers)]
    return pre, post


def decode_record(record_like, pre_ids, post_ids, vocab):
    return SurveyRecord(
        record_like.participant_id, record_like.topic,
        [vocab.decode(q, i) for q, i in enumerate(pre_ids)],
        [vocab.decode(q, i) for q, i in enumerate(post_ids)],
        record_like.deck_id,
    )


def encode_all(records, vocab):
    pre = np.empty((len(records), vocab.n_questions), dtype=np.int64)
    post = np.empty_like(pre)
    for i, r in enumerate(records):
        pre[i], post[i] = encode_record(r, vocab)
    return pre, post


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

_PCG_MULT = 6364136223846793005
_PCG_INC_SEQ = 54
_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1


class PCG32:
    """PCG-XSH-RR: 64-bit LCG state, 32-bit output (O'Neill's reference pcg32)."""

    def __init__(self, seed, seq=_PCG_INC_SEQ):
        self.state = 0
        self.inc = ((seq << 1) | 1) & _MASK64
        self.next_u32()
        self.state = (self.state + (seed & _MASK64)) & _MASK64
        self.next_u32()

    def next_u32(self):
        old = self.state
        self.state = (old * _PCG_MULT + self.inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & _MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & _MASK32

    def bounded(self, bound):
        threshold = ((-bound) & _MASK32) % bound
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % bound

    def permutation(self, n):
        """Fisher-Yates from the top index down."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.bounded(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


@dataclass
class DatasetSplit:
    train: list
    validation: list
    seed: int


def split(records, ratio=0.8, seed=0):
    n = len(records)
    if n < 5:
        raise ConfigError(f"need at least 5 records to split, got {n}")
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must be in (0, 1), got {ratio}")
    n_train = int(math.floor(ratio * n + 0.5))
    perm = PCG32(seed).permutation(n)
    train_idx = sorted(perm[:n_train])
    val_idx = sorted(perm[n_train:])
    return DatasetSplit([records[i] for i in train_idx], [records[i] for i in val_idx], seed)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

def answer_label(index):
    return f"opt_{index}"


def _per_question(value, Q, name):
    if isinstance(value, (int, float)):
        return [float(value)] * Q
    value = list(value)
    if len(value) != Q:
        raise ConfigError(f"{name} has {len(value)} entries, expected {Q}")
    return [float(v) for v in value]


@dataclass
class TopicSpec:
    name: str
    shift_prob: list
    convergence_prob: list
    consensus_option: list
    keywords: list = field(default_factory=list)
    slides: list | None = None

    def deck(self):
        return embeddings.default_deck(self.name, self.keywords or None, self.slides)


@dataclass
class GeneratorConfig:
    topics: list
    n_participants: int = 1000
    n_questions: int = 8
    answers_per_question: list = field(default_factory=lambda: [3, 4, 5, 3, 4, 5, 3, 4])
    noise_prob: float = 0.05
    embedding_dim: int = embeddings.DEFAULT_DIM
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        Q = self.n_questions
        if Q < 1:
            raise ConfigError("n_questions must be >= 1")
        if self.n_participants < 1:
            raise ConfigError("n_participants must be >= 1")
        self.answers_per_question = [int(v) for v in
                                     _per_question(self.answers_per_question, Q, "answers_per_question")]
        for v in self.answers_per_question:
            if not 2 <= v <= 10:
                raise ConfigError(f"answers per question must be in [2, 10], got {v}")
        if not 0.0 <= self.noise_prob <= 1.0:
            raise ConfigError("noise_prob must be in [0, 1]")
        if not self.topics:
            raise ConfigError("at least one topic is required")
        names = set()
        for t in self.topics:
            if t.name in names:
                raise ConfigError(f"duplicate topic {t.name!r}")
            names.add(t.name)
            t.shift_prob = _per_question(t.shift_prob, Q, f"{t.name}.shift_prob")
            t.convergence_prob = _per_question(t.convergence_prob, Q, f"{t.name}.convergence_prob")
            t.consensus_option = [int(v) for v in
                                  _per_question(t.consensus_option, Q, f"{t.name}.consensus_option")]
            for q in range(Q):
                p, c = t.shift_prob[q], t.convergence_prob[q]
                if not (0.0 <= p <= 1.0 and 0.0 <= c <= 1.0):
                    raise ConfigError(f"{t.name} q{q}: probabilities must be in [0, 1]")
                if p + c > 1.0 + 1e-12:
                    raise ConfigError(f"{t.name} q{q}: shift_prob + convergence_prob > 1")
                if not 0 <= t.consensus_option[q] < self.answers_per_question[q]:
                    raise ConfigError(f"{t.name} q{q}: consensus option out of range")

    @property
    def topic_names(self):
        return [t.name for t in self.topics]

    def decks(self):
        return [t.deck() for t in self.topics]

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        topics = [TopicSpec(
            name=t["name"],
            shift_prob=t.get("shift_prob", 0.0),
            convergence_prob=t.get("convergence_prob", 0.0),
            consensus_option=t.get("consensus_option", 0),
            keywords=list(t.get("keywords", [])),
            slides=t.get("slides"),
        ) for t in d.pop("topics", [])]
        known = {"n_participants", "n_questions", "answers_per_question", "noise_prob",
                 "embedding_dim", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown generator keys: {sorted(unknown)}")
        return cls(topics=topics, **d)

    def to_dict(self):
        return {
            "n_participants": self.n_participants,
            "n_questions": self.n_questions,
            "answers_per_question": list(self.answers_per_question),
            "noise_prob": self.noise_prob,
            "embedding_dim": self.embedding_dim,
            "seed": self.seed,
            "topics": [{
                "name": t.name,
                "shift_prob": list(t.shift_prob),
                "convergence_prob": list(t.convergence_prob),
                "consensus_option": list(t.consensus_option),
                "keywords": list(t.keywords),
                **({"slides": list(t.slides)} if t.slides is not None else {}),
            } for t in self.topics],
        }


def default_generator_config(n_participants=1000, seed=0):
    """Three deliberation topics with contrasting elasticity and a convergence item."""
    topics = [
        TopicSpec("skincare",
                  shift_prob=[0.60, 0.15, 0.55, 0.10, 0.65, 0.20, 0.60, 0.10],
                  convergence_prob=[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.75],
                  consensus_option=[0, 0, 0, 0, 0, 0, 0, 1],
                  keywords=["skincare", "serum", "cosmetics"]),
        TopicSpec("ketchup",
                  shift_prob=[0.05, 0.05, 0.10, 0.05, 0.05, 0.10, 0.05, 0.05],
                  convergence_prob=[0.0, 0.0, 0.0, 0.70, 0.0, 0.0, 0.0, 0.75],
                  consensus_option=[0, 0, 0, 2, 0, 0, 0, 1],
                  keywords=["ketchup", "ingredients", "food"]),
        TopicSpec("dna_storage",
                  shift_prob=[0.70, 0.65, 0.20, 0.70, 0.15, 0.65, 0.70, 0.20],
                  convergence_prob=[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.75],
                  consensus_option=[0, 0, 0, 0, 0, 0, 0, 1],
                  keywords=["dna", "storage", "data"]),
    ]
    return GeneratorConfig(topics=topics, n_participants=n_participants, seed=seed)


def topic_valences(config):
    """+1/-1 per topic: sign of the first component of the topic's deck vector (0 -> +1)."""
    out = {}
    for t in config.topics:
        first = embeddings.embed_deck(t.deck(), config.embedding_dim).vector[0]
        out[t.name] = -1 if first < 0 else 1
    return out


def shift_index(pre, valence, V):
    """Move one step toward V-1 (valence +1) or 0 (valence -1), saturating."""
    return int(min(V - 1, max(0, pre + (1 if valence > 0 else -1))))


def generate_synthetic(config):
    """Draw matched pre/post records.

    Participant ``i`` belongs to topic ``i mod T``. Per question the stream
    draws, in order: pre answers, the mixing uniform, the noise uniform and
    the noise replacement.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, Q = config.n_participants, config.n_questions
    V = config.answers_per_question
    valence = topic_valences(config)
    T = len(config.topics)
    topic_of = np.arange(n) % T

    pre = np.stack([rng.integers(0, V[q], size=n) for q in range(Q)], axis=1)
    u = rng.random((n, Q))
    noise_u = rng.random((n, Q))
    noise_pick = np.stack([rng.integers(0, V[q], size=n) for q in range(Q)], axis=1)

    post = pre.copy()
    for ti, t in enumerate(config.topics):
        rows = topic_of == ti
        for q in range(Q):
            c, p = t.convergence_prob[q], t.shift_prob[q]
            uq = u[rows, q]
            pq = pre[rows, q]
            shifted = np.array([shift_index(a, valence[t.name], V[q]) for a in range(V[q])])[pq]
            out = np.where(uq < c, t.consensus_option[q], np.where(uq < c + p, shifted, pq))
            post[rows, q] = out
    noisy = noise_u < config.noise_prob
    post = np.where(noisy, noise_pick, post)

    records = []
    for i in range(n):
        t = config.topics[topic_of[i]]
        records.append(SurveyRecord(
            participant_id=f"p{i:05d}",
            topic=t.name,
            pre_answers=[answer_label(int(a)) for a in pre[i]],
            post_answers=[answer_label(int(a)) for a in post[i]],
            deck_id=None,
        ))
    return records


def measure_shift_rate(records):
    """Per topic: fraction of positions per question where post differs from pre."""
    if not records:
        raise SchemaError("no records")
    counts, totals = {}, {}
    for r in records:
        diff = np.array([a != b for a, b in zip(r.pre_answers, r.post_answers)], dtype=np.float64)
        if r.topic not in counts:
            counts[r.topic] = np.zeros_like(diff)
            totals[r.topic] = 0
        counts[r.topic] += diff
        totals[r.topic] += 1
    return {t: counts[t] / totals[t] for t in counts}


# ---------------------------------------------------------------------------
# closed-form quantities of the generator
# ---------------------------------------------------------------------------

class BayesOracle:
    """Exact posterior over post answers given (topic, question, pre answer).

    P(post=b | pre=a) = (1-eta) * [c 1{b=cons} + p 1{b=shift(a)} + (1-c-p) 1{b=a}]
    + eta / V. Predictions take the argmax, ties to the lowest index.
    """

    def __init__(self, config, valences=None):
        self.config = config
        self.valences = valences or topic_valences(config)
        self._tables = {}
        for t in config.topics:
            per_q = []
            for q in range(config.n_questions):
                V = config.answers_per_question[q]
                c, p = t.convergence_prob[q], t.shift_prob[q]
                eta = config.noise_prob
                table = np.full((V, V), eta / V)
                for a in range(V):
                    table[a, t.consensus_option[q]] += (1 - eta) * c
                    table[a, shift_index(a, self.valences[t.name], V)] += (1 - eta) * p
                    table[a, a] += (1 - eta) * (1 - c - p)
                per_q.append(table)
            self._tables[t.name] = per_q

    def posterior(self, topic, q, pre):
        return self._tables[topic][q][pre]

    def decision(self, topic, q):
        return np.argmax(self._tables[topic][q], axis=1)

    def predict_ids(self, topics, pre_ids):
        pre_ids = np.asarray(pre_ids)
        out = np.empty_like(pre_ids)
        for i, topic in enumerate(topics):
            for q in range(pre_ids.shape[1]):
                out[i, q] = self.decision(topic, q)[pre_ids[i, q]]
        return out

    def predict_records(self, records):
        """Predicted post answer strings per record."""
        out = []
        for r in records:
            pre = [int(a.split("_")[1]) for a in r.pre_answers]
            out.append([answer_label(int(self.decision(r.topic, q)[a])) for q, a in enumerate(pre)])
        return out

    def topic_weights(self):
        n, T = self.config.n_participants, len(self.config.topics)
        counts = np.bincount(np.arange(n) % T, minlength=T)
        return {t.name: counts[i] / n for i, t in enumerate(self.config.topics)}

    def joint(self, q, topic=None):
        """Population joint P(pre, post) for question q, optionally within one topic."""
        V = self.config.answers_per_question[q]
        weights = self.topic_weights() if topic is None else {topic: 1.0}
        J = np.zeros((V, V))
        for name, w in weights.items():
            J += w * self._tables[name][q] / V
        return J

    def expected_shift_rate(self, topic, q):
        V = self.config.answers_per_question[q]
        return 1.0 - float(np.trace(self._tables[topic][q]) / V)

    def expected_confusion(self, q, topic=None):
        """Expected (pred, gold) probability mass of the argmax predictor."""
        V = self.config.answers_per_question[q]
        weights = self.topic_weights() if topic is None else {topic: 1.0}
        C = np.zeros((V, V))
        for name, w in weights.items():
            table = self._tables[name][q]
            dec = np.argmax(table, axis=1)
            for a in range(V):
                C[dec[a]] += w * table[a] / V
        return C

    def expected_macro_f1(self, topic=None):
        """Macro-F1 from expected confusion masses, averaged across questions."""
        scores = []
        for q in range(self.config.n_questions):
            C = self.expected_confusion(q, topic)
            f1s = []
            for k in range(C.shape[0]):
                tp, pred, gold = C[k, k], C[k].sum(), C[:, k].sum()
                if pred == 0 and gold == 0:
                    continue
                prec = tp / pred if pred > 0 else 0.0
                rec = tp / gold if gold > 0 else 0.0
                f1s.append(0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec))
            scores.append(float(np.mean(f1s)))
        return float(np.mean(scores))

    def expected_accuracy(self, topic=None):
        return float(np.mean([np.trace(self.expected_confusion(q, topic))
                              for q in range(self.config.n_questions)]))

    def modal_mass(self):
        """Mean over questions of the largest marginal post-answer probability."""
        return float(np.mean([self.joint(q).sum(axis=0).max()
                              for q in range(self.config.n_questions)]))
