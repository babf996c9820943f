"""OpinionXf: pre-norm Transformer encoder over [presentation, (quantum), question] tokens."""
from dataclasses import asdict, dataclass, field
import json
import hashlib

import numpy as np

from .errors import ConfigError, VocabularyError
from .fusion import FusionParams, fuse
from .numerics import autograd as ag
from .numerics.autograd import Tensor
from .quantum import QuantumTokenParams, quantum_token


@dataclass
class ModelConfig:
    vocab_sizes: list
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int | None = None
    embedding_dim: int = 384
    use_fusion: bool = False
    use_quantum: bool = False
    use_contrastive: bool = False
    fusion_bands: int | None = None
    fusion_activation: str = "softplus"
    quantum_features: tuple = (0, 1)
    dropout: float = 0.0
    freeze_answer_embeddings: bool = False
    seed: int = 0

    def __post_init__(self):
        self.vocab_sizes = [int(v) for v in self.vocab_sizes]
        self.quantum_features = tuple(int(i) for i in self.quantum_features)
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        if self.fusion_bands is None:
            self.fusion_bands = max(1, self.d_model // 4)
        if not self.vocab_sizes:
            raise ConfigError("at least one question is required")
        if any(v < 2 for v in self.vocab_sizes):
            raise ConfigError("every question needs at least 2 answers")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.n_layers < 0 or self.embedding_dim < 1:
            raise ConfigError("bad layer count or embedding dimension")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.use_fusion:
            self.fusion  # validates bands and d_model
        if self.use_quantum:
            self.quantum

    @property
    def n_questions(self):
        return len(self.vocab_sizes)

    @property
    def n_special(self):
        return 2 if self.use_quantum else 1

    @property
    def seq_len(self):
        return self.n_special + self.n_questions

    @property
    def answer_offsets(self):
        return np.concatenate([[0], np.cumsum(self.vocab_sizes)[:-1]]).astype(np.int64)

    @property
    def fusion(self):
        return FusionParams(self.d_model, self.fusion_bands, self.fusion_activation)

    @property
    def quantum(self):
        return QuantumTokenParams(self.d_model, self.quantum_features)

    def to_dict(self):
        d = asdict(self)
        d["quantum_features"] = list(self.quantum_features)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class OpinionXfParams:
    """Trainable arrays plus non-trainable buffers (the answer projection used at init)."""

    arrays: dict
    buffers: dict = field(default_factory=dict)

    def copy(self):
        return OpinionXfParams({k: v.copy() for k, v in self.arrays.items()},
                               {k: v.copy() for k, v in self.buffers.items()})

    def trainable_names(self, config):
        names = list(self.arrays)
        if config.freeze_answer_embeddings:
            names.remove("tokens.answer")
        return names

    def n_parameters(self):
        return int(sum(v.size for v in self.arrays.values()))

    def answer_embedding(self, config, q):
        off = config.answer_offsets[q]
        return self.arrays["tokens.answer"][off:off + config.vocab_sizes[q]]


def param_shapes(config):
    d, E, Q = config.d_model, config.embedding_dim, config.n_questions
    shapes = {
        "present.weight": (E, d),
        "present.bias": (d,),
        "tokens.question": (Q, d),
        "tokens.position": (config.seq_len, d),
    }
    for layer in range(config.n_layers):
        p = f"enc.{layer}."
        shapes.update({
            p + "ln1.gain": (d,), p + "ln1.bias": (d,),
            p + "attn.wq": (d, d), p + "attn.bq": (d,),
            p + "attn.wk": (d, d), p + "attn.bk": (d,),
            p + "attn.wv": (d, d), p + "attn.bv": (d,),
            p + "attn.wo": (d, d), p + "attn.bo": (d,),
            p + "ln2.gain": (d,), p + "ln2.bias": (d,),
            p + "ff.w1": (d, config.d_ff), p + "ff.b1": (config.d_ff,),
            p + "ff.w2": (config.d_ff, d), p + "ff.b2": (d,),
        })
    for q, V in enumerate(config.vocab_sizes):
        shapes[f"head.{q}.weight"] = (d, V)
        shapes[f"head.{q}.bias"] = (V,)
    if config.use_fusion:
        shapes.update(config.fusion.shapes())
    if config.use_quantum:
        shapes.update(config.quantum.shapes())
    return shapes


def _init_array(name, shape, rng, d_model):
    if name.endswith(".gain"):
        return np.ones(shape)
    if len(shape) == 1 and name != "quantum.weight":
        return np.zeros(shape)
    if name.startswith("tokens."):
        bound = 1.0 / np.sqrt(d_model)
    else:
        bound = 1.0 / np.sqrt(shape[0]) if len(shape) == 2 else 1.0
    return rng.uniform(-bound, bound, size=shape)


def init_params(config, answer_table, seed=None):
    """Seeded initialisation.

    Answer token rows are ``table_row @ W + b`` with the E -> d_model projection
    ``(W, b)`` drawn first and kept as a buffer. Other matrices are uniform in
    ``+-1/sqrt(fan_in)``, vectors start at zero and layer-norm gains at one.
    """
    seed = config.seed if seed is None else seed
    if len(answer_table) != config.n_questions:
        raise ConfigError("answer table and model disagree on the number of questions")
    for q, table in enumerate(answer_table.tables):
        if table.shape != (config.vocab_sizes[q], config.embedding_dim):
            raise ConfigError(f"answer table for question {q} has shape {table.shape}")
    rng = np.random.default_rng(seed)
    d, E = config.d_model, config.embedding_dim
    bound = 1.0 / np.sqrt(E)
    proj_w = rng.uniform(-bound, bound, size=(E, d))
    proj_b = rng.uniform(-bound, bound, size=d)
    arrays = {"tokens.answer": np.concatenate(answer_table.tables) @ proj_w + proj_b}
    for name, shape in param_shapes(config).items():
        arrays[name] = _init_array(name, shape, rng, d)
    return OpinionXfParams(arrays, {"answer_proj.weight": proj_w, "answer_proj.bias": proj_b})


def as_tensors(params, trainable=()):
    arrays = params.arrays if isinstance(params, OpinionXfParams) else params
    trainable = set(trainable)
    return {k: Tensor(v, requires_grad=k in trainable) for k, v in arrays.items()}


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

@dataclass
class ForwardResult:
    logits: list
    tokens: Tensor
    hidden: Tensor
    fused_p: Tensor | None = None
    augmented_q: Tensor | None = None
    angles: tuple | None = None


def _check_ids(pre_ids, config):
    pre_ids = np.asarray(pre_ids, dtype=np.int64)
    if pre_ids.ndim != 2 or pre_ids.shape[1] != config.n_questions:
        raise ConfigError(f"expected (batch, {config.n_questions}) answer ids, got {pre_ids.shape}")
    sizes = np.asarray(config.vocab_sizes)
    bad = (pre_ids < 0) | (pre_ids >= sizes)
    if bad.any():
        i, q = np.argwhere(bad)[0]
        raise VocabularyError(int(q), int(pre_ids[i, q]))
    return pre_ids


def assemble_batch(P, config, pre_ids, deck_vectors, angles=None):
    """Token matrix ``(B, S+Q, d)`` plus fusion/quantum side outputs."""
    pre_ids = _check_ids(pre_ids, config)
    deck_vectors = np.asarray(deck_vectors, dtype=np.float64)
    B, d = pre_ids.shape[0], config.d_model
    answers = P["tokens.answer"][pre_ids + config.answer_offsets]
    q_tokens = answers + P["tokens.question"]
    pres = deck_vectors @ P["present.weight"] + P["present.bias"]
    fused = augmented = None
    if config.use_fusion:
        fused, augmented = fuse(pres, q_tokens, P, config.fusion_bands, config.fusion_activation)
        pres, q_tokens = fused, augmented
    specials = [ag.reshape(pres, (B, 1, d))]
    if config.use_quantum:
        qtok, angles = quantum_token(pres, P["quantum.weight"], P["quantum.bias"],
                                     config.quantum_features, angles)
        specials.append(ag.reshape(qtok, (B, 1, d)))
    tokens = ag.concat(specials + [q_tokens], axis=1) + P["tokens.position"]
    return tokens, fused, augmented, angles


def attention(x, P, prefix, n_heads):
    B, T, d = x.shape
    dh = d // n_heads

    def heads(w, b):
        return ag.transpose(ag.reshape(x @ P[prefix + w] + P[prefix + b], (B, T, n_heads, dh)),
                            (0, 2, 1, 3))

    q = heads("wq", "bq")
    k = heads("wk", "bk")
    v = heads("wv", "bv")
    scores = (q @ ag.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
    ctx = ag.softmax(scores, axis=-1) @ v
    ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (B, T, d))
    return ctx @ P[prefix + "wo"] + P[prefix + "bo"]


def encode_batch(tokens, P, config, rng=None):
    h = tokens
    for layer in range(config.n_layers):
        p = f"enc.{layer}."
        a = attention(ag.layer_norm(h, P[p + "ln1.gain"], P[p + "ln1.bias"]), P, p + "attn.",
                      config.n_heads)
        h = h + ag.dropout(a, config.dropout, rng)
        f = ag.layer_norm(h, P[p + "ln2.gain"], P[p + "ln2.bias"])
        f = ag.gelu(f @ P[p + "ff.w1"] + P[p + "ff.b1"]) @ P[p + "ff.w2"] + P[p + "ff.b2"]
        h = h + ag.dropout(f, config.dropout, rng)
    return h


def forward(P, config, pre_ids, deck_vectors, angles=None, rng=None):
    tokens, fused, augmented, angles = assemble_batch(P, config, pre_ids, deck_vectors, angles)
    hidden = encode_batch(tokens, P, config, rng)
    S = config.n_special
    logits = [hidden[:, S + q, :] @ P[f"head.{q}.weight"] + P[f"head.{q}.bias"]
              for q in range(config.n_questions)]
    return ForwardResult(logits, tokens, hidden, fused, augmented, angles)


# single-record conveniences ---------------------------------------------------

def assemble_tokens(pre_ids, deck_vector, params, config):
    P = as_tensors(params)
    tokens, *_ = assemble_batch(P, config, [pre_ids], [deck_vector])
    return tokens.data[0]


def encode(tokens, params, config):
    P = as_tensors(params)
    return encode_batch(Tensor(np.asarray(tokens)[None]), P, config).data[0]


def predict(pre_ids, deck_vector, params, config):
    P = as_tensors(params)
    out = forward(P, config, [pre_ids], [deck_vector])
    return [lg.data[0] for lg in out.logits]


def predict_batch(params, config, pre_ids, deck_vectors, batch_size=256):
    """Argmax answer ids ``(N, Q)`` and stacked per-question logits."""
    P = as_tensors(params)
    preds, all_logits = [], []
    for start in range(0, len(pre_ids), batch_size):
        out = forward(P, config, pre_ids[start:start + batch_size],
                      deck_vectors[start:start + batch_size])
        all_logits.append([lg.data for lg in out.logits])
        preds.append(np.stack([lg.data.argmax(axis=-1) for lg in out.logits], axis=1))
    logits = [np.concatenate([chunk[q] for chunk in all_logits]) for q in range(config.n_questions)]
    return np.concatenate(preds), logits
