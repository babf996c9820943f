"""Loss, AdamW with cosine annealing and clipping, and the training loop."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import csv
import hashlib
import json
import math

import numpy as np

from . import embeddings
from .dataset import AnswerVocabulary, build_vocabulary, encode_all
from .errors import ConfigError, FormatError, NumericError, TrainingFailure, VocabularyError
from .fusion import fusion_summaries
from .metrics import macro_f1
from .model import ModelConfig, OpinionXfParams, as_tensors, forward, init_params, predict_batch
from .numerics import autograd as ag

CHECKPOINT_FORMAT = "opinionxf-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr_max: float = 2e-3
    lr_min: float = 0.0
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    batch_size: int | None = None
    epochs: int = 40
    contrastive_weight: float = 0.1
    in_batch_negatives: bool = False
    contrastive_temperature: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    threads: int = 1
    debug: bool = False

    def __post_init__(self):
        if not self.lr_max > self.lr_min >= 0:
            raise ConfigError("need lr_max > lr_min >= 0")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def resolved_batch_size(self, model_config):
        if self.batch_size is not None:
            return self.batch_size
        return 32 if model_config.use_quantum else 64

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# encoded data
# ---------------------------------------------------------------------------

@dataclass
class EncodedData:
    pre: np.ndarray
    post: np.ndarray
    decks: np.ndarray
    topics: list
    deck_ids: list
    participant_ids: list

    def __len__(self):
        return self.pre.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx)
        return EncodedData(self.pre[idx], self.post[idx], self.decks[idx],
                           [self.topics[i] for i in idx], [self.deck_ids[i] for i in idx],
                           [self.participant_ids[i] for i in idx])


def encode_dataset(records, vocab, decks, deck_vectors):
    pre, post = encode_all(records, vocab)
    ids = [embeddings.assign_deck(r, decks) for r in records]
    dim = next(iter(deck_vectors.values())).vector.shape[0]
    mat = np.stack([deck_vectors[i].vector for i in ids]) if ids else np.zeros((0, dim))
    return EncodedData(pre, post, mat, [r.topic for r in records], ids,
                       [r.participant_id for r in records])


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def cross_entropy_total(logits, targets):
    """Sum over questions of softmax cross-entropy, averaged over the batch."""
    targets = np.asarray(targets, dtype=np.int64)
    if targets.ndim == 1:
        logits = [ag.reshape(ag.as_tensor(lg), (1, -1)) for lg in logits]
        targets = targets[None]
    B = targets.shape[0]
    total = None
    for q, lg in enumerate(logits):
        lg = ag.as_tensor(lg)
        t = targets[:, q]
        if (t < 0).any() or (t >= lg.shape[-1]).any():
            bad = int(t[(t < 0) | (t >= lg.shape[-1])][0])
            raise VocabularyError(q, bad)
        nll = -ag.log_softmax(lg, axis=-1)[np.arange(B), t]
        term = nll.sum() * (1.0 / B)
        total = term if total is None else total + term
    return total


def cosine_alignment_loss(u, v):
    """Mean over rows of ``1 - cos(u, v)``; a zero vector counts as cosine 0."""
    cos = ag.cosine_similarity(u, v)
    return (1.0 - cos).mean()


def in_batch_contrastive_loss(u, v, temperature=0.1):
    """InfoNCE over the batch: row i of u should match row i of v."""
    un = u / ag.sqrt((u * u).sum(axis=-1, keepdims=True) + 1e-12)
    vn = v / ag.sqrt((v * v).sum(axis=-1, keepdims=True) + 1e-12)
    sim = (un @ ag.swapaxes(vn, -1, -2)) * (1.0 / temperature)
    B = sim.shape[0]
    return -(ag.log_softmax(sim, axis=-1)[np.arange(B), np.arange(B)]).mean()


def total_loss(P, model_config, train_config, pre, post, deck_vectors, angles=None, rng=None):
    """CE over all questions plus the weighted alignment term when fusion and contrastive are on."""
    out = forward(P, model_config, pre, deck_vectors, angles, rng)
    loss = cross_entropy_total(out.logits, post)
    weight = train_config.contrastive_weight
    if model_config.use_contrastive and model_config.use_fusion and weight > 0:
        u, v = fusion_summaries(out.fused_p, out.augmented_q)
        if train_config.in_batch_negatives:
            align = in_batch_contrastive_loss(u, v, train_config.contrastive_temperature)
        else:
            align = cosine_alignment_loss(u, v)
        loss = loss + align * weight
    return loss, out


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

def global_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(grads, max_norm=1.0):
    """Scale every gradient by ``max_norm / norm`` when the global L2 norm exceeds it."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name!r}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adamw_step(params, grads, state, t, lr, weight_decay=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One decoupled-weight-decay Adam update of ``params`` (a name -> array dict), in place."""
    if t < 1:
        raise ConfigError("AdamW step counter starts at 1")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        w = params[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        params[name] = w - lr * ((m / bc1) / (np.sqrt(v / bc2) + eps) + weight_decay * w)
    state.t = t
    return params, state


def cosine_anneal_lr(t, T, lr_max, lr_min=0.0):
    if T <= 0:
        raise ConfigError("total step count must be positive")
    if not 0 <= t <= T:
        raise ConfigError(f"step {t} outside [0, {T}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / T))


# ---------------------------------------------------------------------------
# history and checkpoints
# ---------------------------------------------------------------------------

HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "val_macro_f1", "lr")


@dataclass
class TrainHistory:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_macro_f1: list = field(default_factory=list)
    lr: list = field(default_factory=list)

    def __len__(self):
        return len(self.epoch)

    def append(self, **row):
        for key in HISTORY_FIELDS:
            getattr(self, key).append(row[key])

    def rows(self):
        return [dict(zip(HISTORY_FIELDS, vals)) for vals in zip(*(getattr(self, k) for k in HISTORY_FIELDS))]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_FIELDS)
            for row in self.rows():
                w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])

    @classmethod
    def from_csv(cls, path):
        hist = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                hist.append(epoch=int(row["epoch"]),
                            **{k: float(row[k]) for k in HISTORY_FIELDS[1:]})
        return hist


@dataclass
class Checkpoint:
    params: OpinionXfParams
    model_config: ModelConfig
    vocab: AnswerVocabulary
    deck_vectors: dict
    decks: list
    epoch: int
    val_loss: float
    val_macro_f1: float
    config_hash: str = ""
    train_config: dict = field(default_factory=dict)

    def meta(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "kind": "opinionxf",
            "model_config": self.model_config.to_dict(),
            "train_config": self.train_config,
            "vocab": self.vocab.to_list(),
            "decks": [d.to_dict() for d in self.decks],
            "deck_sources": {k: v.source for k, v in self.deck_vectors.items()},
            "epoch": self.epoch,
            "val_loss": self.val_loss,
            "val_macro_f1": self.val_macro_f1,
            "config_hash": self.config_hash,
            "param_shapes": {k: list(v.shape) for k, v in self.params.arrays.items()},
        }

    def save(self, path):
        arrays = {f"param/{k}": v for k, v in self.params.arrays.items()}
        arrays.update({f"buffer/{k}": v for k, v in self.params.buffers.items()})
        arrays.update({f"deck/{k}": v.vector for k, v in self.deck_vectors.items()})
        arrays["meta"] = np.array(json.dumps(self.meta(), sort_keys=True))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    def encode(self, records):
        return encode_dataset(records, self.vocab, self.decks, self.deck_vectors)

    def predict_ids(self, data):
        return predict_batch(self.params, self.model_config, data.pre, data.decks)[0]


def read_checkpoint_meta(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path} is not an opinionxf checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {meta.get('version')}")
    return meta


def load_checkpoint(path):
    meta = read_checkpoint_meta(path)
    if meta["kind"] != "opinionxf":
        raise FormatError(f"checkpoint kind {meta['kind']!r} is not a neural model")
    with np.load(path, allow_pickle=False) as z:
        arrays = {k[6:]: z[k] for k in z.files if k.startswith("param/")}
        buffers = {k[7:]: z[k] for k in z.files if k.startswith("buffer/")}
        decks_vec = {k[5:]: z[k] for k in z.files if k.startswith("deck/")}
    sources = meta.get("deck_sources", {})
    return Checkpoint(
        params=OpinionXfParams(arrays, buffers),
        model_config=ModelConfig.from_dict(meta["model_config"]),
        vocab=AnswerVocabulary.from_list(meta["vocab"]),
        deck_vectors={k: embeddings.PresentationVector(k, v, sources.get(k, "hashed"))
                      for k, v in decks_vec.items()},
        decks=[embeddings.DeckText(d["deck_id"], tuple(d["slides"]), tuple(d["topic_keywords"]))
               for d in meta["decks"]],
        epoch=meta["epoch"],
        val_loss=meta["val_loss"],
        val_macro_f1=meta["val_macro_f1"],
        config_hash=meta["config_hash"],
        train_config=meta.get("train_config", {}),
    )


def config_hash(*configs):
    blob = json.dumps([c.to_dict() if hasattr(c, "to_dict") else c for c in configs],
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------

def loss_and_grads(params, trainable, model_config, train_config, pre, post, decks, rng=None):
    P = as_tensors(params, trainable)
    loss, _ = total_loss(P, model_config, train_config, pre, post, decks, rng=rng)
    loss.backward()
    grads = {k: (P[k].grad if P[k].grad is not None else np.zeros_like(P[k].data)) for k in trainable}
    return loss.item(), grads


def _sharded_loss_and_grads(pool, n_shards, params, trainable, mc, tc, pre, post, decks):
    B = len(pre)
    bounds = np.linspace(0, B, n_shards + 1).astype(int)
    jobs = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi > lo:
            jobs.append((hi - lo, pool.submit(loss_and_grads, params, trainable, mc, tc,
                                              pre[lo:hi], post[lo:hi], decks[lo:hi])))
    loss, grads = 0.0, {k: np.zeros_like(params[k]) for k in trainable}
    for size, job in jobs:  # fixed shard order keeps the reduction deterministic
        l, g = job.result()
        w = size / B
        loss += w * l
        for k in trainable:
            grads[k] += w * g[k]
    return loss, grads


def evaluate_loss(params, model_config, train_config, data, batch_size=256):
    P = as_tensors(params)
    total, n = 0.0, len(data)
    for lo in range(0, n, batch_size):
        hi = min(n, lo + batch_size)
        loss, _ = total_loss(P, model_config, train_config, data.pre[lo:hi], data.post[lo:hi],
                             data.decks[lo:hi])
        total += loss.item() * (hi - lo)
    return total / n


def model_config_for(vocab, embedding_dim, **overrides):
    return ModelConfig(vocab_sizes=vocab.sizes, embedding_dim=embedding_dim, **overrides)


def train(split, decks, config, model_config, *, embedder=None, vocab=None, log=None):
    """Fit OpinionXf on ``split.train``; keep the parameters with the lowest validation loss.

    ``decks`` is a list of :class:`~opinionxf.embeddings.DeckText`. Returns
    ``(Checkpoint, TrainHistory)``.
    """
    if not split.train or not split.validation:
        raise ConfigError("training needs non-empty train and validation sets")
    embedder = embedder or embeddings.Embedder(model_config.embedding_dim)
    if embedder.dim != model_config.embedding_dim:
        raise ConfigError(f"embedder dimension {embedder.dim} != model embedding_dim "
                          f"{model_config.embedding_dim}")
    vocab = vocab or build_vocabulary(split.train + split.validation)
    if list(vocab.sizes) != list(model_config.vocab_sizes):
        raise ConfigError(f"vocabulary sizes {vocab.sizes} do not match model {model_config.vocab_sizes}")
    deck_vectors = embedder.deck_vectors(decks)
    train_data = encode_dataset(split.train, vocab, decks, deck_vectors)
    val_data = encode_dataset(split.validation, vocab, decks, deck_vectors)

    params = init_params(model_config, embeddings.init_answer_table(vocab, embedder.answer))
    trainable = params.trainable_names(model_config)
    arrays = params.arrays
    state = AdamState()
    rng = np.random.default_rng(config.seed)
    drop_rng = np.random.default_rng([config.seed, 1]) if model_config.dropout > 0 else None
    B = config.resolved_batch_size(model_config)
    n = len(train_data)
    steps_per_epoch = math.ceil(n / B)
    total_steps = steps_per_epoch * config.epochs
    history = TrainHistory()
    best = None
    chash = config_hash(model_config, config)
    step = 0
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n)
            seen, running, lr = 0, 0.0, config.lr_max
            for lo in range(0, n, B):
                idx = order[lo:lo + B]
                pre, post, dv = train_data.pre[idx], train_data.post[idx], train_data.decks[idx]
                try:
                    if pool is not None:
                        loss, grads = _sharded_loss_and_grads(pool, config.threads, arrays, trainable,
                                                              model_config, config, pre, post, dv)
                    else:
                        loss, grads = loss_and_grads(arrays, trainable, model_config, config,
                                                     pre, post, dv, drop_rng)
                    if not math.isfinite(loss):
                        raise NumericError("loss is not finite")
                    grads, _ = clip_gradients(grads, config.clip_norm)
                except NumericError as exc:
                    raise TrainingFailure(str(exc), epoch, step) from exc
                if config.debug:
                    assert global_norm(grads) <= config.clip_norm + 1e-9
                lr = cosine_anneal_lr(step, total_steps, config.lr_max, config.lr_min)
                step += 1
                adamw_step(arrays, grads, state, step, lr, config.weight_decay,
                           config.beta1, config.beta2, config.adam_eps)
                running += loss * len(idx)
                seen += len(idx)
            try:
                val_loss = evaluate_loss(arrays, model_config, config, val_data)
            except NumericError as exc:
                raise TrainingFailure(str(exc), epoch, step) from exc
            preds = predict_batch(arrays, model_config, val_data.pre, val_data.decks)[0]
            val_f1 = macro_f1(preds, val_data.post)
            history.append(epoch=epoch, train_loss=running / seen, val_loss=val_loss,
                           val_macro_f1=val_f1, lr=lr)
            if log is not None:
                log(f"epoch {epoch:3d}  train {running / seen:.4f}  val {val_loss:.4f}  "
                    f"macroF1 {val_f1:.4f}  lr {lr:.2e}")
            if best is None or val_loss < best.val_loss:
                best = Checkpoint(params.copy(), model_config, vocab, deck_vectors, list(decks),
                                  epoch, val_loss, val_f1, chash, config.to_dict())
    finally:
        if pool is not None:
            pool.shutdown()
    return best, history
