"""End-to-end steps shared by the CLI: data generation, training, evaluation, comparison."""
from dataclasses import dataclass
import csv
import json
from pathlib import Path

import numpy as np

from . import embeddings
from .dataset import (
    AnswerVocabulary,
    answer_label,
    BayesOracle,
    build_vocabulary,
    generate_synthetic,
    load_records,
    measure_shift_rate,
    split,
    write_records,
)
from .evaluation import (
    MajorityBaseline,
    SystemResult,
    baseline_logreg,
    baseline_majority,
    baseline_meanpool_mlp,
    compare,
    evaluate_predictions,
    split_digest,
)
from .errors import ConfigError, FormatError, VocabularyError
from .training import (
    CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
    encode_dataset,
    load_checkpoint,
    model_config_for,
    read_checkpoint_meta,
    train,
)

NEURAL_VARIANTS = ("base", "fusion", "quantum")


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def shift_summary(records, generator):
    """Rows of (topic, question, measured, expected) shift rates."""
    measured = measure_shift_rate(records)
    oracle = BayesOracle(generator)
    rows = []
    for t in generator.topic_names:
        if t not in measured:
            continue
        for q in range(generator.n_questions):
            rows.append((t, q, float(measured[t][q]), oracle.expected_shift_rate(t, q)))
    return rows


def write_shift_summary(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["topic", "question", "measured", "expected"])
        for t, q, m, e in rows:
            w.writerow([t, q, repr(m), repr(e)])


def generate_files(run, out_dir=None):
    """Write dataset, deck and hashed-embedding files; return (paths, shift rows)."""
    if out_dir is not None:
        out_dir = Path(out_dir)
        dataset_path = out_dir / "dataset.jsonl"
        decks_path = out_dir / "decks.jsonl"
        emb_path = out_dir / "embeddings.txt"
    else:
        dataset_path, decks_path, emb_path = run.paths.dataset, run.paths.decks, run.paths.embeddings
    for p in (dataset_path, decks_path, emb_path):
        p.parent.mkdir(parents=True, exist_ok=True)
    gen = run.generator
    records = generate_synthetic(gen)
    decks = gen.decks()
    write_records(records, dataset_path)
    embeddings.write_decks(decks, decks_path)
    vectors = {}
    hashed = embeddings.Embedder(run.embedding_dim)
    for d in decks:
        vectors[embeddings.deck_key(d.deck_id)] = hashed.deck(d).vector
    vocab = build_vocabulary(records)
    for q in range(vocab.n_questions):
        for a in vocab.answers(q):
            vectors[embeddings.answer_key(a)] = hashed.answer(a)
    embeddings.write_precomputed(vectors, emb_path)
    rows = shift_summary(records, gen)
    write_shift_summary(rows, dataset_path.parent / "shift_rates.csv")
    return (dataset_path, decks_path, emb_path), rows


@dataclass
class Corpus:
    records: list
    decks: list
    embedder: embeddings.Embedder
    vocab: AnswerVocabulary


def load_corpus(run):
    if not run.paths.dataset.exists():
        raise ConfigError(f"dataset {run.paths.dataset} not found (run `opinionxf datagen` first)")
    records = load_records(run.paths.dataset, run.topics)
    decks = embeddings.load_decks(run.paths.decks) if run.paths.decks.exists() else run.generator.decks()
    pre = embeddings.load_precomputed(run.paths.embeddings) if run.paths.embeddings.exists() else None
    embedder = embeddings.Embedder(run.embedding_dim, pre)
    if embedder.dim != run.embedding_dim:
        raise ConfigError(f"embedding file has dimension {embedder.dim}, config says {run.embedding_dim}")
    return Corpus(records, decks, embedder, build_vocabulary(records))


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------

def train_variant(run, corpus, data_split, variant=None, log=None):
    mc = model_config_for(corpus.vocab, corpus.embedder.dim, **run.model_overrides(variant))
    ckpt, history = train(data_split, corpus.decks, run.training, mc, embedder=corpus.embedder,
                          vocab=corpus.vocab, log=log)
    ckpt.config_hash = run.digest()
    return ckpt, history


class BaselinePredictor:
    """Checkpoint-loadable wrapper around a fitted majority baseline."""

    def __init__(self, model, vocab, decks, deck_vectors):
        self.model = model
        self.vocab = vocab
        self.decks = decks
        self.deck_vectors = deck_vectors

    def encode(self, records):
        return encode_dataset(records, self.vocab, self.decks, self.deck_vectors)

    def predict_ids(self, data):
        return self.model.predict_ids(data)

    def save(self, path):
        meta = {
            "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": self.model.kind,
            "vocab": self.vocab.to_list(), "decks": [d.to_dict() for d in self.decks],
            "modes": [int(m) for m in self.model.modes],
        }
        arrays = {f"deck/{k}": v.vector for k, v in self.deck_vectors.items()}
        arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)


def load_predictor(path):
    meta = read_checkpoint_meta(path)
    if meta["kind"] == "opinionxf":
        return load_checkpoint(path)
    if meta["kind"] != "majority":
        raise FormatError(f"unsupported checkpoint kind {meta['kind']!r}")
    with np.load(path, allow_pickle=False) as z:
        vecs = {k[5:]: embeddings.PresentationVector(k[5:], z[k]) for k in z.files
                if k.startswith("deck/")}
    decks = [embeddings.DeckText(d["deck_id"], tuple(d["slides"]), tuple(d["topic_keywords"]))
             for d in meta["decks"]]
    return BaselinePredictor(MajorityBaseline(meta["modes"]), AnswerVocabulary.from_list(meta["vocab"]),
                             decks, vecs)


def evaluate_checkpoint(path, records):
    predictor = load_predictor(path)
    data = predictor.encode(records)
    return evaluate_predictions(predictor.predict_ids(data), data)


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

TABLE_NAMES = {
    "base": "Normal",
    "fusion": "Frequency based",
    "quantum": "Quantum based",
    "majority": "Majority class",
    "logreg": "Logistic regression",
    "meanpool_mlp": "Mean-pool MLP",
}


def run_comparison(run, corpus, out_dir, log=None):
    """Train the three neural variants and three baselines on one split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sp = split(corpus.records, run.split_ratio, run.seed)
    deck_vectors = corpus.embedder.deck_vectors(corpus.decks)
    train_data = encode_dataset(sp.train, corpus.vocab, corpus.decks, deck_vectors)
    val_data = encode_dataset(sp.validation, corpus.vocab, corpus.decks, deck_vectors)
    digest = split_digest(train_data, val_data)
    results, reports = [], {}

    for variant in NEURAL_VARIANTS:
        if log:
            log(f"== training {variant}")
        ckpt, history = train_variant(run, corpus, sp, variant, log)
        ckpt.save(out_dir / f"checkpoint_{variant}.npz")
        history.to_csv(out_dir / f"history_{variant}.csv")
        reports[variant] = evaluate_predictions(ckpt.predict_ids(val_data), val_data)

    sizes = corpus.vocab.sizes
    reports["majority"], majority = baseline_majority(train_data, val_data, sizes)
    BaselinePredictor(majority, corpus.vocab, corpus.decks, deck_vectors).save(out_dir / "majority.npz")
    reports["logreg"], _ = baseline_logreg(train_data, val_data, sizes)
    table = embeddings.init_answer_table(corpus.vocab, corpus.embedder.answer)
    d_model = run.model.get("d_model", 128)
    reports["meanpool_mlp"], _ = baseline_meanpool_mlp(train_data, val_data, table, run.training, d_model)

    for key, report in reports.items():
        results.append(SystemResult(TABLE_NAMES[key], report, digest))
        report.to_csv(out_dir / f"eval_{key}.csv")
        report.topics_to_csv(out_dir / f"per_topic_{key}.csv")
    comparison = compare(results)
    comparison.to_csv(out_dir / "comparison.csv")

    oracle_rows = None
    if oracle_applicable(run.generator, sp.validation):
        oracle = BayesOracle(run.generator)
        try:
            preds = np.array([[corpus.vocab.encode(q, a) for q, a in enumerate(row)]
                              for row in oracle.predict_records(sp.validation)])
        except VocabularyError:
            return comparison, reports, None
        oracle_report = evaluate_predictions(preds, val_data)
        oracle_report.to_csv(out_dir / "eval_bayes_oracle.csv")
        oracle_rows = (oracle_report, oracle.expected_macro_f1())
    return comparison, reports, oracle_rows


def oracle_applicable(generator, records):
    """The closed-form oracle only applies to records drawn from ``generator``."""
    names = set(generator.topic_names)
    labels = [set(answer_label(i) for i in range(V)) for V in generator.answers_per_question]
    for r in records:
        if r.topic not in names or len(r.pre_answers) != generator.n_questions:
            return False
        if any(a not in labels[q] for q, a in enumerate(r.pre_answers)):
            return False
    return True
