"""Reports, baselines and the model comparison table."""
from dataclasses import dataclass, field
import csv
import hashlib
import json
import math
import warnings

import numpy as np

from . import embeddings
from .errors import ComparisonError, EmptyInputError, FormatError
from .metrics import macro_f1, micro_accuracy, per_question_f1, shift_agreement
from .numerics import autograd as ag
from .training import (
    AdamState,
    EncodedData,
    TrainConfig,
    adamw_step,
    clip_gradients,
    cosine_anneal_lr,
    cross_entropy_total,
)

PER_TOPIC_FIELDS = ("topic", "macro_f1", "micro_accuracy", "shift_agreement", "shift_rate")


@dataclass
class EvalReport:
    macro_f1: float
    micro_accuracy: float
    per_question_f1: list
    per_topic: dict = field(default_factory=dict)
    n_eval: int = 0

    def rows(self):
        rows = [("macro_f1", self.macro_f1), ("micro_accuracy", self.micro_accuracy),
                ("n_eval", self.n_eval)]
        rows += [(f"f1_q{q}", v) for q, v in enumerate(self.per_question_f1)]
        return rows

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            for name, value in self.rows():
                w.writerow([name, value if name == "n_eval" else repr(float(value))])

    def topics_to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PER_TOPIC_FIELDS)
            for topic in sorted(self.per_topic):
                row = self.per_topic[topic]
                w.writerow([topic] + [repr(float(row[k])) for k in PER_TOPIC_FIELDS[1:]])

    @classmethod
    def from_csv(cls, path):
        values = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                values[row["metric"]] = float(row["value"])
        per_q = [values[k] for k in sorted((k for k in values if k.startswith("f1_q")),
                                           key=lambda k: int(k[4:]))]
        return cls(values["macro_f1"], values["micro_accuracy"], per_q, {}, int(values["n_eval"]))


def evaluate_predictions(preds, data):
    """EvalReport for ``(N, Q)`` predicted ids against ``data.post``, with per-topic breakdown."""
    preds = np.asarray(preds)
    if len(data) == 0:
        raise EmptyInputError("nothing to evaluate")
    topics = np.array(data.topics)
    per_topic = {}
    for t in sorted(set(data.topics)):
        rows = topics == t
        per_topic[t] = {
            "macro_f1": macro_f1(preds[rows], data.post[rows]),
            "micro_accuracy": micro_accuracy(preds[rows], data.post[rows]),
            "shift_agreement": shift_agreement(data.pre[rows], data.post[rows], preds[rows]),
            "shift_rate": float(np.mean(data.pre[rows] != data.post[rows])),
        }
    return EvalReport(macro_f1(preds, data.post), micro_accuracy(preds, data.post),
                      per_question_f1(preds, data.post), per_topic, len(data))


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

class MajorityBaseline:
    """Train-set modal post answer per question; ties go to the smallest id."""

    kind = "majority"

    def __init__(self, modes=None):
        self.modes = None if modes is None else np.asarray(modes, dtype=np.int64)

    def fit(self, data, vocab_sizes):
        self.modes = np.array([np.bincount(data.post[:, q], minlength=V).argmax()
                               for q, V in enumerate(vocab_sizes)])
        return self

    def predict_ids(self, data):
        return np.tile(self.modes, (len(data), 1))


def baseline_majority(train, eval_data, vocab_sizes):
    model = MajorityBaseline().fit(train, vocab_sizes)
    return evaluate_predictions(model.predict_ids(eval_data), eval_data), model


def one_hot_answers(pre, vocab_sizes):
    offsets = np.concatenate([[0], np.cumsum(vocab_sizes)[:-1]])
    X = np.zeros((pre.shape[0], int(np.sum(vocab_sizes))))
    rows = np.arange(pre.shape[0])[:, None]
    X[rows, pre + offsets] = 1.0
    return X


class LogisticBaseline:
    """Per-question multinomial logistic regression on the one-hot of all pre answers.

    Full-batch gradient descent from zero weights until the largest gradient
    entry drops below ``tol`` or ``max_iter`` is reached.
    """

    kind = "logreg"

    def __init__(self, step=1.0, max_iter=10000, tol=1e-4):
        self.step = step
        self.max_iter = max_iter
        self.tol = tol
        self.weights = []
        self.loss_history = []
        self.converged = []

    def fit(self, data, vocab_sizes):
        X = one_hot_answers(data.pre, vocab_sizes)
        Xb = np.hstack([X, np.ones((X.shape[0], 1))])
        n = X.shape[0]
        self.vocab_sizes = list(vocab_sizes)
        self.weights, self.loss_history, self.converged = [], [], []
        for q, V in enumerate(vocab_sizes):
            W = np.zeros((Xb.shape[1], V))
            Y = np.eye(V)[data.post[:, q]]
            losses, done = [], False
            for _ in range(self.max_iter):
                Z = Xb @ W
                Z -= Z.max(axis=1, keepdims=True)
                prob = np.exp(Z)
                prob /= prob.sum(axis=1, keepdims=True)
                losses.append(float(-np.mean(np.log(prob[np.arange(n), data.post[:, q]]))))
                grad = Xb.T @ (prob - Y) / n
                if np.abs(grad).max() < self.tol:
                    done = True
                    break
                W -= self.step * grad
            self.weights.append(W)
            self.loss_history.append(losses)
            self.converged.append(done)
        if not all(self.converged):
            bad = [q for q, ok in enumerate(self.converged) if not ok]
            warnings.warn(f"logistic baseline did not converge for questions {bad} "
                          f"after {self.max_iter} iterations", RuntimeWarning, stacklevel=2)
        return self

    def predict_ids(self, data):
        X = one_hot_answers(data.pre, self.vocab_sizes)
        Xb = np.hstack([X, np.ones((X.shape[0], 1))])
        return np.stack([(Xb @ W).argmax(axis=1) for W in self.weights], axis=1)


def baseline_logreg(train, eval_data, vocab_sizes, **kw):
    model = LogisticBaseline(**kw).fit(train, vocab_sizes)
    return evaluate_predictions(model.predict_ids(eval_data), eval_data), model


class MeanPoolMLP:
    """Mean of the pre answers' embedding vectors, concatenated with the deck vector,
    through one GELU hidden layer and one linear head per question."""

    kind = "meanpool_mlp"

    def __init__(self, answer_table, hidden=128, seed=0):
        self.tables = [np.asarray(t) for t in answer_table.tables]
        self.hidden = hidden
        self.seed = seed
        self.params = None

    def features(self, data):
        pooled = np.mean([self.tables[q][data.pre[:, q]] for q in range(len(self.tables))], axis=0)
        return np.hstack([pooled, data.decks])

    def _init(self, n_in):
        rng = np.random.default_rng(self.seed)
        b = 1.0 / math.sqrt(n_in)
        params = {"w1": rng.uniform(-b, b, (n_in, self.hidden)), "b1": np.zeros(self.hidden)}
        bh = 1.0 / math.sqrt(self.hidden)
        for q, t in enumerate(self.tables):
            params[f"head.{q}.weight"] = rng.uniform(-bh, bh, (self.hidden, t.shape[0]))
            params[f"head.{q}.bias"] = np.zeros(t.shape[0])
        return params

    def _logits(self, P, X):
        h = ag.gelu(ag.Tensor(X) @ P["w1"] + P["b1"])
        return [h @ P[f"head.{q}.weight"] + P[f"head.{q}.bias"] for q in range(len(self.tables))]

    def fit(self, data, config, val_data=None):
        X = self.features(data)
        self.params = params = self._init(X.shape[1])
        rng = np.random.default_rng(config.seed)
        B = config.batch_size or 64
        n = len(data)
        total = math.ceil(n / B) * config.epochs
        state, step = AdamState(), 0
        best, best_loss = None, math.inf
        Xv = None if val_data is None else self.features(val_data)
        for _ in range(config.epochs):
            order = rng.permutation(n)
            for lo in range(0, n, B):
                idx = order[lo:lo + B]
                P = {k: ag.Tensor(v, requires_grad=True) for k, v in params.items()}
                loss = cross_entropy_total(self._logits(P, X[idx]), data.post[idx])
                loss.backward()
                grads, _ = clip_gradients({k: P[k].grad for k in params}, config.clip_norm)
                lr = cosine_anneal_lr(step, total, config.lr_max, config.lr_min)
                step += 1
                adamw_step(params, grads, state, step, lr, config.weight_decay,
                           config.beta1, config.beta2, config.adam_eps)
            if Xv is not None:
                P = {k: ag.Tensor(v) for k, v in params.items()}
                vloss = cross_entropy_total(self._logits(P, Xv), val_data.post).item()
                if vloss < best_loss:
                    best_loss, best = vloss, {k: v.copy() for k, v in params.items()}
        if best is not None:
            self.params = best
        return self

    def predict_ids(self, data):
        P = {k: ag.Tensor(v) for k, v in self.params.items()}
        return np.stack([lg.data.argmax(axis=1) for lg in self._logits(P, self.features(data))],
                        axis=1)


def baseline_meanpool_mlp(train, eval_data, answer_table, config=None, hidden=128):
    config = config or TrainConfig()
    model = MeanPoolMLP(answer_table, hidden, config.seed).fit(train, config, eval_data)
    return evaluate_predictions(model.predict_ids(eval_data), eval_data), model


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

def split_digest(train, validation):
    blob = json.dumps([list(train.participant_ids), list(validation.participant_ids)])
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class SystemResult:
    name: str
    report: EvalReport
    split_digest: str


@dataclass
class ComparisonTable:
    rows: list  # (model, accuracy, f1)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "accuracy", "f1"])
            for name, acc, f1 in self.rows:
                w.writerow([name, f"{acc:.3f}", f"{f1:.3f}"])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["model", "accuracy", "f1"]:
                raise FormatError(f"unexpected comparison header {reader.fieldnames}")
            return cls([(r["model"], float(r["accuracy"]), float(r["f1"])) for r in reader])

    def rounded(self):
        return ComparisonTable([(n, round(a, 3), round(f, 3)) for n, a, f in self.rows])

    def format(self):
        width = max(len(r[0]) for r in self.rows)
        lines = [f"{'Model':<{width}}  Accuracy  F1-score"]
        lines += [f"{n:<{width}}  {a:8.3f}  {f:8.3f}" for n, a, f in self.rows]
        return "\n".join(lines)


def compare(results):
    """One row per system; every system must have been scored on the same split."""
    if not results:
        raise ComparisonError("nothing to compare")
    digests = {r.split_digest for r in results}
    if len(digests) != 1:
        raise ComparisonError("systems were evaluated on different splits")
    names = [r.name for r in results]
    if len(set(names)) != len(names):
        raise ComparisonError("duplicate system names")
    return ComparisonTable([(r.name, r.report.micro_accuracy, r.report.macro_f1) for r in results])
