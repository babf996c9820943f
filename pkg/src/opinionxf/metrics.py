"""Classification metrics over (record, question) answer grids.

Predictions and targets are ``(N, Q)`` arrays (a 1-D array is one question).
Macro-F1 is computed per question over the classes that appear in either the
predictions or the targets of that question, then averaged across questions.
A class with no predictions has precision 0; one with no gold cells has
recall 0; F1 is 0 whenever precision + recall is 0.
"""
import numpy as np

from .errors import EmptyInputError


def _as_grid(preds, targets):
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if preds.ndim == 1:
        preds = preds[:, None]
    if targets.ndim == 1:
        targets = targets[:, None]
    if preds.shape != targets.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {targets.shape}")
    if preds.size == 0:
        raise EmptyInputError("no cells to score")
    return preds, targets


def class_f1(pred_col, gold_col):
    """F1 per class present in either column, in sorted class order."""
    labels = np.union1d(np.unique(pred_col), np.unique(gold_col))
    scores = []
    for k in labels:
        tp = np.sum((pred_col == k) & (gold_col == k))
        n_pred = np.sum(pred_col == k)
        n_gold = np.sum(gold_col == k)
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_gold if n_gold else 0.0
        scores.append(0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall))
    return labels, np.array(scores)


def per_question_f1(preds, targets):
    preds, targets = _as_grid(preds, targets)
    return [float(class_f1(preds[:, q], targets[:, q])[1].mean()) for q in range(preds.shape[1])]


def macro_f1(preds, targets):
    return float(np.mean(per_question_f1(preds, targets)))


def micro_accuracy(preds, targets):
    preds, targets = _as_grid(preds, targets)
    return float(np.mean(preds == targets))


def shift_agreement(pre, post, preds):
    """Among cells whose answer changed, the fraction whose new answer was predicted."""
    pre, post, preds = np.asarray(pre), np.asarray(post), np.asarray(preds)
    shifted = pre != post
    if not shifted.any():
        return 0.0
    return float(np.mean(preds[shifted] == post[shifted]))
