"""Classification metrics and generator perplexity."""

import numpy as np

from .data import LabeledSequence
from .model import Backbone, PrefixBank, sequence_token_logprobs
from .tuning import gen_loss


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    return float(np.mean(y_true == y_pred))


def confusion_matrix(y_true, y_pred, num_labels: int) -> np.ndarray:
    c = np.zeros((num_labels, num_labels), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        c[int(t), int(p)] += 1
    return c


def macro_f1(y_true, y_pred, num_labels: int) -> float:
    """Mean per-class F1 over all classes; empty classes score 0."""
    c = confusion_matrix(y_true, y_pred, num_labels)
    f1s = []
    for k in range(num_labels):
        tp = c[k, k]
        fp = c[:, k].sum() - tp
        fn = c[k, :].sum() - tp
        denom = 2 * tp + fp + fn
        f1s.append(0.0 if denom == 0 else 2.0 * tp / denom)
    return float(np.mean(f1s))


def matthews_corr(y_true, y_pred, num_labels: int) -> tuple[float, bool]:
    """Multiclass Matthews correlation; (0, False) when undefined."""
    c = confusion_matrix(y_true, y_pred, num_labels).astype(np.float64)
    s = c.sum()
    trace = np.trace(c)
    pred_k = c.sum(axis=0)
    true_k = c.sum(axis=1)
    cov = trace * s - float(pred_k @ true_k)
    denom = np.sqrt(s * s - float(pred_k @ pred_k)) * np.sqrt(s * s - float(true_k @ true_k))
    if denom == 0.0:
        return 0.0, False
    return float(cov / denom), True


def perplexity(backbone: Backbone, prefixes: PrefixBank | None, label: int | None,
               dataset: list[LabeledSequence]) -> float:
    """exp of the mean per-sequence generative loss over included positions."""
    if not dataset:
        raise ValueError("empty dataset")
    losses = []
    for seq in dataset:
        lp, included = sequence_token_logprobs(backbone, prefixes, label, seq)
        losses.append(gen_loss(lp[included]))
    return float(np.exp(np.mean(losses)))
