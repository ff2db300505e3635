"""Binary classification metrics for fraud scores."""
from collections import namedtuple
import numpy as np
from scipy.special import expit
from scipy.stats import rankdata
if __package__ is None or __package__ == '':
    from errors import ConfigurationError, ShapeError, UndefinedMetricError
    from _utils import HasDfDict
else:
    from .errors import ConfigurationError, ShapeError, UndefinedMetricError
    from ._utils import HasDfDict


__all__ = ['MetricSet', 'SUMMARY_METRICS', 'roc_auc', 'compute_metrics', 'summarize_metrics']

SUMMARY_METRICS = ('accuracy', 'recall', 'auc')


class MetricSet(namedtuple('MetricSet', ['accuracy', 'recall', 'auc', 'tp', 'fp', 'tn', 'fn']), HasDfDict):
    DICT_COLUMNS = ['accuracy', 'recall', 'auc', 'tp', 'fp', 'tn', 'fn']

    def summary(self):
        return {m: getattr(self, m) for m in SUMMARY_METRICS}


def _check_labels(labels):
    labels = np.asarray(labels)
    if not np.all((labels == 0) | (labels == 1)):
        raise ConfigurationError("Labels must be 0 or 1")
    return labels.astype(int)


def roc_auc(scores, labels):
    """
    Probability that a random positive outscores a random negative, ties counting one half,
    via the Mann-Whitney rank sum.

    >>> roc_auc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0])
    0.75
    >>> roc_auc([0.5, 0.5], [1, 0])
    0.5
    """
    scores = np.asarray(scores, dtype=float)
    labels = _check_labels(labels)
    positives = labels == 1
    n_pos = int(positives.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC is undefined when only one class is present")
    ranks = rankdata(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def compute_metrics(scores, labels, threshold=0.5, probabilities=False):
    """
    Accuracy and recall at `threshold` on sigmoid(score), AUC on the raw ordering, and the
    confusion counts. Pass `probabilities=True` when scores are already in [0, 1].

    >>> m = compute_metrics([1.0, 0.0], [1, 0], probabilities=True)
    >>> (m.accuracy, m.recall, m.auc)
    (1.0, 1.0, 1.0)
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError("scores and labels must be vectors of equal length, got " + str(scores.shape) + " and " + str(labels.shape))
    if len(labels) == 0:
        raise ShapeError("Cannot compute metrics over an empty set of scores")
    labels = _check_labels(labels)
    probs = scores if probabilities else expit(scores)
    predicted = probs >= threshold
    actual = labels == 1
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    tn = int(np.sum(~predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    accuracy = (tp + tn) / len(labels)
    recall = tp / (tp + fn) if tp + fn > 0 else float('nan')
    return MetricSet(float(accuracy), float(recall), roc_auc(scores, labels), tp, fp, tn, fn)


def summarize_metrics(metric_sets):
    """Mean and standard deviation of accuracy, recall and AUC over several MetricSets."""
    out = {}
    for m in SUMMARY_METRICS:
        values = np.array([getattr(ms, m) for ms in metric_sets], dtype=float)
        out[m] = float(np.mean(values))
        out[m + '_std'] = float(np.std(values))
    return out
