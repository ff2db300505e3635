import unittest
import numpy as np
from qfedlab.errors import ConfigurationError, ShapeError, UndefinedMetricError
from qfedlab.metrics import MetricSet, compute_metrics, roc_auc, summarize_metrics


def brute_force_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


class TestAuc(unittest.TestCase):
    def test_matches_pair_counting(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 60))
            labels = rng.integers(0, 2, n)
            labels[0], labels[1] = 0, 1
            scores = rng.integers(0, 8, n) / 4.0
            self.assertAlmostEqual(roc_auc(scores, labels), brute_force_auc(scores, labels), places=12)

    def test_monotone_invariance(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=50)
        labels = rng.integers(0, 2, 50)
        self.assertAlmostEqual(roc_auc(scores, labels), roc_auc(np.exp(3 * scores) + 1, labels), places=12)

    def test_flipped_scores(self):
        rng = np.random.default_rng(2)
        scores = rng.normal(size=40)
        labels = rng.integers(0, 2, 40)
        self.assertAlmostEqual(roc_auc(scores, labels) + roc_auc(-scores, labels), 1.0, places=12)

    def test_single_class(self):
        with self.assertRaises(UndefinedMetricError):
            roc_auc([0.1, 0.2], [1, 1])
        with self.assertRaises(UndefinedMetricError):
            compute_metrics([0.1, 0.2], [0, 0])


class TestComputeMetrics(unittest.TestCase):
    def test_confusion_counts(self):
        m = compute_metrics([2.0, -1.0, 0.5, -3.0, 0.0], [1, 1, 0, 0, 1])
        self.assertEqual((m.tp, m.fp, m.tn, m.fn), (2, 1, 1, 1))
        self.assertEqual(m.accuracy, 0.6)
        self.assertAlmostEqual(m.recall, 2 / 3)

    def test_threshold_on_probabilities(self):
        m = compute_metrics([0.4, 0.6], [0, 1], threshold=0.5, probabilities=True)
        self.assertEqual(m.accuracy, 1.0)
        m = compute_metrics([0.4, 0.6], [0, 1], threshold=0.7, probabilities=True)
        self.assertEqual(m.recall, 0.0)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            compute_metrics([0.1, 0.2, 0.3], [0, 1])

    def test_empty_input(self):
        with self.assertRaises(ShapeError):
            compute_metrics([], [])

    def test_non_binary_labels(self):
        with self.assertRaises(ConfigurationError):
            compute_metrics([0.1, 0.2, 0.3], [0, 1, 2])
        with self.assertRaises(ConfigurationError):
            roc_auc([0.1, 0.2], [0.5, 1])

    def test_summary(self):
        m = compute_metrics([1.0, -1.0], [1, 0])
        self.assertEqual(m.summary(), {'accuracy': 1.0, 'recall': 1.0, 'auc': 1.0})
        self.assertEqual(m.df_dict()['tn'], 1)


class TestSummarize(unittest.TestCase):
    def test_mean_and_std(self):
        sets = [MetricSet(0.8, 0.6, 0.9, 0, 0, 0, 0), MetricSet(0.6, 0.4, 0.7, 0, 0, 0, 0)]
        summary = summarize_metrics(sets)
        self.assertAlmostEqual(summary['accuracy'], 0.7)
        self.assertAlmostEqual(summary['auc_std'], 0.1)
        self.assertEqual(sorted(summary), ['accuracy', 'accuracy_std', 'auc', 'auc_std', 'recall', 'recall_std'])


if __name__ == '__main__':
    unittest.main()
