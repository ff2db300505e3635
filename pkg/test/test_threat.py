import os
import unittest
import numpy as np
from qfedlab.data import SequenceSet
from qfedlab.errors import ConfigurationError, StatisticalPowerError, UndefinedMetricError
from qfedlab.federation import SharedSubset
from qfedlab.metrics import compute_metrics
from qfedlab.nn import ParamStore
from qfedlab.threat import (AttackConfig, DPConfig, PoisonConfig, clip_update, degradation_report, dp_defend,
                            flip_labels, loss_threshold_attack, membership_inference, poison_params, poison_subset,
                            poisson_noise)

SLOW = os.environ.get('QFEDLAB_SLOW') == '1'


class ConstantModel:
    """Scores every sequence with the same logit."""
    def per_sample_loss(self, seqs, labels):
        from qfedlab.nn import bce_per_sample
        return bce_per_sample(np.full(len(labels), 0.3), labels)


class TestLabelFlip(unittest.TestCase):
    def partition(self, n=1000):
        labels = np.random.default_rng(0).integers(0, 2, n)
        return SequenceSet(np.arange(n * 2.0).reshape(n, 1, 2), labels, np.arange(n)[:, None])

    def test_no_flip(self):
        part = self.partition()
        np.testing.assert_array_equal(flip_labels(part, 0.0, np.random.default_rng(1)).labels, part.labels)

    def test_flip_rate(self):
        part = self.partition(4000)
        flipped = flip_labels(part, 0.8, np.random.default_rng(2))
        rate = np.mean(flipped.labels != part.labels)
        self.assertLess(abs(rate - 0.8), 4 * np.sqrt(0.16 / 4000))
        self.assertTrue(set(np.unique(flipped.labels)) <= {0, 1})

    def test_features_untouched(self):
        part = self.partition()
        flipped = flip_labels(part, 1.0, np.random.default_rng(3))
        self.assertIs(flipped.sequences, part.sequences)
        np.testing.assert_array_equal(flipped.labels, 1 - part.labels)


class TestModelPoisoning(unittest.TestCase):
    def test_poisson_moments(self):
        n, lam = 200000, 0.1
        noise = poisson_noise(n, lam, np.random.default_rng(4))
        self.assertLess(abs(noise.mean()), 4 * np.sqrt(lam / n))
        self.assertLess(abs(noise.var() - lam), 4 * np.sqrt((lam + 2 * lam**2) / n))

    def test_uncentered_is_nonnegative_integers(self):
        noise = poisson_noise(1000, 2.0, np.random.default_rng(5), centered=False)
        self.assertTrue(np.all(noise >= 0))
        np.testing.assert_array_equal(noise, np.round(noise))

    def test_poison_params_returns_copy(self):
        store = ParamStore()
        store.register('m', 'w', np.zeros(500))
        poisoned = poison_params(store, 1.0, np.random.default_rng(6))
        self.assertTrue(np.all(store.values == 0.0))
        self.assertFalse(np.all(poisoned.values == 0.0))
        self.assertEqual(poisoned.ids(), store.ids())

    def test_poison_subset_keeps_ids(self):
        subset = SharedSubset(3, {'a': 1.0, 'b': 2.0})
        poisoned = poison_subset(subset, 5.0, np.random.default_rng(7))
        self.assertEqual(poisoned.node_id, 3)
        self.assertEqual(list(poisoned.entries), ['a', 'b'])

    def test_bad_rate(self):
        with self.assertRaises(ConfigurationError):
            poisson_noise(3, 0.0, np.random.default_rng(0))


class TestMembershipInference(unittest.TestCase):
    def test_separable_losses(self):
        rng = np.random.default_rng(8)
        members = rng.choice([0.1, 0.2, 0.3], 200)
        nonmembers = rng.choice([0.7, 0.8], 200)
        report = loss_threshold_attack(members, nonmembers, rng)
        self.assertEqual(report.attack_accuracy, 1.0)
        self.assertEqual(report.n_eval, 200)

    def test_constant_model_is_a_coin_flip(self):
        members = SequenceSet(np.zeros((80, 1, 1)), np.zeros(80, dtype=int), np.arange(80)[:, None])
        nonmembers = SequenceSet(np.zeros((80, 1, 1)), np.zeros(80, dtype=int), np.arange(80)[:, None])
        report = membership_inference(ConstantModel(), members, nonmembers, np.random.default_rng(9))
        self.assertEqual(report.attack_accuracy, 0.5)

    def test_identical_distributions_near_chance(self):
        rng = np.random.default_rng(10)
        accuracies = [loss_threshold_attack(rng.exponential(size=500), rng.exponential(size=500), rng).attack_accuracy
                      for _ in range(20)]
        self.assertLess(abs(np.mean(accuracies) - 0.5), 0.03)

    def test_too_few_samples(self):
        with self.assertRaises(StatisticalPowerError):
            loss_threshold_attack(np.zeros(49), np.ones(49), np.random.default_rng(0))

    def test_unequal_sets(self):
        with self.assertRaises(ConfigurationError):
            loss_threshold_attack(np.zeros(60), np.ones(70), np.random.default_rng(0))

    def test_report_row(self):
        report = loss_threshold_attack(np.full(60, 0.2), np.full(60, 0.7), np.random.default_rng(0))
        row = report.df_dict()
        self.assertAlmostEqual(row['member_loss_mean'], 0.2)
        self.assertAlmostEqual(row['nonmember_loss_median'], 0.7)


class TestDifferentialPrivacy(unittest.TestCase):
    def test_clip_inside_ball(self):
        clipped, factor = clip_update({'a': 0.3, 'b': 0.4}, 5.0)
        self.assertEqual(factor, 1.0)
        self.assertEqual(clipped, {'a': 0.3, 'b': 0.4})

    def test_clip_onto_ball(self):
        rng = np.random.default_rng(11)
        update = {str(i): v for (i, v) in enumerate(rng.normal(size=100) * 10)}
        clipped, factor = clip_update(update, 5.0)
        self.assertLess(factor, 1.0)
        self.assertAlmostEqual(np.linalg.norm(list(clipped.values())), 5.0, places=10)
        for k in update:
            self.assertAlmostEqual(clipped[k], update[k] * factor, places=12)

    def test_noise_scale(self):
        n = 20000
        update = {str(i): 0.0 for i in range(n)}
        noised = np.array(list(dp_defend(update, DPConfig(5.0, 0.2), np.random.default_rng(12)).values()))
        self.assertLess(abs(noised.mean()), 4 * 0.2 / np.sqrt(n))
        self.assertLess(abs(noised.std() - 0.2), 4 * 0.2 / np.sqrt(2 * n))

    def test_zero_noise_is_clip_only(self):
        defended = dp_defend({'a': 6.0, 'b': 8.0}, DPConfig(5.0, 0.0), np.random.default_rng(0))
        self.assertAlmostEqual(defended['a'], 3.0)
        self.assertAlmostEqual(defended['b'], 4.0)

    def test_empty_update(self):
        with self.assertRaises(ConfigurationError):
            dp_defend({}, DPConfig(), np.random.default_rng(0))

    def test_config_validation(self):
        with self.assertRaises(ConfigurationError):
            DPConfig(norm_bound=0.0).validate()
        with self.assertRaises(ConfigurationError):
            DPConfig(noise_scale=-1.0).validate()


class TestAttackConfig(unittest.TestCase):
    def test_malicious_nodes_checked(self):
        with self.assertRaises(ConfigurationError):
            PoisonConfig(kind='label_flip', malicious_nodes=(0, 5)).validate(5)
        with self.assertRaises(ConfigurationError):
            PoisonConfig(kind='label_flip', malicious_nodes=(0, 1)).validate(2)
        PoisonConfig(kind='none', malicious_nodes=(0, 1)).validate(2)

    def test_is_malicious(self):
        cfg = PoisonConfig(kind='model_noise', malicious_nodes=(1,))
        self.assertTrue(cfg.is_malicious(1))
        self.assertFalse(cfg.is_malicious(0))
        self.assertFalse(PoisonConfig(malicious_nodes=(1,)).is_malicious(1))

    def test_bad_values(self):
        for bad in (dict(kind='backdoor'), dict(flip_prob=1.5), dict(lam=0.0)):
            with self.assertRaises(ConfigurationError):
                PoisonConfig(**bad).validate()
        with self.assertRaises(ConfigurationError):
            AttackConfig(defense='krum').validate()


class TestDegradation(unittest.TestCase):
    def test_percentages(self):
        report = degradation_report({'accuracy': 0.5, 'auc': 0.8}, {'accuracy': 0.25, 'auc': 0.88})
        self.assertEqual(report.metric.tolist(), ['accuracy', 'auc'])
        np.testing.assert_allclose(report['pct_change'], [-50.0, 10.0])

    def test_metric_sets(self):
        clean = compute_metrics([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0], probabilities=True)
        attacked = compute_metrics([0.9, 0.1, 0.8, 0.2], [1, 1, 0, 0], probabilities=True)
        report = degradation_report(clean, attacked).set_index('metric')
        self.assertEqual(report.loc['accuracy', 'pct_change'], -50.0)
        self.assertEqual(report.loc['recall', 'pct_change'], -50.0)

    def test_zero_clean_value(self):
        with self.assertRaises(UndefinedMetricError):
            degradation_report({'recall': 0.0}, {'recall': 0.5})

    def test_mismatched_metrics(self):
        with self.assertRaises(ConfigurationError):
            degradation_report({'recall': 0.5}, {'auc': 0.5})


@unittest.skipUnless(SLOW, "set QFEDLAB_SLOW=1 to run attack experiments")
class TestAttackExperiments(unittest.TestCase):
    SEEDS = (0, 1, 2, 3, 4)

    def base(self):
        from qfedlab.config import preset
        cfg = preset('learning')
        return cfg._replace(federation=cfg.federation._replace(n_nodes=5), seeds=self.SEEDS)

    def test_label_flip_directionality(self):
        from qfedlab.experiment import run_attack_eval
        cfg = self.base()
        cfg = cfg._replace(attack=cfg.attack._replace(poison=PoisonConfig('label_flip', 0.8, malicious_nodes=(0, 1))))
        runs, _ = run_attack_eval(cfg, defenses=('none', 'fedransel'))
        drops = {}
        for (defense, group) in runs.groupby('defense'):
            clean = group[group['run'] == 'clean'].set_index('seed')['accuracy']
            attacked = group[group['run'] == 'attacked'].set_index('seed')['accuracy']
            drops[defense] = float(np.median(clean - attacked))
        self.assertGreaterEqual(drops['none'], 0.05)
        self.assertLessEqual(drops['fedransel'], drops['none'])

    def test_membership_inference_directionality(self):
        from qfedlab.config import with_defense
        from qfedlab.experiment import run_single
        cfg = self.base()
        overfit = cfg._replace(data=cfg.data._replace(n_samples=1200),
                               federation=cfg.federation._replace(local_epochs=30),
                               attack=cfg.attack._replace(inference=True))
        medians = {}
        for defense in ('none', 'fedransel'):
            setting = with_defense(overfit, defense).validate()
            medians[defense] = float(np.median([run_single(setting, seed)[0]['mean']['attack_accuracy']
                                                for seed in setting.seeds]))
        self.assertGreater(medians['none'], 0.55)
        self.assertLessEqual(medians['fedransel'], medians['none'])


if __name__ == '__main__':
    unittest.main()
