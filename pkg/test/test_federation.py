import json
import os
import tempfile
import unittest
import numpy as np
from qfedlab._utils import spawn_generators
from qfedlab.aggregation import Centralized, FedAvg, FedRansel, make_aggregator
from qfedlab.data import SequenceSet
from qfedlab.errors import ConfigurationError, ProtocolError, TrainingDivergenceError
from qfedlab.federation import (FederationConfig, GlobalMerge, SharedSubset, apply_update, draw_share_fraction,
                                fedavg_round, make_nodes, merge_common, run_federation, sample_global, sample_local,
                                write_round_log)
from qfedlab.lstm import ClassicalLSTM
from qfedlab.nn import ParamStore
from qfedlab.threat import DPConfig


def arange_store(n):
    store = ParamStore()
    store.register('m', 'w', np.arange(float(n)))
    return store


def partitions(n_nodes, seed=0, size=24):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_nodes):
        labels = np.tile([0, 1], size // 2)
        seqs = rng.normal(size=(size, 2, 2)) + labels[:, None, None]
        out.append(SequenceSet(seqs, labels, np.arange(size)))
    return out


def build_nodes(cfg, seed=0):
    rngs = spawn_generators(seed, cfg.n_nodes, purpose=1)
    return make_nodes(cfg, lambda rng: ClassicalLSTM(2, 2, 2, rng), partitions(cfg.n_nodes, seed), rngs)


def small_cfg(**kwargs):
    args = dict(n_nodes=3, rounds=3, local_epochs=1, batch_size=8, lr=0.05)
    args.update(kwargs)
    return FederationConfig(**args).validate()


class TestLocalSampling(unittest.TestCase):
    def test_size_bounds(self):
        store = arange_store(50)
        rng = np.random.default_rng(0)
        for _ in range(200):
            subset = sample_local(store, 0.8, rng)
            self.assertGreaterEqual(len(subset.entries), 40)
            self.assertLessEqual(len(subset.entries), 50)
            for (param_id, value) in subset.entries.items():
                self.assertEqual(store[param_id], value)

    def test_fraction_in_range(self):
        rng = np.random.default_rng(1)
        draws = [draw_share_fraction(0.8, rng) for _ in range(2000)]
        self.assertTrue(all(0.8 < x <= 1.0 for x in draws))
        self.assertAlmostEqual(np.mean(draws), 0.9, delta=0.005)
        self.assertEqual(draw_share_fraction(1.0, rng), 1.0)

    def test_uniform_over_params(self):
        store = arange_store(10)
        rng = np.random.default_rng(2)
        trials = 10000
        counts = dict.fromkeys(store.ids(), 0)
        for _ in range(trials):
            for param_id in sample_local(store, 0.5, rng, fraction=0.5).entries:
                counts[param_id] += 1
        bound = 3 * np.sqrt(0.25 / trials)
        for param_id in counts:
            self.assertLess(abs(counts[param_id] / trials - 0.5), bound, msg=param_id)

    def test_full_share(self):
        store = arange_store(7)
        self.assertEqual(sample_local(store, 1.0, np.random.default_rng(0)).entries, store.to_dict())

    def test_bad_threshold(self):
        for bad in (0.0, -0.1, 1.5):
            with self.assertRaises(ConfigurationError):
                sample_local(arange_store(3), bad, np.random.default_rng(0))


class TestServer(unittest.TestCase):
    def test_merge_needs_two_nodes(self):
        with self.assertRaises(ProtocolError):
            merge_common([SharedSubset(0, {'a': 1.0})])

    def test_merge_three_nodes(self):
        merge = merge_common([SharedSubset(0, {'a': 1.0, 'b': 2.0, 'c': 3.0}),
                              SharedSubset(1, {'c': 6.0, 'a': 4.0}),
                              SharedSubset(2, {'a': 7.0, 'c': 0.0, 'd': 1.0})])
        self.assertEqual(merge.common, ('a', 'c'))
        self.assertEqual(merge.averaged, {'a': 4.0, 'c': 3.0})

    def test_empty_intersection(self):
        merge = merge_common([SharedSubset(0, {'a': 1.0}), SharedSubset(1, {'b': 1.0})])
        self.assertEqual(merge.common, ())
        self.assertEqual(sample_global(merge, 0.8, np.random.default_rng(0)).final, {})

    def test_global_sample_uniform_over_keys(self):
        keys = ['p' + str(i) for i in range(10)]
        merge = GlobalMerge(tuple(keys), {k: float(i) for (i, k) in enumerate(keys)}, {})
        rng = np.random.default_rng(4)
        trials = 10000
        counts = dict.fromkeys(keys, 0)
        for _ in range(trials):
            for k in sample_global(merge, 0.5, rng).final:
                counts[k] += 1
        bound = 3 * np.sqrt(0.25 / trials)
        for k in keys:
            self.assertLess(abs(counts[k] / trials - 0.5), bound, msg=k)

    def test_global_sample_size(self):
        keys = ['p' + str(i) for i in range(37)]
        merge = GlobalMerge(tuple(keys), {k: float(i) for (i, k) in enumerate(keys)}, {})
        final = sample_global(merge, 0.8, np.random.default_rng(3)).final
        self.assertEqual(len(final), 30)
        for k in final:
            self.assertEqual(final[k], merge.averaged[k])

    def test_containment_chain(self):
        stores = [arange_store(40) for _ in range(4)]
        rngs = spawn_generators(11, 4)
        for _ in range(20):
            subsets = [sample_local(s, 0.8, r, node_id=i) for (i, (s, r)) in enumerate(zip(stores, rngs))]
            merge = sample_global(merge_common(subsets), 0.8, rngs[0])
            self.assertTrue(set(merge.final) <= set(merge.averaged) == set(merge.common))
            for subset in subsets:
                self.assertTrue(set(merge.common) <= set(subset.entries) <= set(stores[0].ids()))

    def test_common_nonempty_at_model_scale(self):
        store = ClassicalLSTM(20, 4, 2, np.random.default_rng(0)).store
        rngs = spawn_generators(5, 5)
        sizes = []
        for _ in range(20):
            sizes.append(len(merge_common([sample_local(store, 0.8, r, node_id=i) for (i, r) in enumerate(rngs)]).common))
        self.assertGreater(min(sizes), 0)
        self.assertTrue(0.4 < np.mean(sizes) / len(store) < 0.8)

    def test_apply_update(self):
        store = arange_store(5)
        apply_update(store, {'m/w/1': -1.0, 'm/w/3': -3.0})
        self.assertEqual(store.values.tolist(), [0.0, -1.0, 2.0, -3.0, 4.0])
        with self.assertRaises(ProtocolError):
            apply_update(store, {'m/w/0': 9.0, 'x/w/0': 1.0})
        self.assertEqual(store['m/w/0'], 0.0)

    def test_fedavg_round(self):
        a, b = arange_store(3), arange_store(3)
        b.values[:] = [2.0, 2.0, 2.0]
        mean = fedavg_round([a, b])
        self.assertEqual(mean, {'m/w/0': 1.0, 'm/w/1': 1.5, 'm/w/2': 2.0})
        np.testing.assert_array_equal(a.values, b.values)
        with self.assertRaises(ProtocolError):
            fedavg_round([a, arange_store(4)])


class TestAggregators(unittest.TestCase):
    def test_full_selection_equals_fedavg(self):
        cfg = small_cfg()
        ransel_nodes, _ = run_federation(cfg, build_nodes(cfg), FedRansel(1.0, 1.0, np.random.default_rng(9)))
        avg_nodes, _ = run_federation(cfg, build_nodes(cfg), FedAvg())
        for (r, a) in zip(ransel_nodes, avg_nodes):
            np.testing.assert_allclose(r.store.values, a.store.values, rtol=0, atol=1e-12)

    def test_one_round_without_training_reaches_mean(self):
        cfg = small_cfg(init='independent', local_epochs=0, rounds=1)
        nodes = build_nodes(cfg)
        expected = np.mean([n.store.values for n in nodes], axis=0)
        self.assertFalse(np.allclose(nodes[0].store.values, nodes[1].store.values))
        nodes, records = run_federation(cfg, nodes, FedRansel(1.0, 1.0, np.random.default_rng(0)))
        for node in nodes:
            np.testing.assert_allclose(node.store.values, expected, atol=1e-12)
        self.assertEqual(records[0]['final'], len(nodes[0].store))

    def test_shared_init(self):
        nodes = build_nodes(small_cfg())
        for node in nodes[1:]:
            np.testing.assert_array_equal(node.store.values, nodes[0].store.values)

    def test_skip_when_nothing_is_common(self):
        cfg = small_cfg(n_nodes=2)
        nodes = build_nodes(cfg, seed=3)
        ids = nodes[0].store.ids()
        nodes[0]._set_share_hook(lambda s: SharedSubset(s.node_id, {ids[0]: 100.0}))
        nodes[1]._set_share_hook(lambda s: SharedSubset(s.node_id, {ids[1]: 100.0}))
        before = [n.store.values.copy() for n in nodes]
        with self.assertLogs('qfedlab.aggregation', level='WARNING'):
            record = FedRansel(0.8, 0.8, np.random.default_rng(0)).aggregate(nodes, 1)
        self.assertTrue(record['skipped'])
        self.assertEqual((record['common'], record['final']), (0, 0))
        for (node, values) in zip(nodes, before):
            np.testing.assert_array_equal(node.store.values, values)

    def test_server_never_sends_a_full_model(self):
        cfg = small_cfg(n_nodes=5, rounds=4)
        nodes, records = run_federation(cfg, build_nodes(cfg), FedRansel(0.8, 0.8, np.random.default_rng(1)))
        n_params = len(nodes[0].store)
        for record in records:
            self.assertLess(record['final'], n_params)
            self.assertLessEqual(record['final'], record['common'])
            self.assertTrue(all(s <= n_params for s in record['shared']))

    def test_dp_without_noise_and_loose_bound_is_fedavg(self):
        cfg = small_cfg(rounds=2)
        dp = DPConfig(norm_bound=1e9, noise_scale=0.0)
        defended, _ = run_federation(cfg, build_nodes(cfg), FedAvg(dp=dp, rng=np.random.default_rng(0)))
        plain, _ = run_federation(cfg, build_nodes(cfg), FedAvg())
        for (d, p) in zip(defended, plain):
            np.testing.assert_allclose(d.store.values, p.store.values, atol=1e-10)

    def test_dp_tight_bound_keeps_round_start(self):
        cfg = small_cfg(init='independent')
        nodes = build_nodes(cfg)
        for node in nodes:
            node.begin_round()
        start = np.mean([n.store.values for n in nodes], axis=0)
        for node in nodes:
            node.store.values[:] += 1.0
        FedAvg(dp=DPConfig(norm_bound=1e-9, noise_scale=0.0), rng=np.random.default_rng(0)).aggregate(nodes, 1)
        for node in nodes:
            np.testing.assert_allclose(node.store.values, start, atol=1e-8)

    def test_centralized_exchanges_nothing(self):
        cfg = small_cfg(n_nodes=1, aggregation='centralized')
        nodes, records = run_federation(cfg, build_nodes(cfg), Centralized())
        self.assertEqual(len(records), 3)
        self.assertTrue(all(r['skipped'] for r in records))

    def test_partial_broadcast_keeps_local_values(self):
        cfg = small_cfg(n_nodes=4, rounds=3)
        checked = []

        class CheckedRansel(FedRansel):
            def _broadcast(ransel, nodes, final):
                before = [n.store.to_dict() for n in nodes]
                super()._broadcast(nodes, final)
                for (node, values) in zip(nodes, before):
                    for (param_id, value) in node.store.to_dict().items():
                        self.assertEqual(value, final[param_id] if param_id in final else values[param_id])
                checked.append(len(final) < len(before[0]))

        nodes, _ = run_federation(cfg, build_nodes(cfg), CheckedRansel(0.8, 0.8, np.random.default_rng(2)))
        self.assertEqual(checked, [True] * 3)
        self.assertTrue(any(not np.array_equal(a.store.values, b.store.values) for a in nodes for b in nodes))

    def test_round_log_shares(self):
        cfg = small_cfg(rounds=2, log_shares=True)
        nodes, records = run_federation(cfg, build_nodes(cfg), make_aggregator(cfg, np.random.default_rng(0)))
        for record in records:
            self.assertEqual([len(pairs) for pairs in record['shares']], record['shared'])
            for pairs in record['shares']:
                ids = [p for (p, _) in pairs]
                self.assertEqual(ids, sorted(ids))
                self.assertTrue(all(type(v) is float for (_, v) in pairs))
        _, plain = run_federation(small_cfg(rounds=1), build_nodes(small_cfg(rounds=1)), FedAvg())
        self.assertNotIn('shares', plain[0])

    def test_make_aggregator(self):
        rng = np.random.default_rng(0)
        self.assertIsInstance(make_aggregator(small_cfg(), rng), FedRansel)
        self.assertIsInstance(make_aggregator(small_cfg(aggregation='fedavg'), rng), FedAvg)
        self.assertIsInstance(make_aggregator(small_cfg(n_nodes=1, aggregation='centralized'), rng), Centralized)


class TestFederationRun(unittest.TestCase):
    def run_once(self, seed=0):
        cfg = small_cfg(rounds=2)
        test = partitions(1, seed=99, size=20)[0]
        rng = spawn_generators(seed, 1, purpose=2)[0]
        return run_federation(cfg, build_nodes(cfg, seed), FedRansel(0.8, 0.8, rng), test=test)

    def test_replay_is_identical(self):
        (nodes_a, records_a), (nodes_b, records_b) = self.run_once(), self.run_once()
        for (a, b) in zip(nodes_a, nodes_b):
            np.testing.assert_array_equal(a.store.values, b.store.values)
        self.assertEqual(json.dumps(records_a, sort_keys=True, default=float), json.dumps(records_b, sort_keys=True, default=float))

    def test_records(self):
        _, records = self.run_once()
        self.assertEqual([r['round'] for r in records], [1, 2])
        self.assertEqual(len(records[0]['train_loss']), 3)
        self.assertEqual(len(records[0]['metrics']), 3)
        self.assertIn('auc', records[0]['metrics'][0])

    def test_round_log_file(self):
        _, records = self.run_once()
        with tempfile.TemporaryDirectory() as d:
            paths = [os.path.join(d, 'a.jsonl'), os.path.join(d, 'b.jsonl')]
            write_round_log(records, paths[0])
            write_round_log(self.run_once()[1], paths[1])
            with open(paths[0], 'rb') as f:
                first = f.read()
            with open(paths[1], 'rb') as f:
                self.assertEqual(first, f.read())
            lines = first.decode().splitlines()
            self.assertEqual(len(lines), 2)
            self.assertEqual(json.loads(lines[1])['round'], 2)

    def test_divergence_names_node_and_round(self):
        cfg = small_cfg(rounds=1)
        nodes = build_nodes(cfg)
        nodes[1].store.values[:] = np.nan
        with self.assertRaises(TrainingDivergenceError) as ctx:
            run_federation(cfg, nodes, FedAvg())
        self.assertIn('Node 1', str(ctx.exception))
        self.assertIn('round 1', str(ctx.exception))

    def test_config_validation(self):
        for bad in (dict(n_nodes=1), dict(local_threshold=0.0), dict(global_ratio=1.2), dict(aggregation='median'),
                    dict(rounds=0), dict(init='zeros')):
            with self.assertRaises(ConfigurationError):
                FederationConfig(**bad).validate()


if __name__ == '__main__':
    unittest.main()
