import os
import tempfile
import unittest
import numpy as np
from qfedlab.errors import ConfigurationError, ProtocolError, ShapeError, TrainingDivergenceError
from qfedlab.nn import (Adam, LinearLayer, ParamStore, adam_step, bce_per_sample, bce_with_logits, make_optimizer,
                        sgd_step)


def small_store():
    store = ParamStore()
    store.register('a', 'w', np.arange(6.0).reshape(2, 3))
    store.register('b', 'bias', np.array([10.0, 11.0]))
    return store


class TestParamStore(unittest.TestCase):
    def test_ids_are_stable(self):
        self.assertEqual(small_store().ids(), small_store().ids())
        self.assertEqual(small_store().ids()[:2], ['a/w/0', 'a/w/1'])
        self.assertEqual(len(small_store()), 8)

    def test_tensor_views_share_memory(self):
        store = small_store()
        store.tensor('a', 'w')[1, 2] = -1.0
        self.assertEqual(store['a/w/5'], -1.0)
        store['b/bias/0'] = 3.0
        self.assertEqual(store.tensor('b', 'bias').tolist(), [3.0, 11.0])

    def test_update_is_selective(self):
        store = small_store()
        before = store.values.copy()
        store.update({'a/w/1': 100.0})
        changed = np.flatnonzero(store.values != before)
        self.assertEqual(changed.tolist(), [1])

    def test_unknown_id_writes_nothing(self):
        store = small_store()
        before = store.values.copy()
        with self.assertRaises(ProtocolError):
            store.update({'a/w/0': 5.0, 'z/w/0': 1.0})
        np.testing.assert_array_equal(store.values, before)

    def test_duplicate_registration(self):
        store = small_store()
        with self.assertRaises(ConfigurationError):
            store.register('a', 'w', np.zeros(2))
        with self.assertRaises(ConfigurationError):
            store.register('a/b', 'w', np.zeros(2))

    def test_copy_is_independent(self):
        store = small_store()
        other = store.copy()
        other.values[:] = 0.0
        self.assertEqual(store['b/bias/1'], 11.0)
        self.assertEqual(other.ids(), store.ids())

    def test_checkpoint_roundtrip(self):
        store = small_store()
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, 'params.json')
            store.save(path)
            restored = small_store()
            restored.values[:] = 0.0
            restored.load(path)
            np.testing.assert_array_equal(restored.values, store.values)
            other = ParamStore()
            other.register('c', 'w', np.zeros(8))
            with self.assertRaises(ProtocolError):
                other.load(path)


class TestLinearLayer(unittest.TestCase):
    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        store = ParamStore()
        layer = LinearLayer(store, 'lin', 3, 2, rng)
        x = rng.normal(size=(4, 3))
        dy = rng.normal(size=(4, 2))
        dx = layer.backward(x, dy)
        analytic = store.grads.copy()

        def objective():
            return float(np.sum(layer.forward(x) * dy))

        h = 1e-6
        for i in range(len(store)):
            store.values[i] += h
            up = objective()
            store.values[i] -= 2 * h
            down = objective()
            store.values[i] += h
            self.assertAlmostEqual(analytic[i], (up - down) / (2 * h), places=6)
        np.testing.assert_allclose(dx, dy @ store.tensor('lin', 'weight'))

    def test_shape_error(self):
        layer = LinearLayer(ParamStore(), 'lin', 3, 2, np.random.default_rng(0))
        with self.assertRaises(ShapeError):
            layer.forward(np.zeros((2, 4)))

    def test_identity_init(self):
        store = ParamStore()
        layer = LinearLayer(store, 'lin', 2, 2, init='identity')
        np.testing.assert_array_equal(layer.forward(np.array([[1.0, 2.0]])), [[1.0, 2.0]])


class TestLoss(unittest.TestCase):
    def test_ln2_at_zero_logit(self):
        self.assertAlmostEqual(bce_with_logits([0.0], [1]).value, np.log(2), places=12)
        self.assertAlmostEqual(bce_with_logits([0.0], [0]).value, np.log(2), places=12)

    def test_stable_for_large_logits(self):
        losses = bce_per_sample([1000.0, -1000.0, 1000.0], [1, 0, 0])
        self.assertTrue(np.all(np.isfinite(losses)))
        self.assertAlmostEqual(losses[0], 0.0, places=12)
        self.assertAlmostEqual(losses[2], 1000.0, places=9)

    def test_gradient_matches_finite_differences(self):
        logits = np.array([0.3, -1.2, 2.0])
        labels = np.array([1, 0, 0])
        grad = bce_with_logits(logits, labels).grad
        h = 1e-6
        for i in range(3):
            up, down = logits.copy(), logits.copy()
            up[i] += h
            down[i] -= h
            fd = (bce_with_logits(up, labels).value - bce_with_logits(down, labels).value) / (2 * h)
            self.assertAlmostEqual(grad[i], fd, places=8)

    def test_bad_batches(self):
        with self.assertRaises(ShapeError):
            bce_with_logits([0.0, 1.0], [1])
        with self.assertRaises(ConfigurationError):
            bce_with_logits([0.0], [2])


class TestOptimizers(unittest.TestCase):
    def test_sgd(self):
        store = small_store()
        store.grads[:] = 1.0
        sgd_step(store, 0.5)
        self.assertEqual(store['b/bias/0'], 9.5)
        self.assertTrue(np.all(store.grads == 0.0))

    def test_adam_first_step_is_lr_times_sign(self):
        store = small_store()
        before = store.values.copy()
        store.grads[:] = np.linspace(-2, 2, len(store)) + 0.1
        adam_step(store, 0.01)
        np.testing.assert_allclose(before - store.values, 0.01 * np.sign(np.linspace(-2, 2, len(store)) + 0.1), rtol=1e-6)
        self.assertEqual(store.step, 1)

    def test_adam_minimizes_quadratic(self):
        store = ParamStore()
        store.register('q', 'x', np.array([3.0, -2.0]))
        opt = Adam(0.1)
        for _ in range(500):
            store.grads[:] = 2 * store.values
            opt.step(store)
        np.testing.assert_allclose(store.values, [0.0, 0.0], atol=5e-2)

    def test_non_finite_gradient(self):
        store = small_store()
        store.grads[0] = np.nan
        with self.assertRaises(TrainingDivergenceError):
            sgd_step(store, 0.1)
        with self.assertRaises(TrainingDivergenceError):
            adam_step(store, 0.1)

    def test_make_optimizer(self):
        self.assertIsInstance(make_optimizer('adam', 0.1), Adam)
        with self.assertRaises(ConfigurationError):
            make_optimizer('rmsprop', 0.1)


if __name__ == '__main__':
    unittest.main()
