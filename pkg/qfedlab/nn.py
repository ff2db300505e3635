"""
A small dense neural-network substrate: a flat registry of named scalar parameters,
linear layers with explicit backward passes, BCE-with-logits, and SGD/Adam.
"""
from collections import namedtuple
import json
import numpy as np
from scipy.special import expit
if __package__ is None or __package__ == '':
    from errors import ConfigurationError, ShapeError, TrainingDivergenceError, ProtocolError
else:
    from .errors import ConfigurationError, ShapeError, TrainingDivergenceError, ProtocolError


__all__ = ['ParamStore', 'LinearLayer', 'LossValue', 'linear_forward', 'bce_with_logits', 'bce_per_sample',
           'sgd_step', 'adam_step', 'SGD', 'Adam', 'make_optimizer']

CHECKPOINT_FORMAT = 'qfedlab-params/1'


class ParamStore:
    """
    Flat registry of named scalar parameters. Every scalar has a ParamId of the form
    "component/tensor/flat_index"; tensors are stored contiguously in registration order,
    so two stores built from the same model config have identical ID sequences.

    >>> store = ParamStore()
    >>> store.register('head', 'weight', np.array([[1.0, 2.0]]))
    >>> store.register('head', 'bias', np.zeros(1))
    >>> store.ids()
    ['head/weight/0', 'head/weight/1', 'head/bias/0']
    >>> store['head/weight/1']
    2.0
    >>> store.tensor('head', 'weight')
    array([[1., 2.]])

    Values are updated in place through ParamIds, as the federation server does:

    >>> store.update({'head/bias/0': 0.5})
    >>> store.tensor('head', 'bias')
    array([0.5])
    >>> store.update({'cell/weight/0': 1.0})
    Traceback (most recent call last):
    ...
    qfedlab.errors.ProtocolError: Unknown ParamId 'cell/weight/0'
    """
    def __init__(self):
        self.__ids = []
        self.__index = {}
        self.__tensors = {}
        self.__values = np.zeros(0)
        self.__grads = np.zeros(0)
        self.__slots = {}
        self.__step = 0

    def __len__(self):
        return len(self.__ids)

    def __contains__(self, param_id):
        return param_id in self.__index

    def __getitem__(self, param_id):
        return float(self.__values[self.__position(param_id)])

    def __setitem__(self, param_id, value):
        self.__values[self.__position(param_id)] = value

    def __str__(self):
        return "ParamStore(" + str(len(self)) + " params, " + str(len(self.__tensors)) + " tensors)"

    def __position(self, param_id):
        try:
            return self.__index[param_id]
        except KeyError:
            raise ProtocolError("Unknown ParamId " + repr(param_id))

    @property
    def values(self):
        return self.__values

    @property
    def grads(self):
        return self.__grads

    @property
    def step(self):
        return self.__step

    def advance(self):
        self.__step += 1
        return self.__step

    def register(self, component, tensor, values):
        values = np.asarray(values, dtype=float)
        if '/' in component or '/' in tensor:
            raise ConfigurationError("Component and tensor names may not contain '/': " + component + ", " + tensor)
        if (component, tensor) in self.__tensors:
            raise ConfigurationError("Tensor " + component + "/" + tensor + " is already registered")
        offset = len(self.__ids)
        self.__tensors[(component, tensor)] = (offset, values.shape)
        for i in range(values.size):
            param_id = component + "/" + tensor + "/" + str(i)
            self.__index[param_id] = offset + i
            self.__ids.append(param_id)
        self.__values = np.concatenate([self.__values, values.reshape(-1)])
        self.__grads = np.concatenate([self.__grads, np.zeros(values.size)])
        for name in self.__slots:
            self.__slots[name] = np.concatenate([self.__slots[name], np.zeros(values.size)])

    def __span(self, component, tensor):
        try:
            (offset, shape) = self.__tensors[(component, tensor)]
        except KeyError:
            raise ConfigurationError("No tensor " + component + "/" + tensor + " in " + str(self))
        return slice(offset, offset + int(np.prod(shape, dtype=int))), shape

    def tensor(self, component, tensor):
        """A writable view of one tensor's values."""
        span, shape = self.__span(component, tensor)
        return self.__values[span].reshape(shape)

    def grad(self, component, tensor):
        """A writable view of one tensor's gradient accumulator."""
        span, shape = self.__span(component, tensor)
        return self.__grads[span].reshape(shape)

    def tensors(self):
        return list(self.__tensors)

    def slot(self, name):
        """Per-entry optimizer state, created as zeros on first use."""
        if name not in self.__slots:
            self.__slots[name] = np.zeros(len(self))
        return self.__slots[name]

    def zero_grad(self):
        self.__grads[:] = 0.0

    def ids(self):
        return list(self.__ids)

    def positions(self, param_ids):
        return np.array([self.__position(p) for p in param_ids], dtype=int)

    def subset(self, param_ids):
        return dict(zip(param_ids, self.__values[self.positions(param_ids)].tolist()))

    def update(self, mapping):
        if len(mapping) == 0:
            return
        keys = list(mapping)
        self.__values[self.positions(keys)] = [mapping[k] for k in keys]

    def to_dict(self):
        return dict(zip(self.__ids, self.__values.tolist()))

    def copy(self):
        other = ParamStore()
        for ((component, tensor), _) in self.__tensors.items():
            other.register(component, tensor, self.tensor(component, tensor))
        other.grads[:] = self.__grads
        for name in self.__slots:
            other.slot(name)[:] = self.__slots[name]
        for _ in range(self.__step):
            other.advance()
        return other

    def save(self, path):
        """Checkpoint as JSON: ordered [ParamId, float64] pairs. Identical file => identical model."""
        with open(path, 'w') as f:
            json.dump({'format': CHECKPOINT_FORMAT, 'params': [[p, v] for (p, v) in zip(self.__ids, self.__values.tolist())]}, f)

    def load(self, path):
        with open(path) as f:
            data = json.load(f)
        if data.get('format') != CHECKPOINT_FORMAT:
            raise ConfigurationError("Not a parameter checkpoint: " + str(path))
        ids = [p for (p, _) in data['params']]
        if ids != self.__ids:
            raise ProtocolError("Checkpoint " + str(path) + " does not match this model's ParamId space")
        self.__values[:] = [v for (_, v) in data['params']]


class LinearLayer:
    """
    y = W x + b, with W (out_dim x in_dim) and b registered in a ParamStore.

    >>> store = ParamStore()
    >>> layer = LinearLayer(store, 'm', 2, 1, init='zeros')
    >>> store.tensor('m', 'weight')[:] = [[1.0, 1.0]]
    >>> store.tensor('m', 'bias')[:] = [0.5]
    >>> linear_forward(layer, np.array([2.0, 3.0]))
    array([5.5])
    """
    def __init__(self, store, component, in_dim, out_dim, rng=None, init='uniform'):
        if in_dim < 1 or out_dim < 1:
            raise ConfigurationError("Layer dimensions must be positive, got " + str((in_dim, out_dim)))
        self.store = store
        self.component = component
        self.in_dim = in_dim
        self.out_dim = out_dim
        if init == 'uniform':
            bound = 1.0 / np.sqrt(in_dim)
            weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        elif init == 'identity':
            if in_dim != out_dim:
                raise ConfigurationError("Identity initialization needs a square layer")
            weight = np.eye(in_dim)
        elif init == 'zeros':
            weight = np.zeros((out_dim, in_dim))
        else:
            raise ConfigurationError("Unknown layer initialization " + repr(init))
        store.register(component, 'weight', weight)
        store.register(component, 'bias', np.zeros(out_dim))

    def weight(self):
        return self.store.tensor(self.component, 'weight')

    def bias(self):
        return self.store.tensor(self.component, 'bias')

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(self.component + " expects inputs of width " + str(self.in_dim) + ", got shape " + str(x.shape))
        return x @ self.weight().T + self.bias()

    def backward(self, x, dy):
        """Accumulates parameter gradients for a (B, in_dim) batch and returns dL/dx."""
        self.store.grad(self.component, 'weight')[:] += dy.T @ x
        self.store.grad(self.component, 'bias')[:] += dy.sum(axis=0)
        return dy @ self.weight()


def linear_forward(layer, x):
    return layer.forward(x)


class LossValue(namedtuple('LossValue', ['value', 'grad'])):
    """Mean BCE loss and its gradient with respect to each logit."""
    pass


def _check_binary_batch(logits, labels):
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if logits.shape != labels.shape or logits.ndim != 1:
        raise ShapeError("logits and labels must be vectors of equal length, got " + str(logits.shape) + " and " + str(labels.shape))
    if len(logits) == 0:
        raise ConfigurationError("Cannot compute a loss over an empty batch")
    if not np.all((labels == 0) | (labels == 1)):
        raise ConfigurationError("Labels must be 0 or 1")
    return logits, labels


def bce_per_sample(logits, labels):
    logits, labels = _check_binary_batch(logits, labels)
    # log(1 + e^z) - y z == -[y log s(z) + (1 - y) log(1 - s(z))]
    return np.logaddexp(0.0, logits) - labels * logits


def bce_with_logits(logits, labels):
    """
    >>> round(bce_with_logits([0.0, 0.0], [1, 0]).value, 6)
    0.693147
    >>> bce_with_logits([0.0, 0.0], [1, 0]).grad.tolist()
    [-0.25, 0.25]
    """
    logits, labels = _check_binary_batch(logits, labels)
    value = float(np.mean(bce_per_sample(logits, labels)))
    return LossValue(value, (expit(logits) - labels) / len(logits))


def _check_gradients(store):
    if not np.all(np.isfinite(store.grads)):
        raise TrainingDivergenceError("Non-finite gradient in " + str(store))


def sgd_step(store, lr):
    """
    >>> store = ParamStore()
    >>> store.register('p', 'x', [1.0])
    >>> store.grads[:] = 0.5
    >>> sgd_step(store, 0.1)['p/x/0']
    0.95
    """
    if lr <= 0:
        raise ConfigurationError("Learning rate must be positive, got " + str(lr))
    _check_gradients(store)
    store.values[:] -= lr * store.grads
    store.zero_grad()
    return store


def adam_step(store, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    if lr <= 0:
        raise ConfigurationError("Learning rate must be positive, got " + str(lr))
    _check_gradients(store)
    g = store.grads
    m = store.slot('adam.m')
    v = store.slot('adam.v')
    t = store.advance()
    m[:] = beta1 * m + (1 - beta1) * g
    v[:] = beta2 * v + (1 - beta2) * g**2
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    store.values[:] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    store.zero_grad()
    return store


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, store):
        return sgd_step(store, self.lr)


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, store):
        return adam_step(store, self.lr, self.beta1, self.beta2, self.eps)


def make_optimizer(name, lr):
    if name == 'adam':
        return Adam(lr)
    if name == 'sgd':
        return SGD(lr)
    raise ConfigurationError("Unknown optimizer " + repr(name) + ", expected 'adam' or 'sgd'")
