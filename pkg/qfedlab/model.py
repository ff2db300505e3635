"""
Recurrent sequence classifiers built from a gated cell, a shared time loop and a logit head.

A GateCell only has to produce the four gate pre-activations (and their backward pass);
the LSTM state update c_t = f * c_{t-1} + i * g, h_t = o * tanh(c_t) and backpropagation
through time are shared by the quantum and the classical cell.
"""
import abc
from collections import namedtuple
import numpy as np
from scipy.special import expit
if __package__ is None or __package__ == '':
    from errors import ShapeError, TrainingDivergenceError, UsageError
    from nn import LinearLayer, bce_with_logits, bce_per_sample
    from _utils import chunks
else:
    from .errors import ShapeError, TrainingDivergenceError, UsageError
    from .nn import LinearLayer, bce_with_logits, bce_per_sample
    from ._utils import chunks


__all__ = ['GATE_KEYS', 'CellState', 'GateCell', 'SequenceModel', 'cell_forward', 'model_forward', 'model_backward']

# forget, input, candidate, output
GATE_KEYS = ('f', 'i', 'g', 'o')
DIVERGENCE_BOUND = 1e3


class CellState(namedtuple('CellState', ['h', 'c'])):
    @classmethod
    def zeros(cls, batch_size, hidden_dim):
        return cls(np.zeros((batch_size, hidden_dim)), np.zeros((batch_size, hidden_dim)))


CellRecord = namedtuple('CellRecord', ['inner', 'gates', 'c_prev', 'tanh_c', 'injected'])
ForwardRecord = namedtuple('ForwardRecord', ['seqs', 'cells', 'h_last'])


class GateCell(metaclass=abc.ABCMeta):
    def __init__(self, store, input_dim, hidden_dim):
        self.store = store
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim

    @abc.abstractmethod
    def preactivations(self, x_t, h_prev, with_grad):
        """Returns ({gate key: (B, H) pre-activation}, record for `backward`)."""
        pass

    @abc.abstractmethod
    def backward(self, inner, dz):
        """Accumulates parameter gradients from dL/dz per gate; returns (dL/dx_t, dL/dh_prev)."""
        pass

    def step(self, x_t, state, with_grad=False, gate_override=None):
        x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
        h_prev = np.atleast_2d(state.h)
        c_prev = np.atleast_2d(state.c)
        if x_t.shape[1] != self.input_dim or h_prev.shape[1] != self.hidden_dim or c_prev.shape != h_prev.shape:
            raise ShapeError("Cell expects x_t of width " + str(self.input_dim) + " and state of width " + str(self.hidden_dim) +
                             ", got " + str(x_t.shape) + ", " + str(h_prev.shape) + ", " + str(c_prev.shape))
        z, inner = self.preactivations(x_t, h_prev, with_grad)
        gates = {'f': expit(z['f']), 'i': expit(z['i']), 'o': expit(z['o']), 'g': np.tanh(z['g'])}
        injected = frozenset(gate_override or {})
        for key in injected:
            gates[key] = np.broadcast_to(np.asarray(gate_override[key], dtype=float), c_prev.shape).copy()

        c = gates['f'] * c_prev + gates['i'] * gates['g']
        if not np.all(np.isfinite(c)) or np.max(np.abs(c), initial=0.0) > DIVERGENCE_BOUND:
            raise TrainingDivergenceError("Cell state left the bound |c| <= " + str(DIVERGENCE_BOUND))
        tanh_c = np.tanh(c)
        h = gates['o'] * tanh_c
        return CellState(h, c), CellRecord(inner, gates, c_prev, tanh_c, injected)

    def step_backward(self, record, dh, dc):
        gates = record.gates
        (f, i, g, o) = (gates['f'], gates['i'], gates['g'], gates['o'])
        do = dh * record.tanh_c
        dc = dc + dh * o * (1.0 - record.tanh_c**2)
        dz = {
            'f': dc * record.c_prev * f * (1.0 - f),
            'i': dc * g * i * (1.0 - i),
            'g': dc * i * (1.0 - g**2),
            'o': do * o * (1.0 - o),
        }
        for key in record.injected:  # injected gates have no path back to the parameters
            dz[key] = np.zeros_like(dz[key])
        dx, dh_prev = self.backward(record.inner, dz)
        return dx, dh_prev, dc * f


class SequenceModel:
    """
    Applies one weight-shared cell over a (B, L, d) batch of sequences, starting from
    zero state, and maps the final hidden state to one fraud logit per sequence.
    """
    KIND = None

    def __init__(self, cell, seq_len, rng):
        if seq_len < 1:
            raise ShapeError("seq_len must be positive, got " + str(seq_len))
        self.cell = cell
        self.store = cell.store
        self.seq_len = seq_len
        self.input_dim = cell.input_dim
        self.hidden_dim = cell.hidden_dim
        self.head = LinearLayer(self.store, 'head', cell.hidden_dim, 1, rng)
        self.__record = None

    def __str__(self):
        return type(self).__name__ + "(input_dim=" + str(self.input_dim) + ", hidden_dim=" + str(self.hidden_dim) + \
            ", seq_len=" + str(self.seq_len) + ", params=" + str(self.n_params()) + ")"

    def n_params(self):
        return len(self.store)

    def _check_batch(self, seqs):
        seqs = np.asarray(seqs, dtype=float)
        if seqs.ndim == 2:
            seqs = seqs[None]
        if seqs.ndim != 3 or seqs.shape[1] != self.seq_len or seqs.shape[2] != self.input_dim:
            raise ShapeError("Expected sequences of shape (B, " + str(self.seq_len) + ", " + str(self.input_dim) + "), got " + str(seqs.shape))
        return seqs

    def forward(self, seqs, keep_record=False):
        seqs = self._check_batch(seqs)
        state = CellState.zeros(len(seqs), self.hidden_dim)
        cells = []
        for t in range(self.seq_len):
            state, record = self.cell.step(seqs[:, t], state, with_grad=keep_record)
            cells.append(record)
        logits = self.head.forward(state.h)[:, 0]
        self.__record = ForwardRecord(seqs, cells, state.h) if keep_record else None
        return logits

    def has_record(self, seqs=None):
        if self.__record is None:
            return False
        return seqs is None or np.array_equal(self.__record.seqs, self._check_batch(seqs))

    def backward(self, dlogits):
        """Backpropagation through time for the last recorded forward pass; gradients accumulate in the store."""
        if self.__record is None:
            raise UsageError("backward() needs a preceding forward(..., keep_record=True)")
        record = self.__record
        self.__record = None
        dlogits = np.asarray(dlogits, dtype=float).reshape(-1, 1)
        dh = self.head.backward(record.h_last, dlogits)
        dc = np.zeros_like(dh)
        for cell_record in reversed(record.cells):
            _, dh, dc = self.cell.step_backward(cell_record, dh, dc)
        return self.store

    def predict_logits(self, seqs, batch_size=256):
        seqs = self._check_batch(seqs)
        out = [self.forward(seqs[np.array(batch)]) for batch in chunks(range(len(seqs)), batch_size)]
        return np.concatenate(out) if out else np.zeros(0)

    def per_sample_loss(self, seqs, labels, batch_size=256):
        return bce_per_sample(self.predict_logits(seqs, batch_size), labels)

    def train_epoch(self, seqs, labels, optimizer, batch_size, rng):
        """One shuffled pass of mini-batch training; returns the sample-weighted mean loss."""
        seqs = self._check_batch(seqs)
        labels = np.asarray(labels, dtype=float)
        total = 0.0
        for batch in chunks(rng.permutation(len(seqs)), batch_size):
            idx = np.array(batch)
            logits = self.forward(seqs[idx], keep_record=True)
            loss = bce_with_logits(logits, labels[idx])
            self.store.zero_grad()
            self.backward(loss.grad)
            optimizer.step(self.store)
            total += loss.value * len(idx)
        return total / max(1, len(seqs))


def cell_forward(cell, x_t, state, with_grad=False, gate_override=None):
    """
    One time step. `gate_override` maps gate keys ('f', 'i', 'g', 'o') to values that replace
    the computed (post-activation) gate outputs.
    """
    return cell.step(x_t, state, with_grad=with_grad, gate_override=gate_override)


def model_forward(model, seq):
    """The fraud logit for a single (L, d) sequence."""
    seq = np.asarray(seq, dtype=float)
    if seq.ndim != 2 or seq.shape[0] != model.seq_len:
        raise ShapeError("Expected a sequence of " + str(model.seq_len) + " rows, got shape " + str(seq.shape))
    return float(model.forward(seq[None], keep_record=True)[0])


def model_backward(model, seq, upstream_dlogit):
    if not model.has_record(np.asarray(seq, dtype=float)[None]):
        raise UsageError("No forward record for this sequence; call model_forward first")
    return model.backward(np.array([upstream_dlogit], dtype=float))
