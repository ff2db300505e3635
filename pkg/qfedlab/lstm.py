"""The classical LSTM baseline: every gate is an affine map of [x_t, h_{t-1}]."""
import numpy as np
if __package__ is None or __package__ == '':
    from model import GATE_KEYS, GateCell, SequenceModel
    from nn import LinearLayer, ParamStore
else:
    from .model import GATE_KEYS, GateCell, SequenceModel
    from .nn import LinearLayer, ParamStore


__all__ = ['LSTMCell', 'ClassicalLSTM', 'lstm_param_count', 'match_lstm_hidden']

MAX_MATCHED_HIDDEN = 128


class LSTMCell(GateCell):
    def __init__(self, store, input_dim, hidden_dim, rng):
        super().__init__(store, input_dim, hidden_dim)
        self.gate_maps = {key: LinearLayer(store, 'cell.lstm_' + key, input_dim + hidden_dim, hidden_dim, rng) for key in GATE_KEYS}

    def preactivations(self, x_t, h_prev, with_grad):
        v = np.concatenate([x_t, h_prev], axis=1)
        return {key: self.gate_maps[key].forward(v) for key in GATE_KEYS}, v

    def backward(self, inner, dz):
        dv = sum(self.gate_maps[key].backward(inner, dz[key]) for key in GATE_KEYS)
        return dv[:, :self.input_dim], dv[:, self.input_dim:]


class ClassicalLSTM(SequenceModel):
    """
    >>> ClassicalLSTM(input_dim=20, hidden_dim=4, seq_len=5, rng=np.random.default_rng(0)).n_params()
    405
    """
    KIND = 'lstm'

    def __init__(self, input_dim, hidden_dim, seq_len, rng):
        store = ParamStore()
        super().__init__(LSTMCell(store, input_dim, hidden_dim, rng), seq_len, rng)


def lstm_param_count(input_dim, hidden_dim):
    return len(GATE_KEYS) * (hidden_dim * (input_dim + hidden_dim) + hidden_dim) + hidden_dim + 1


def match_lstm_hidden(target_params, input_dim):
    """
    The hidden size whose LSTM parameter count is closest to `target_params`.

    >>> match_lstm_hidden(406, 20)
    4
    """
    return min(range(1, MAX_MATCHED_HIDDEN + 1), key=lambda h: (abs(lstm_param_count(input_dim, h) - target_params), h))
