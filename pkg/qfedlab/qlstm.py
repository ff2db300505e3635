"""
The quantum LSTM: each of the four gates is produced by its own variational circuit.

    v = [x_t, h_{t-1}]  --in_map-->  a (one angle per qubit)
    a --VQC_G--> <Z> per wire --out_map_G--> z_G          for G in (f, i, g, o)
    f, i, o = sigmoid(z), g = tanh(z_g)

One classical-to-quantum map feeds all four circuits; each circuit has its own Rot
weights and its own output map.
"""
import numpy as np
if __package__ is None or __package__ == '':
    from circuit import CircuitSpec, run_vqc_batch, vqc_jacobian_batch
    from errors import UsageError
    from model import GATE_KEYS, GateCell, SequenceModel
    from nn import LinearLayer, ParamStore
else:
    from .circuit import CircuitSpec, run_vqc_batch, vqc_jacobian_batch
    from .errors import UsageError
    from .model import GATE_KEYS, GateCell, SequenceModel
    from .nn import LinearLayer, ParamStore


__all__ = ['QLSTMCell', 'QLSTMModel', 'qlstm_param_count']


class QLSTMCell(GateCell):
    def __init__(self, store, input_dim, hidden_dim, n_qubits, depth, rng, entangler='ring'):
        super().__init__(store, input_dim, hidden_dim)
        self.spec = CircuitSpec(n_qubits, depth, entangler).validate()
        self.n_qubits = n_qubits
        self.in_map = LinearLayer(store, 'cell.in_map', input_dim + hidden_dim, n_qubits, rng)
        for key in GATE_KEYS:
            store.register('cell.vqc_' + key, 'weights', rng.uniform(0.0, 2 * np.pi, size=self.spec.weight_shape))
        self.out_maps = {key: LinearLayer(store, 'cell.out_' + key, n_qubits, hidden_dim, rng) for key in GATE_KEYS}

    def vqc_weights(self, key):
        return self.store.tensor('cell.vqc_' + key, 'weights')

    def preactivations(self, x_t, h_prev, with_grad):
        v = np.concatenate([x_t, h_prev], axis=1)
        angles = self.in_map.forward(v)
        z, expvals, jac_inputs, jac_weights = {}, {}, {}, {}
        for key in GATE_KEYS:
            if with_grad:
                expvals[key], jac_inputs[key], jac_weights[key] = vqc_jacobian_batch(angles, self.vqc_weights(key), self.spec)
            else:
                expvals[key] = run_vqc_batch(angles, self.vqc_weights(key), self.spec)
            z[key] = self.out_maps[key].forward(expvals[key])
        inner = {'v': v, 'expvals': expvals, 'jac_inputs': jac_inputs if with_grad else None, 'jac_weights': jac_weights}
        return z, inner

    def backward(self, inner, dz):
        if inner['jac_inputs'] is None:
            raise UsageError("This forward pass was run without circuit gradients")
        d_angles = np.zeros((len(inner['v']), self.n_qubits))
        for key in GATE_KEYS:
            d_expvals = self.out_maps[key].backward(inner['expvals'][key], dz[key])
            d_angles += np.einsum('bq,bqi->bi', d_expvals, inner['jac_inputs'][key])
            self.store.grad('cell.vqc_' + key, 'weights')[:] += np.einsum('bq,bqlkr->lkr', d_expvals, inner['jac_weights'][key])
        dv = self.in_map.backward(inner['v'], d_angles)
        return dv[:, :self.input_dim], dv[:, self.input_dim:]


class QLSTMModel(SequenceModel):
    """
    >>> model = QLSTMModel(input_dim=3, hidden_dim=2, seq_len=2, n_qubits=2, depth=1, rng=np.random.default_rng(0))
    >>> model.n_params() == qlstm_param_count(3, 2, 2, 1)
    True
    >>> model.forward(np.zeros((4, 2, 3))).shape
    (4,)
    """
    KIND = 'qlstm'

    def __init__(self, input_dim, hidden_dim, seq_len, n_qubits, depth, rng, entangler='ring'):
        store = ParamStore()
        cell = QLSTMCell(store, input_dim, hidden_dim, n_qubits, depth, rng, entangler=entangler)
        super().__init__(cell, seq_len, rng)
        self.n_qubits = n_qubits
        self.depth = depth


def qlstm_param_count(input_dim, hidden_dim, n_qubits, depth):
    in_map = (input_dim + hidden_dim) * n_qubits + n_qubits
    circuits = len(GATE_KEYS) * depth * n_qubits * 3
    out_maps = len(GATE_KEYS) * (n_qubits * hidden_dim + hidden_dim)
    head = hidden_dim + 1
    return in_map + circuits + out_maps + head
