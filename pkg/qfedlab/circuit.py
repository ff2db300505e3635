"""
Dense statevector simulation of the variational circuit used by the QLSTM gates.

Wire 0 is the most significant bit of the basis-state index, so |10> on two wires is
amplitude index 2. Rotation conventions are RX(t) = exp(-i t X / 2) (likewise RY, RZ) and
Rot(phi, theta, omega) = RZ(omega) RY(theta) RZ(phi), i.e. RZ(phi) is applied first.

The batched kernels (``run_vqc_batch``, ``vqc_jacobian_batch``) evaluate many circuits that
share one structure at once; every evaluation is a pure function of its angles.
"""
from collections import namedtuple
import json
import numpy as np
if __package__ is None or __package__ == '':
    from errors import ConfigurationError, WireIndexError
    from _utils import slices
else:
    from .errors import ConfigurationError, WireIndexError
    from ._utils import slices


__all__ = ['Statevector', 'CircuitSpec', 'GateOp', 'init_state', 'apply_gate', 'expval_z', 'run_ops',
           'run_vqc', 'param_shift_grad', 'run_vqc_batch', 'vqc_jacobian_batch', 'load_circuit']

MAX_QUBITS = 16
SHIFT = np.pi / 2
ENTANGLERS = ('ring', 'chain')
# (wire count, angle count) per gate kind
GATE_ARITY = {'RX': (1, 1), 'RY': (1, 1), 'RZ': (1, 1), 'Rot': (1, 3), 'CNOT': (2, 0)}
# Upper bound on complex amplitudes held by one simulation chunk.
_CHUNK_AMPLITUDES = 1 << 20


class Statevector:
    """
    Pure state of n qubits as 2**n complex amplitudes.

    >>> s = init_state(2)
    >>> s.amplitudes.tolist()
    [(1+0j), 0j, 0j, 0j]
    >>> s.norm()
    1.0
    """
    def __init__(self, n_qubits, amplitudes):
        amplitudes = np.asarray(amplitudes, dtype=complex)
        if amplitudes.shape != (2**n_qubits,):
            raise ConfigurationError("A statevector on " + str(n_qubits) + " qubits needs " + str(2**n_qubits) + " amplitudes, got shape " + str(amplitudes.shape))
        self.n_qubits = n_qubits
        self.amplitudes = amplitudes

    def norm(self):
        return float(np.sum(np.abs(self.amplitudes)**2))

    def __str__(self):
        return "Statevector(n_qubits=" + str(self.n_qubits) + ", norm=" + str(self.norm()) + ")"


class GateOp(namedtuple('GateOp', ['kind', 'wires', 'angles'])):
    """
    One gate of a circuit. CNOT wires are (control, target).

    >>> GateOp('Rot', [1], [0.1, 0.2, 0.3]).inverse()
    GateOp(kind='Rot', wires=(1,), angles=(-0.3, -0.2, -0.1))
    """
    def __new__(cls, kind, wires, angles=()):
        return super().__new__(cls, kind, tuple(int(w) for w in wires), tuple(float(a) for a in angles))

    def validate(self, n_qubits):
        if self.kind not in GATE_ARITY:
            raise ConfigurationError("Unknown gate kind " + repr(self.kind) + ", expected one of " + str(sorted(GATE_ARITY)))
        n_wires, n_angles = GATE_ARITY[self.kind]
        if len(self.wires) != n_wires or len(self.angles) != n_angles:
            raise ConfigurationError(self.kind + " takes " + str(n_wires) + " wire(s) and " + str(n_angles) + " angle(s), got " + str(self))
        if len(set(self.wires)) != len(self.wires):
            raise WireIndexError("Gate wires must be distinct: " + str(self.wires))
        for w in self.wires:
            if not (0 <= w < n_qubits):
                raise WireIndexError("Wire " + str(w) + " out of range for " + str(n_qubits) + " qubits")

    def inverse(self):
        if self.kind == 'CNOT':
            return self
        if self.kind == 'Rot':
            (phi, theta, omega) = self.angles
            return GateOp('Rot', self.wires, (-omega, -theta, -phi))
        return GateOp(self.kind, self.wires, (-self.angles[0],))


class CircuitSpec(namedtuple('CircuitSpec', ['n_qubits', 'depth', 'entangler'], defaults=(0, 'ring'))):
    """
    Structure of the variational circuit: an RX encoding layer, then `depth` layers of
    one Rot per wire followed by the entangling CNOTs.

    >>> spec = CircuitSpec(4, depth=2)
    >>> spec.weight_shape, spec.n_weights
    ((2, 4, 3), 24)
    >>> spec.cnot_pairs()
    [(0, 1), (1, 2), (2, 3), (3, 0)]
    >>> CircuitSpec(4, 1, 'chain').cnot_pairs()
    [(0, 1), (1, 2), (2, 3)]
    """
    @property
    def weight_shape(self):
        return (self.depth, self.n_qubits, 3)

    @property
    def n_weights(self):
        return self.depth * self.n_qubits * 3

    def validate(self):
        if not (1 <= self.n_qubits <= MAX_QUBITS):
            raise ConfigurationError("n_qubits must be in [1, " + str(MAX_QUBITS) + "], got " + str(self.n_qubits))
        if self.depth < 0:
            raise ConfigurationError("depth must be non-negative, got " + str(self.depth))
        if self.entangler not in ENTANGLERS:
            raise ConfigurationError("entangler must be one of " + str(ENTANGLERS) + ", got " + repr(self.entangler))
        return self

    def cnot_pairs(self):
        n = self.n_qubits
        if n == 1:
            return []
        if self.entangler == 'chain':
            return [(q, q + 1) for q in range(n - 1)]
        return [(q, (q + 1) % n) for q in range(n)]

    def ops(self, inputs, weights):
        """The circuit as an explicit gate list, matching what run_vqc simulates."""
        inputs, weights = _check_vqc_args(inputs, weights, self)
        ops = [GateOp('RX', [q], [inputs[q]]) for q in range(self.n_qubits)]
        for layer in range(self.depth):
            ops.extend(GateOp('Rot', [q], weights[layer, q]) for q in range(self.n_qubits))
            ops.extend(GateOp('CNOT', pair) for pair in self.cnot_pairs())
        return ops


def _rx(t):
    c, s = np.cos(t / 2), np.sin(t / 2)
    u = np.empty(np.shape(t) + (2, 2), dtype=complex)
    u[..., 0, 0] = c
    u[..., 0, 1] = -1j * s
    u[..., 1, 0] = -1j * s
    u[..., 1, 1] = c
    return u


def _ry(t):
    c, s = np.cos(t / 2), np.sin(t / 2)
    u = np.empty(np.shape(t) + (2, 2), dtype=complex)
    u[..., 0, 0] = c
    u[..., 0, 1] = -s
    u[..., 1, 0] = s
    u[..., 1, 1] = c
    return u


def _rz(t):
    u = np.zeros(np.shape(t) + (2, 2), dtype=complex)
    u[..., 0, 0] = np.exp(-0.5j * np.asarray(t))
    u[..., 1, 1] = np.exp(0.5j * np.asarray(t))
    return u


def _rot(phi, theta, omega):
    return _rz(omega) @ _ry(theta) @ _rz(phi)


_MATRICES = {'RX': _rx, 'RY': _ry, 'RZ': _rz}


def _apply_1q(states, u, wire, n):
    """states: (M, 2**n); u: (2, 2) shared or (M, 2, 2) per circuit."""
    m = states.shape[0]
    psi = states.reshape(m, 2**wire, 2, 2**(n - wire - 1))
    if u.ndim == 2:
        out = np.einsum('ij,awjb->awib', u, psi)
    else:
        out = np.einsum('aij,awjb->awib', u, psi)
    return out.reshape(m, 2**n)


def _apply_cnot(states, control, target, n):
    m = states.shape[0]
    psi = states.reshape((m,) + (2,) * n)
    idx = [slice(None)] * (n + 1)
    idx[control + 1] = 1
    idx = tuple(idx)
    target_axis = target + 1 if target < control else target  # axis of target once the control axis is indexed away
    out = psi.copy()
    out[idx] = np.flip(psi[idx], axis=target_axis)
    return out.reshape(m, 2**n)


def _expval_z_all(states, n):
    m = states.shape[0]
    probs = np.abs(states)**2
    result = np.empty((m, n))
    for q in range(n):
        p = probs.reshape(m, 2**q, 2, 2**(n - q - 1)).sum(axis=(1, 3))
        result[:, q] = p[:, 0] - p[:, 1]
    return result


def _apply_op(states, op, n):
    if op.kind == 'CNOT':
        return _apply_cnot(states, op.wires[0], op.wires[1], n)
    if op.kind == 'Rot':
        return _apply_1q(states, _rot(*op.angles), op.wires[0], n)
    return _apply_1q(states, _MATRICES[op.kind](op.angles[0]), op.wires[0], n)


def init_state(n_qubits):
    """
    |0...0> on n_qubits wires.

    >>> init_state(1).amplitudes.tolist()
    [(1+0j), 0j]
    """
    if not isinstance(n_qubits, (int, np.integer)) or not (1 <= n_qubits <= MAX_QUBITS):
        raise ConfigurationError("n_qubits must be an integer in [1, " + str(MAX_QUBITS) + "], got " + repr(n_qubits))
    amplitudes = np.zeros(2**n_qubits, dtype=complex)
    amplitudes[0] = 1.0
    return Statevector(int(n_qubits), amplitudes)


def apply_gate(state, op):
    """
    Returns a new state with the gate applied; the input state is not modified.

    >>> s = apply_gate(init_state(2), GateOp('RX', [0], [np.pi]))
    >>> s = apply_gate(s, GateOp('CNOT', [0, 1]))
    >>> int(np.argmax(np.abs(s.amplitudes)))
    3
    """
    op.validate(state.n_qubits)
    out = _apply_op(state.amplitudes[None, :], op, state.n_qubits)
    return Statevector(state.n_qubits, out[0])


def run_ops(n_qubits, ops):
    state = init_state(n_qubits)
    for op in ops:
        state = apply_gate(state, op)
    return state


def expval_z(state, wire):
    """
    <Z> on one wire.

    >>> expval_z(init_state(3), 2)
    1.0
    """
    if not (0 <= wire < state.n_qubits):
        raise WireIndexError("Wire " + str(wire) + " out of range for " + str(state.n_qubits) + " qubits")
    return float(_expval_z_all(state.amplitudes[None, :], state.n_qubits)[0, wire])


def _check_vqc_args(inputs, weights, spec):
    inputs = np.asarray(inputs, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if inputs.shape != (spec.n_qubits,):
        raise ConfigurationError("Expected " + str(spec.n_qubits) + " inputs, got shape " + str(inputs.shape))
    if weights.shape != spec.weight_shape:
        raise ConfigurationError("Expected weights of shape " + str(spec.weight_shape) + ", got " + str(weights.shape))
    if not np.all(np.isfinite(inputs)):
        raise ConfigurationError("Circuit inputs must be finite")
    return inputs, weights


def _simulate(inputs, weights, spec):
    """inputs: (M, n); weights: (D, n, 3) shared or (M, D, n, 3) per circuit."""
    n = spec.n_qubits
    m = inputs.shape[0]
    shared = weights.ndim == 3
    states = np.zeros((m, 2**n), dtype=complex)
    states[:, 0] = 1.0
    for q in range(n):
        states = _apply_1q(states, _rx(inputs[:, q]), q, n)
    pairs = spec.cnot_pairs()
    for layer in range(spec.depth):
        for q in range(n):
            w = weights[layer, q] if shared else weights[:, layer, q]
            states = _apply_1q(states, _rot(w[..., 0], w[..., 1], w[..., 2]), q, n)
        for (control, target) in pairs:
            states = _apply_cnot(states, control, target, n)
    return _expval_z_all(states, n)


def run_vqc_batch(inputs, weights, spec):
    """
    Expectation values for a batch of circuits: inputs (M, n) and weights either shared
    (depth, n, 3) or per circuit (M, depth, n, 3). Returns (M, n).
    """
    inputs = np.asarray(inputs, dtype=float)
    weights = np.asarray(weights, dtype=float)
    m = inputs.shape[0]
    out = np.empty((m, spec.n_qubits))
    rows = max(1, _CHUNK_AMPLITUDES >> spec.n_qubits)
    for sl in slices(m, rows):
        out[sl] = _simulate(inputs[sl], weights if weights.ndim == 3 else weights[sl], spec)
    return out


def _shift_table(n_params):
    shifts = np.zeros((1 + 2 * n_params, n_params))
    for j in range(n_params):
        shifts[1 + 2 * j, j] = SHIFT
        shifts[2 + 2 * j, j] = -SHIFT
    return shifts


def vqc_jacobian_batch(inputs, weights, spec):
    """
    Parameter-shift Jacobians for a batch of inputs (B, n) under shared weights (depth, n, 3).

    Returns (expvals (B, n), jac_inputs (B, n_out, n_in), jac_weights (B, n_out, depth, n, 3)),
    where jac[b, q, ...] = d<Z_q>/d(angle) for sample b.
    """
    inputs = np.asarray(inputs, dtype=float)
    weights = np.asarray(weights, dtype=float)
    b, n = inputs.shape
    n_params = n + spec.n_weights
    shifts = _shift_table(n_params)
    params = np.concatenate([inputs, np.broadcast_to(weights.reshape(-1), (b, spec.n_weights))], axis=1)

    evaluations = np.empty((b, 1 + 2 * n_params, n))
    rows = max(1, (_CHUNK_AMPLITUDES >> n) // (1 + 2 * n_params))
    for sl in slices(b, rows):
        shifted = (params[sl, None, :] + shifts[None, :, :]).reshape(-1, n_params)
        e = run_vqc_batch(shifted[:, :n], shifted[:, n:].reshape((len(shifted),) + spec.weight_shape), spec)
        evaluations[sl] = e.reshape(-1, 1 + 2 * n_params, n)

    expvals = evaluations[:, 0]
    jac = ((evaluations[:, 1::2] - evaluations[:, 2::2]) / 2).transpose(0, 2, 1)
    return expvals, jac[:, :, :n], jac[:, :, n:].reshape((b, n) + spec.weight_shape)


def run_vqc(inputs, weights, spec):
    """
    RX angle encoding followed by `depth` Rot + CNOT layers; returns <Z> per wire.

    >>> run_vqc([0.0, 0.0], np.zeros((0, 2, 3)), CircuitSpec(2, 0)).tolist()
    [1.0, 1.0]
    """
    spec.validate()
    inputs, weights = _check_vqc_args(inputs, weights, spec)
    return run_vqc_batch(inputs[None, :], weights, spec)[0]


def param_shift_grad(inputs, weights, spec, upstream):
    """
    Gradients of upstream . run_vqc(inputs, weights) with respect to the encoding angles
    and the Rot weights, each obtained as (f(a + pi/2) - f(a - pi/2)) / 2.

    >>> gi, gw = param_shift_grad([np.pi / 2], np.zeros((0, 1, 3)), CircuitSpec(1, 0), [1.0])
    >>> round(float(gi[0]), 12)
    -1.0
    """
    spec.validate()
    inputs, weights = _check_vqc_args(inputs, weights, spec)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (spec.n_qubits,):
        raise ConfigurationError("upstream must have one entry per wire, got shape " + str(upstream.shape))
    _, jac_inputs, jac_weights = vqc_jacobian_batch(inputs[None, :], weights, spec)
    grad_inputs = np.einsum('q,qi->i', upstream, jac_inputs[0])
    grad_weights = np.einsum('q,qlkr->lkr', upstream, jac_weights[0])
    return grad_inputs, grad_weights


CIRCUIT_KEYS = ('n_qubits', 'depth', 'entangler', 'inputs', 'weights', 'upstream')


def load_circuit(path):
    """
    Reads a JSON circuit description and returns (spec, inputs, weights, upstream).

    The file holds an object with `n_qubits` and `inputs`, and optionally `depth` (default
    0), `entangler` (default 'ring'), `weights` shaped [depth][n_qubits][3] and `upstream`
    (one cotangent per wire; None when absent).
    """
    try:
        with open(path) as f:
            d = json.load(f)
    except (OSError, ValueError) as e:
        raise ConfigurationError("Cannot read circuit file " + str(path) + ": " + str(e))
    if not isinstance(d, dict):
        raise ConfigurationError("Circuit file " + str(path) + " must hold a JSON object")
    unknown = sorted(set(d) - set(CIRCUIT_KEYS))
    if unknown:
        raise ConfigurationError("Unknown circuit keys " + str(unknown) + ", expected some of " + str(CIRCUIT_KEYS))
    for key in ('n_qubits', 'inputs'):
        if key not in d:
            raise ConfigurationError("Circuit file " + str(path) + " needs " + repr(key))
    (n_qubits, depth) = (d['n_qubits'], d.get('depth', 0))
    if not isinstance(n_qubits, int) or not isinstance(depth, int):
        raise ConfigurationError("n_qubits and depth must be integers, got " + repr(n_qubits) + " and " + repr(depth))
    spec = CircuitSpec(n_qubits, depth, d.get('entangler', 'ring')).validate()
    try:
        weights = np.asarray(d.get('weights', []), dtype=float)
        upstream = None if d.get('upstream') is None else np.asarray(d['upstream'], dtype=float)
        inputs = np.asarray(d['inputs'], dtype=float)
    except (TypeError, ValueError) as e:
        raise ConfigurationError("Circuit angles must be numbers: " + str(e))
    if weights.size == 0 and spec.n_weights == 0:
        weights = np.zeros(spec.weight_shape)
    (inputs, weights) = _check_vqc_args(inputs, weights, spec)
    if upstream is not None and upstream.shape != (spec.n_qubits,):
        raise ConfigurationError("upstream must have one entry per wire, got shape " + str(upstream.shape))
    return spec, inputs, weights, upstream
