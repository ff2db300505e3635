from .circuit import CircuitSpec, run_vqc, param_shift_grad
from .nn import ParamStore
from .qlstm import QLSTMModel
from .lstm import ClassicalLSTM
from .federation import FederationConfig, Federation, Node, run_federation
from .aggregation import FedRansel, FedAvg
from .config import ExperimentConfig, ModelConfig, SweepSpec, load_config
from .experiment import run_experiment, run_sweep, compare_models, run_attack_eval

__all__ = ['CircuitSpec', 'run_vqc', 'param_shift_grad', 'ParamStore', 'QLSTMModel', 'ClassicalLSTM',
           'FederationConfig', 'Federation', 'Node', 'run_federation', 'FedRansel', 'FedAvg',
           'ExperimentConfig', 'ModelConfig', 'SweepSpec', 'load_config',
           'run_experiment', 'run_sweep', 'compare_models', 'run_attack_eval']
