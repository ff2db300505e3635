"""
Experiment configuration: model settings, the experiment bundle, sweeps, JSON config files
and the named presets.

A JSON config mirrors the namedtuples:

    {"model": {...}, "data": {...}, "federation": {...},
     "attack": {"kind": ..., "lambda": ..., "defense": ..., "dp": {...}},
     "seeds": [0, 1, 2], "out_dir": "results", "workers": 1,
     "sweep": {"param": "n_nodes", "values": [2, 5, 10]}}

Every section is optional and overrides the base config (a preset or the defaults).
"""
from collections import namedtuple
import json
if __package__ is None or __package__ == '':
    from circuit import ENTANGLERS, MAX_QUBITS
    from data import DataConfig
    from errors import ConfigurationError
    from federation import FederationConfig
    from threat import AttackConfig, DPConfig, PoisonConfig
else:
    from .circuit import ENTANGLERS, MAX_QUBITS
    from .data import DataConfig
    from .errors import ConfigurationError
    from .federation import FederationConfig
    from .threat import AttackConfig, DPConfig, PoisonConfig


__all__ = ['ModelConfig', 'ExperimentConfig', 'SweepSpec', 'SWEEP_PARAMS', 'MODEL_KINDS', 'PRESETS', 'with_defense',
           'config_from_dict', 'load_config', 'load_sweep', 'preset']

MODEL_KINDS = ('qlstm', 'lstm')
SWEEP_PARAMS = ('n_qubits', 'depth', 'seq_len', 'n_nodes')


class ModelConfig(namedtuple('ModelConfig', ['kind', 'hidden_dim', 'n_qubits', 'depth', 'seq_len', 'entangler', 'lstm_hidden'],
                             defaults=('qlstm', 4, 4, 2, 3, 'ring', None))):
    """
    `lstm_hidden` is the classical baseline's hidden size; None picks the size whose
    parameter count is closest to the QLSTM built from the same settings.
    """
    def validate(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError("model.kind must be one of " + str(MODEL_KINDS) + ", got " + repr(self.kind))
        if self.hidden_dim < 1:
            raise ConfigurationError("model.hidden_dim must be positive, got " + str(self.hidden_dim))
        if not (1 <= self.n_qubits <= MAX_QUBITS):
            raise ConfigurationError("model.n_qubits must be in [1, " + str(MAX_QUBITS) + "], got " + str(self.n_qubits))
        if self.depth < 0:
            raise ConfigurationError("model.depth must be non-negative, got " + str(self.depth))
        if self.seq_len < 1:
            raise ConfigurationError("model.seq_len must be positive, got " + str(self.seq_len))
        if self.entangler not in ENTANGLERS:
            raise ConfigurationError("model.entangler must be one of " + str(ENTANGLERS) + ", got " + repr(self.entangler))
        if self.lstm_hidden is not None and self.lstm_hidden < 1:
            raise ConfigurationError("model.lstm_hidden must be positive, got " + str(self.lstm_hidden))
        return self


class ExperimentConfig(namedtuple('ExperimentConfig', ['model', 'data', 'federation', 'attack', 'seeds', 'out_dir',
                                                       'workers', 'cache_dir'],
                                  defaults=(ModelConfig(), DataConfig(), FederationConfig(), AttackConfig(), (0,),
                                            'results', 1, None))):
    def validate(self):
        self.model.validate()
        self.data.validate()
        self.federation.validate()
        self.attack.validate(self.federation.n_nodes)
        if len(self.seeds) == 0:
            raise ConfigurationError("seeds must not be empty")
        if self.workers < 1:
            raise ConfigurationError("workers must be positive, got " + str(self.workers))
        centralized = self.federation.aggregation == 'centralized'
        if self.attack.defense == 'fedransel' and self.federation.aggregation != 'fedransel':
            raise ConfigurationError("attack.defense 'fedransel' needs federation.aggregation 'fedransel'")
        if self.attack.defense == 'dp' and centralized:
            raise ConfigurationError("attack.defense 'dp' needs a federated aggregation")
        if centralized and self.attack.poison.kind != 'none':
            raise ConfigurationError("Poisoning attacks need a federation; aggregation is 'centralized'")
        return self

    def federation_size(self):
        return 1 if self.federation.aggregation == 'centralized' else self.federation.n_nodes


def with_defense(cfg, defense):
    """The config that runs `defense`: plain FedAvg for 'none', FedAvg with DP for 'dp', FedRansel for 'fedransel'."""
    aggregation = 'fedransel' if defense == 'fedransel' else 'fedavg'
    return cfg._replace(federation=cfg.federation._replace(aggregation=aggregation),
                        attack=cfg.attack._replace(defense=defense))


class SweepSpec(namedtuple('SweepSpec', ['param', 'values', 'base'])):
    """Varies exactly one of n_qubits, depth, seq_len or n_nodes over `values`, holding `base` fixed otherwise."""
    def validate(self):
        if self.param not in SWEEP_PARAMS:
            raise ConfigurationError("sweep.param must be one of " + str(SWEEP_PARAMS) + ", got " + repr(self.param))
        if len(self.values) == 0:
            raise ConfigurationError("sweep.values must not be empty")
        for value in self.values:
            self.point(value).validate()
        return self

    def point(self, value):
        if self.param == 'n_nodes':
            return self.base._replace(federation=self.base.federation._replace(n_nodes=value))
        return self.base._replace(model=self.base.model._replace(**{self.param: value}))


def _merge(record, section, overrides, renames=None):
    renames = renames or {}
    overrides = {renames.get(k, k): v for (k, v) in overrides.items()}
    unknown = sorted(set(overrides) - set(record._fields))
    if unknown:
        raise ConfigurationError("Unknown " + section + " settings " + str(unknown))
    return record._replace(**overrides)


def _attack_from_dict(base, d):
    d = dict(d)
    defense = d.pop('defense', base.defense)
    inference = d.pop('inference', base.inference)
    dp = _merge(base.dp, 'attack.dp', d.pop('dp', {}))
    poison = _merge(base.poison, 'attack', d, renames={'lambda': 'lam'})
    poison = poison._replace(malicious_nodes=tuple(poison.malicious_nodes))
    return AttackConfig(poison, defense, dp, bool(inference))


def config_from_dict(d, base=None):
    base = ExperimentConfig() if base is None else base
    d = dict(d)
    d.pop('sweep', None)
    unknown = sorted(set(d) - set(ExperimentConfig._fields))
    if unknown:
        raise ConfigurationError("Unknown config sections " + str(unknown))
    cfg = base._replace(
        model=_merge(base.model, 'model', d.pop('model', {})),
        data=_merge(base.data, 'data', d.pop('data', {})),
        federation=_merge(base.federation, 'federation', d.pop('federation', {})),
        attack=_attack_from_dict(base.attack, d.pop('attack', {})),
    )
    if 'seeds' in d:
        d['seeds'] = tuple(d['seeds'])
    return cfg._replace(**d)


def _read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigurationError("No such config file: " + str(path))
    except json.JSONDecodeError as e:
        raise ConfigurationError("Config file " + str(path) + " is not valid JSON: " + str(e))


def load_config(path, base=None):
    return config_from_dict(_read_json(path), base=base).validate()


def load_sweep(path, base=None):
    d = _read_json(path)
    if 'sweep' not in d:
        raise ConfigurationError("Config file " + str(path) + " has no sweep section")
    sweep = dict(d['sweep'])
    unknown = sorted(set(sweep) - {'param', 'values'})
    if unknown:
        raise ConfigurationError("Unknown sweep settings " + str(unknown))
    return SweepSpec(sweep.get('param'), tuple(sweep.get('values', ())), config_from_dict(d, base=base)).validate()


PRESETS = {
    # Credit-card transactions: 30 raw features reduced to 28 principal components.
    'dataset1': ExperimentConfig(
        model=ModelConfig('qlstm', hidden_dim=10, n_qubits=9, depth=10, seq_len=10),
        data=DataConfig(n_samples=20000, n_features=30, pipeline='pca', pca_components=28, train_ratio='2:1'),
        federation=FederationConfig(n_nodes=5, rounds=5, local_epochs=10, batch_size=128, lr=0.01),
    ),
    # Categorical transaction records: under-sampled and one-hot encoded, no PCA.
    'dataset2': ExperimentConfig(
        model=ModelConfig('qlstm', hidden_dim=4, n_qubits=9, depth=4, seq_len=5),
        data=DataConfig(n_samples=20000, n_features=8, fraud_rate=0.2, n_categorical=3, pipeline='onehot', train_ratio='2:1'),
        federation=FederationConfig(n_nodes=5, rounds=5, local_epochs=10, batch_size=64, lr=0.005),
    ),
    'smoke': ExperimentConfig(
        model=ModelConfig('qlstm', hidden_dim=2, n_qubits=2, depth=1, seq_len=2),
        data=DataConfig(n_samples=200, n_features=4, pca_components=4),
        federation=FederationConfig(n_nodes=2, rounds=2, local_epochs=1, batch_size=32, lr=0.01),
    ),
    'learning': ExperimentConfig(
        model=ModelConfig('qlstm', hidden_dim=4, n_qubits=4, depth=2, seq_len=3),
        data=DataConfig(n_samples=2000, n_features=6, signal=4.0, pca_components=6),
        federation=FederationConfig(n_nodes=2, rounds=3, local_epochs=10, batch_size=32, lr=0.01),
        seeds=(0, 1, 2),
    ),
}


def preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError("Unknown preset " + repr(name) + ", expected one of " + str(sorted(PRESETS)))
