"""
The federation simulator: per-node parameter sampling, the server's common-parameter
merge, and the round loop over in-process nodes.

One round of random parameter selection (FedRansel) looks like:

    node i:  train locally, then share S_i, a random ceil(x * |M_i|) of its parameters,
             x ~ Uniform(T_l, 1]
    server:  C = ParamIds shared by every node, G_a = per-id mean over nodes,
             G_f = random ceil(T_g * |G_a|) of G_a
    node i:  overwrite the G_f entries, keep everything else

The server keeps no state between rounds, so it never holds a complete model.
"""
from collections import namedtuple
import json
import logging
import numpy as np
import pandas as pd
if __package__ is None or __package__ == '':
    from errors import ConfigurationError, ProtocolError, TrainingDivergenceError
    from metrics import compute_metrics
    from nn import make_optimizer
    from _utils import DictableToDataframe, ceil_fraction, jsonable
else:
    from .errors import ConfigurationError, ProtocolError, TrainingDivergenceError
    from .metrics import compute_metrics
    from .nn import make_optimizer
    from ._utils import DictableToDataframe, ceil_fraction, jsonable


__all__ = ['SharedSubset', 'GlobalMerge', 'FederationConfig', 'AGGREGATIONS', 'draw_share_fraction', 'sample_local',
           'merge_common', 'sample_global', 'apply_update', 'fedavg_round', 'Node', 'Federation', 'run_federation',
           'write_round_log']

logger = logging.getLogger(__name__)

AGGREGATIONS = ('fedransel', 'fedavg', 'centralized')
INITIALIZATIONS = ('shared', 'independent')


class SharedSubset(namedtuple('SharedSubset', ['node_id', 'entries'])):
    """
    The parameters one node sends to the server: {ParamId: value}.

    >>> SharedSubset(0, {'cell/w/1': 0.5, 'cell/b/0': np.float64(2.0)}).to_pairs()
    [['cell/b/0', 2.0], ['cell/w/1', 0.5]]
    """
    def to_pairs(self):
        """Sorted [ParamId, float] pairs, the form a share takes in the round log."""
        return [[p, float(self.entries[p])] for p in sorted(self.entries)]


class GlobalMerge(namedtuple('GlobalMerge', ['common', 'averaged', 'final'])):
    """
    The server's view of one round: the common ParamIds C, their cross-node means G_a and
    the broadcast sample G_f.
    """
    pass


class FederationConfig(namedtuple('FederationConfig', ['n_nodes', 'rounds', 'local_epochs', 'local_threshold',
                                                       'global_ratio', 'aggregation', 'batch_size', 'lr',
                                                       'optimizer', 'init', 'evaluate_rounds', 'seed', 'log_shares'],
                                  defaults=(5, 5, 10, 0.8, 0.8, 'fedransel', 64, 0.01, 'adam', 'shared', True, 0, False))):
    def validate(self):
        if self.aggregation not in AGGREGATIONS:
            raise ConfigurationError("federation.aggregation must be one of " + str(AGGREGATIONS) + ", got " + repr(self.aggregation))
        min_nodes = 1 if self.aggregation == 'centralized' else 2
        if self.n_nodes < min_nodes:
            raise ConfigurationError("federation.n_nodes must be at least " + str(min_nodes) + " for " + self.aggregation + ", got " + str(self.n_nodes))
        if not (0.0 < self.local_threshold <= 1.0):
            raise ConfigurationError("federation.local_threshold must be in (0, 1], got " + str(self.local_threshold))
        if not (0.0 < self.global_ratio <= 1.0):
            raise ConfigurationError("federation.global_ratio must be in (0, 1], got " + str(self.global_ratio))
        if self.rounds < 1:
            raise ConfigurationError("federation.rounds must be positive, got " + str(self.rounds))
        if self.local_epochs < 0:
            raise ConfigurationError("federation.local_epochs must be non-negative, got " + str(self.local_epochs))
        if self.batch_size < 1:
            raise ConfigurationError("federation.batch_size must be positive, got " + str(self.batch_size))
        if self.lr <= 0:
            raise ConfigurationError("federation.lr must be positive, got " + str(self.lr))
        if self.optimizer not in ('adam', 'sgd'):
            raise ConfigurationError("federation.optimizer must be 'adam' or 'sgd', got " + repr(self.optimizer))
        if self.init not in INITIALIZATIONS:
            raise ConfigurationError("federation.init must be one of " + str(INITIALIZATIONS) + ", got " + repr(self.init))
        return self


def _check_fraction(name, value):
    if not (0.0 < value <= 1.0):
        raise ConfigurationError(name + " must be in (0, 1], got " + str(value))


def draw_share_fraction(threshold, rng):
    """x ~ Uniform(threshold, 1]; a threshold of 1 always shares everything."""
    _check_fraction('The local sampling threshold', threshold)
    if threshold >= 1.0:
        return 1.0
    return 1.0 - rng.uniform(0.0, 1.0 - threshold)


def sample_local(store, threshold, rng, node_id=0, fraction=None):
    """
    A uniformly random subset of ceil(x * |M|) distinct parameters with their current values.
    `fraction` forces x instead of drawing it.

    >>> from qfedlab.nn import ParamStore
    >>> store = ParamStore()
    >>> store.register('m', 'w', np.arange(10.0))
    >>> len(sample_local(store, 0.8, np.random.default_rng(0), fraction=0.85).entries)
    9
    """
    if len(store) == 0:
        raise ConfigurationError("Cannot share parameters of an empty store")
    x = draw_share_fraction(threshold, rng) if fraction is None else fraction
    _check_fraction('The share fraction', x)
    k = min(len(store), ceil_fraction(x, len(store)))
    picked = np.sort(rng.choice(len(store), size=k, replace=False))
    ids = store.ids()
    return SharedSubset(node_id, {ids[p]: float(store.values[p]) for p in picked})


def _parameter_table(mappings, param_ids, columns):
    """ParamId x node table of values, one column per node."""
    index = pd.Index(param_ids, name='param_id')
    return pd.DataFrame({c: pd.Series(m).reindex(index) for (c, m) in zip(columns, mappings)}, index=index)


def _average(table):
    return dict(zip(table.index, table.to_numpy(dtype=float).mean(axis=1).tolist()))


def merge_common(subsets):
    """
    Intersects the shared ParamIds of all nodes and averages their values, unweighted.

    >>> a = SharedSubset(0, {'a': 0.0, 'b': 1.0, 'c': 5.0})
    >>> b = SharedSubset(1, {'b': 3.0, 'c': 5.0, 'd': 0.0})
    >>> merge = merge_common([a, b])
    >>> merge.common, merge.averaged
    (('b', 'c'), {'b': 2.0, 'c': 5.0})
    """
    if len(subsets) < 2:
        raise ProtocolError("The server needs shares from at least 2 nodes, got " + str(len(subsets)))
    shared = set(subsets[0].entries)
    for subset in subsets[1:]:
        shared &= set(subset.entries)
    common = tuple(p for p in subsets[0].entries if p in shared)
    table = _parameter_table([s.entries for s in subsets], common, [s.node_id for s in subsets])
    return GlobalMerge(common, _average(table), {})


def sample_global(merge, ratio, rng):
    """
    >>> merge = GlobalMerge(tuple('abcde'), {k: 0.0 for k in 'abcde'}, {})
    >>> len(sample_global(merge, 0.8, np.random.default_rng(0)).final)
    4
    """
    _check_fraction('The global sampling ratio', ratio)
    keys = list(merge.averaged)
    if not keys:
        return merge._replace(final={})
    k = min(len(keys), ceil_fraction(ratio, len(keys)))
    picked = np.sort(rng.choice(len(keys), size=k, replace=False))
    return merge._replace(final={keys[p]: merge.averaged[keys[p]] for p in picked})


def apply_update(store, final):
    """Overwrites the listed entries; an unknown ParamId raises ProtocolError before anything is written."""
    store.update(final)
    return store


def fedavg_round(stores):
    """Replaces every parameter on every store with the cross-store mean; returns that mean."""
    if len(stores) == 0:
        raise ProtocolError("fedavg_round needs at least one store")
    ids = stores[0].ids()
    for (i, store) in enumerate(stores[1:], start=1):
        if store.ids() != ids:
            raise ProtocolError("Store " + str(i) + " does not share the ParamId space of store 0")
    mean = _average(_parameter_table([s.to_dict() for s in stores], ids, list(range(len(stores)))))
    for store in stores:
        store.update(mean)
    return mean


class Node:
    """
    One federation participant: a model, its private training windows, an optimizer and
    its own RNG stream. A share hook can rewrite the SharedSubset just before it leaves the
    node (this is where model poisoning attaches).
    """
    def __init__(self, node_id, model, data, optimizer, rng, batch_size=64):
        self.node_id = node_id
        self.model = model
        self.data = data
        self.batch_size = batch_size
        self.__optimizer = optimizer
        self.__rng = rng
        self.__share_hook = None
        self.__round_start = None

    def __str__(self):
        return "Node(" + str(self.node_id) + ", " + str(self.data.n_samples) + " windows)"

    @property
    def store(self):
        return self.model.store

    def _set_share_hook(self, callback):
        self.__share_hook = callback

    def begin_round(self):
        self.__round_start = self.store.values.copy()

    def round_start_values(self, param_ids):
        """Values of `param_ids` as they were when the current round began."""
        values = self.store.values if self.__round_start is None else self.__round_start
        return dict(zip(param_ids, values[self.store.positions(param_ids)].tolist()))

    def train(self, epochs):
        losses = [self.model.train_epoch(self.data.sequences, self.data.labels, self.__optimizer, self.batch_size, self.__rng)
                  for _ in range(epochs)]
        return losses[-1] if losses else float('nan')

    def share(self, threshold, fraction=None):
        subset = sample_local(self.store, threshold, self.__rng, node_id=self.node_id, fraction=fraction)
        if self.__share_hook is not None:
            subset = self.__share_hook(subset)
        return subset

    def receive(self, final):
        apply_update(self.store, final)

    def evaluate(self, data):
        return compute_metrics(self.model.predict_logits(data.sequences), data.labels)


def make_nodes(cfg, model_factory, partitions, rngs):
    """
    One node per partition. With `init='shared'` every node starts from node 0's initial
    parameters; otherwise each node keeps its own random initialization.
    """
    nodes = []
    for (node_id, (data, rng)) in enumerate(zip(partitions, rngs)):
        model = model_factory(rng)
        if cfg.init == 'shared' and nodes:
            model.store.update(nodes[0].store.to_dict())
        nodes.append(Node(node_id, model, data, make_optimizer(cfg.optimizer, cfg.lr), rng, batch_size=cfg.batch_size))
    return nodes


class Federation:
    """
    Runs `cfg.rounds` rounds of local training followed by the aggregator's exchange.
    Nodes train one after another; each owns its RNG stream, so the order does not change
    the outcome.
    """
    def __init__(self, cfg, nodes, aggregator, test=None):
        self.cfg = cfg
        self.nodes = nodes
        self.aggregator = aggregator
        self.test = test
        self.__log = DictableToDataframe()

    def run(self):
        for round_no in range(1, self.cfg.rounds + 1):
            losses = []
            for node in self.nodes:
                node.begin_round()
                try:
                    losses.append(node.train(self.cfg.local_epochs))
                except TrainingDivergenceError as e:
                    raise TrainingDivergenceError("Node " + str(node.node_id) + " diverged in round " + str(round_no) + ": " + str(e)) from e
            record = self.aggregator.aggregate(self.nodes, round_no)
            record['train_loss'] = losses
            if self.test is not None and self.cfg.evaluate_rounds:
                record['metrics'] = [node.evaluate(self.test).df_dict() for node in self.nodes]
            self.__log.append(record)
            logger.info("Round %d/%d: shared %s, common %d, broadcast %d%s", round_no, self.cfg.rounds, record['shared'],
                        record['common'], record['final'], " (skipped)" if record['skipped'] else "")
        return self

    def records(self):
        return self.__log.records()

    def round_log(self):
        return self.__log.get()


def run_federation(cfg, nodes, aggregator, test=None):
    """Returns the trained nodes and the round log records."""
    federation = Federation(cfg, nodes, aggregator, test=test).run()
    return federation.nodes, federation.records()


def write_round_log(records, path):
    """One JSON object per line with sorted keys, so identical runs give identical files."""
    with open(path, 'w') as f:
        for record in records:
            f.write(json.dumps(jsonable(record), sort_keys=True) + '\n')
