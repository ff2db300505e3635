"""Server-side aggregation strategies plugged into the Federation round loop."""
import abc
import logging
if __package__ is None or __package__ == '':
    from federation import merge_common, sample_global, _average, _parameter_table
    from threat import dp_defend
else:
    from .federation import merge_common, sample_global, _average, _parameter_table
    from .threat import dp_defend


__all__ = ['Aggregator', 'FedRansel', 'FedAvg', 'Centralized', 'make_aggregator']

logger = logging.getLogger(__name__)


class Aggregator(metaclass=abc.ABCMeta):
    """
    Exchanges parameters between nodes once per round and returns the round's log record
    with at least `round`, `shared`, `common`, `final` and `skipped`. With `log_shares` set the
    record also carries `shares`, every node's subset as sorted [ParamId, value] pairs.

    With a DPConfig the averaged values are treated as an update relative to the mean of
    the nodes' round-start values; that update is clipped and noised before broadcast.
    """
    def __init__(self, dp=None, rng=None, log_shares=False):
        self.dp = dp
        self.rng = rng
        self.log_shares = log_shares

    @abc.abstractmethod
    def aggregate(self, nodes, round_no):
        pass

    def _defend(self, nodes, averaged):
        if self.dp is None or not averaged:
            return averaged
        keys = list(averaged)
        reference = _average(_parameter_table([n.round_start_values(keys) for n in nodes], keys, [n.node_id for n in nodes]))
        delta = {k: averaged[k] - reference[k] for k in keys}
        defended = dp_defend(delta, self.dp, self.rng)
        return {k: reference[k] + defended[k] for k in keys}

    def _record(self, round_no, subsets, merge):
        record = {'round': round_no, 'shared': [len(s.entries) for s in subsets], 'common': len(merge.common)}
        if self.log_shares:
            record['shares'] = [s.to_pairs() for s in subsets]
        return record

    def _broadcast(self, nodes, final):
        for node in nodes:
            node.receive(final)


class FedRansel(Aggregator):
    """Random parameter selection: nodes share random subsets, the server averages the common part and broadcasts a random sample of it."""
    def __init__(self, local_threshold, global_ratio, rng, dp=None, dp_rng=None, log_shares=False):
        super().__init__(dp=dp, rng=dp_rng, log_shares=log_shares)
        self.local_threshold = local_threshold
        self.global_ratio = global_ratio
        self.server_rng = rng

    def aggregate(self, nodes, round_no):
        subsets = [node.share(self.local_threshold) for node in nodes]
        merge = merge_common(subsets)
        record = self._record(round_no, subsets, merge)
        if not merge.common:
            logger.warning("Round %d: no parameter was shared by every node, skipping the global update", round_no)
            record.update(final=0, skipped=True)
            return record
        merge = sample_global(merge._replace(averaged=self._defend(nodes, merge.averaged)), self.global_ratio, self.server_rng)
        self._broadcast(nodes, merge.final)
        record.update(final=len(merge.final), skipped=False)
        return record


class FedAvg(Aggregator):
    """Every node shares everything and receives the full cross-node mean."""
    def aggregate(self, nodes, round_no):
        subsets = [node.share(1.0) for node in nodes]
        merge = merge_common(subsets)
        averaged = self._defend(nodes, merge.averaged)
        self._broadcast(nodes, averaged)
        record = self._record(round_no, subsets, merge)
        record.update(final=len(averaged), skipped=False)
        return record


class Centralized(Aggregator):
    """No exchange: a single node trains on all the training data."""
    def aggregate(self, nodes, round_no):
        return {'round': round_no, 'shared': [0] * len(nodes), 'common': 0, 'final': 0, 'skipped': True}


def make_aggregator(cfg, server_rng, dp=None, dp_rng=None):
    if cfg.aggregation == 'fedransel':
        return FedRansel(cfg.local_threshold, cfg.global_ratio, server_rng, dp=dp, dp_rng=dp_rng, log_shares=cfg.log_shares)
    if cfg.aggregation == 'fedavg':
        return FedAvg(dp=dp, rng=dp_rng, log_shares=cfg.log_shares)
    return Centralized()
