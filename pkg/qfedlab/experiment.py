"""
End-to-end experiments: data preparation, node construction, attacks, federated training,
evaluation and result files.

Result files (all written with sorted keys and no timestamps, so a rerun with the same
config and seeds reproduces them byte for byte):

    results.json      config, one entry per seed (per-node and mean metrics), summary
    round_log.jsonl   one record per seed and round
    sweep.csv         one row per swept value with means and standard deviations
    comparison.csv    clean metrics, one row per (model, setting)
    degradation.csv   percentage change per metric, attacked against clean on the same setting and seeds
"""
from concurrent.futures import ProcessPoolExecutor
import json
import logging
import os
import time
import numpy as np
import pandas as pd
if __package__ is None or __package__ == '':
    from aggregation import make_aggregator
    from config import with_defense
    from errors import ConfigurationError, UndefinedMetricError
    from federation import make_nodes, run_federation, write_round_log
    from lstm import ClassicalLSTM, match_lstm_hidden
    from metrics import SUMMARY_METRICS, summarize_metrics
    from preprocessing import prepare_data
    from qlstm import QLSTMModel, qlstm_param_count
    from threat import DEFENSES, degradation_report, flip_labels, membership_inference, poison_subset
    from _utils import DictableToDataframe, jsonable, spawn_generators
else:
    from .aggregation import make_aggregator
    from .config import with_defense
    from .errors import ConfigurationError, UndefinedMetricError
    from .federation import make_nodes, run_federation, write_round_log
    from .lstm import ClassicalLSTM, match_lstm_hidden
    from .metrics import SUMMARY_METRICS, summarize_metrics
    from .preprocessing import prepare_data
    from .qlstm import QLSTMModel, qlstm_param_count
    from .threat import DEFENSES, degradation_report, flip_labels, membership_inference, poison_subset
    from ._utils import DictableToDataframe, jsonable, spawn_generators


__all__ = ['build_model', 'run_single', 'run_experiment', 'run_sweep', 'compare_models', 'run_attack_eval',
           'COMPARE_SETTINGS', 'write_json']

logger = logging.getLogger(__name__)

RUN_STREAMS = 1


def build_model(model_cfg, input_dim, rng):
    if model_cfg.kind == 'lstm':
        hidden = model_cfg.lstm_hidden
        if hidden is None:
            target = qlstm_param_count(input_dim, model_cfg.hidden_dim, model_cfg.n_qubits, model_cfg.depth)
            hidden = match_lstm_hidden(target, input_dim)
        return ClassicalLSTM(input_dim, hidden, model_cfg.seq_len, rng)
    return QLSTMModel(input_dim, model_cfg.hidden_dim, model_cfg.seq_len, model_cfg.n_qubits, model_cfg.depth, rng,
                      entangler=model_cfg.entangler)


def _inference_sets(members, pool, rng):
    n = min(members.n_samples, pool.n_samples)
    return (members.take(np.sort(rng.choice(members.n_samples, size=n, replace=False))),
            pool.take(np.sort(rng.choice(pool.n_samples, size=n, replace=False))))


def run_single(cfg, seed):
    """
    One federated training run. Returns (result dict, round log records).

    Every random choice comes from a stream spawned from `seed`: one per node, plus the
    server, the DP noise, the attacker and the inference adversary.
    """
    started = time.time()
    fed = cfg.federation._replace(seed=seed)
    n_nodes = cfg.federation_size()
    fed = fed._replace(n_nodes=n_nodes)
    streams = spawn_generators(seed, n_nodes + 4, purpose=RUN_STREAMS)
    (node_rngs, (server_rng, dp_rng, attack_rng, inference_rng)) = (streams[:n_nodes], streams[n_nodes:])

    prepared = prepare_data(cfg.data, cfg.model.seq_len, n_nodes, seed, cache_dir=cfg.cache_dir)
    poison = cfg.attack.poison
    partitions = prepared.clients
    if poison.kind == 'label_flip':
        partitions = [flip_labels(p, poison.flip_prob, attack_rng) if poison.is_malicious(i) else p
                      for (i, p) in enumerate(partitions)]

    nodes = make_nodes(fed, lambda rng: build_model(cfg.model, prepared.input_dim, rng), partitions, node_rngs)
    if poison.kind == 'model_noise':
        for node in nodes:
            if poison.is_malicious(node.node_id):
                node._set_share_hook(lambda subset: poison_subset(subset, poison.lam, attack_rng, centered=poison.centered))

    dp = cfg.attack.dp if cfg.attack.defense == 'dp' else None
    aggregator = make_aggregator(fed, server_rng, dp=dp, dp_rng=dp_rng)
    test = prepared.test
    (nodes, records) = run_federation(fed, nodes, aggregator, test=test if fed.evaluate_rounds else None)

    node_metrics = [node.evaluate(test) for node in nodes]
    result = {
        'seed': seed,
        'model': cfg.model.kind,
        'n_params': nodes[0].model.n_params(),
        'aggregation': fed.aggregation,
        'defense': cfg.attack.defense,
        'attack': poison.kind,
        'nodes': [dict(node_id=node.node_id, **m.df_dict()) for (node, m) in zip(nodes, node_metrics)],
        'mean': summarize_metrics(node_metrics),
    }
    if cfg.attack.inference:
        reports = [membership_inference(node.model, *_inference_sets(node.data, test, inference_rng), inference_rng)
                   for node in nodes]
        result['inference'] = [dict(node_id=node.node_id, **r.df_dict()) for (node, r) in zip(nodes, reports)]
        result['mean']['attack_accuracy'] = float(np.mean([r.attack_accuracy for r in reports]))
    for record in records:
        record['seed'] = seed
    logger.info("Seed %d (%s, %s): accuracy %.4f, recall %.4f, auc %.4f in %.1fs", seed, cfg.model.kind, fed.aggregation,
                result['mean']['accuracy'], result['mean']['recall'], result['mean']['auc'], time.time() - started)
    return result, records


def write_json(obj, path):
    with open(path, 'w') as f:
        json.dump(jsonable(obj), f, sort_keys=True, indent=2)
        f.write('\n')


def _summary_over_seeds(runs):
    keys = [k for k in runs[0]['mean'] if not k.endswith('_std')] if runs else []
    out = {}
    for k in keys:
        values = np.array([r['mean'][k] for r in runs], dtype=float)
        out[k] = float(np.mean(values))
        out[k + '_std'] = float(np.std(values))
    return out


def run_experiment(cfg):
    """
    Runs every seed of `cfg` and returns the result bundle. With an `out_dir`, results.json
    and round_log.jsonl are rewritten after each seed, so an abort leaves the finished seeds
    on disk.
    """
    cfg.validate()
    runs, log = [], []
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)

    def flush(error=None):
        bundle = {'config': cfg, 'runs': runs, 'summary': _summary_over_seeds(runs)}
        if error is not None:
            bundle['error'] = error
        if cfg.out_dir:
            write_json(bundle, os.path.join(cfg.out_dir, 'results.json'))
            write_round_log(log, os.path.join(cfg.out_dir, 'round_log.jsonl'))
        return jsonable(bundle)

    for seed in cfg.seeds:
        try:
            (result, records) = run_single(cfg, seed)
        except Exception as e:
            flush(error=type(e).__name__ + ": " + str(e))
            raise
        runs.append(result)
        log.extend(records)
        flush()
    return flush()


def _sweep_task(point, seed):
    return run_single(point, seed)[0]


def _map_runs(tasks, workers):
    """Runs (config, seed) tasks, in a process pool when workers > 1. Failures come back as exceptions, in task order."""
    outcomes = []
    if workers <= 1:
        for (point, seed) in tasks:
            try:
                outcomes.append(_sweep_task(point, seed))
            except Exception as e:
                outcomes.append(e)
        return outcomes
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_sweep_task, point, seed) for (point, seed) in tasks]
        for future in futures:
            try:
                outcomes.append(future.result())
            except Exception as e:
                outcomes.append(e)
    return outcomes


def run_sweep(spec, workers=None, out_dir=None):
    """
    One run per (value, seed). A failed run is logged and counted; the sweep carries on.
    Returns one row per value with means and standard deviations over the successful seeds.
    """
    spec.validate()
    base = spec.base
    workers = base.workers if workers is None else workers
    tasks = [(spec.point(value)._replace(out_dir=None), seed) for value in spec.values for seed in base.seeds]
    outcomes = _map_runs(tasks, workers)

    table = DictableToDataframe()
    for (i, value) in enumerate(spec.values):
        chunk = outcomes[i * len(base.seeds):(i + 1) * len(base.seeds)]
        runs = [o for o in chunk if not isinstance(o, Exception)]
        for (seed, o) in zip(base.seeds, chunk):
            if isinstance(o, Exception):
                logger.warning("Sweep %s=%s, seed %s failed: %s: %s", spec.param, value, seed, type(o).__name__, o)
        row = {'param': spec.param, 'value': value, 'n_runs': len(runs), 'n_failed': len(chunk) - len(runs)}
        summary = _summary_over_seeds(runs)
        for m in SUMMARY_METRICS:
            row[m] = summary.get(m, float('nan'))
            row[m + '_std'] = summary.get(m + '_std', float('nan'))
        table.append(row)
    df = table.get()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        df.to_csv(os.path.join(out_dir, 'sweep.csv'), index=False)
    return df


def _centralized(cfg):
    return cfg._replace(federation=cfg.federation._replace(aggregation='centralized'),
                        attack=cfg.attack._replace(defense='none', poison=cfg.attack.poison._replace(kind='none')))


COMPARE_SETTINGS = ('centralized', 'none', 'fedransel', 'fedavg+dp')
# defence run by each federated compare setting
SETTING_DEFENSES = {'none': 'none', 'fedransel': 'fedransel', 'fedavg+dp': 'dp'}
DEGRADATION_COLUMNS = ['metric', 'clean', 'attacked', 'pct_change']


def _setting_config(cfg, setting):
    if setting == 'centralized':
        return _centralized(cfg)
    if setting not in SETTING_DEFENSES:
        raise ConfigurationError("Unknown compare setting " + repr(setting) + ", expected one of " + str(COMPARE_SETTINGS))
    return with_defense(cfg, SETTING_DEFENSES[setting])


def _without_attack(cfg):
    return cfg._replace(attack=cfg.attack._replace(poison=cfg.attack.poison._replace(kind='none')))


def _paired_runs(attacked_cfg):
    """(clean result, attacked result) per seed. The clean run drops the poisoning and keeps everything else."""
    clean_cfg = _without_attack(attacked_cfg)
    return [(run_single(clean_cfg, seed)[0], run_single(attacked_cfg, seed)[0]) for seed in attacked_cfg.seeds]


def _degradation(clean, attacked):
    """degradation_report over SUMMARY_METRICS; a metric whose clean value is 0 gets a NaN change instead of failing the table."""
    reports = []
    for m in SUMMARY_METRICS:
        try:
            reports.append(degradation_report({m: clean[m]}, {m: attacked[m]}))
        except UndefinedMetricError as e:
            logger.warning("No degradation for %s: %s", m, e)
            reports.append(pd.DataFrame([{'metric': m, 'clean': clean[m], 'attacked': attacked[m], 'pct_change': float('nan')}]))
    return pd.concat(reports, ignore_index=True)


def compare_models(cfg, settings=COMPARE_SETTINGS, out_dir=None):
    """
    Both model kinds under each setting, on the same data and seeds. Returns
    (comparison table, degradation table).

    The comparison table holds the clean mean metrics of every (model, setting). With an
    attack configured, each federated setting is also run under that attack on the same
    seeds, and the degradation table compares its attacked means with its own clean means.
    'centralized' is never attacked and has no degradation rows.
    """
    attacked = cfg.attack.poison.kind != 'none'
    if not attacked:
        logger.info("attack.kind is 'none': the degradation table stays empty")
    comparison, degradation = DictableToDataframe(), []
    for kind in ('qlstm', 'lstm'):
        model_cfg = cfg._replace(model=cfg.model._replace(kind=kind), out_dir=None)
        for setting in settings:
            setting_cfg = _setting_config(model_cfg, setting).validate()
            if setting == 'centralized' or not attacked:
                clean = _summary_over_seeds([run_single(setting_cfg, seed)[0] for seed in setting_cfg.seeds])
            else:
                pairs = _paired_runs(setting_cfg)
                clean = _summary_over_seeds([c for (c, _) in pairs])
                report = _degradation(clean, _summary_over_seeds([a for (_, a) in pairs]))
                report.insert(0, 'setting', setting)
                report.insert(0, 'model', kind)
                degradation.append(report)
            comparison.append(dict(model=kind, setting=setting, **clean))
    table = comparison.get()
    if degradation:
        degradation = pd.concat(degradation, ignore_index=True)
    else:
        degradation = pd.DataFrame(columns=['model', 'setting'] + DEGRADATION_COLUMNS)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        table.to_csv(os.path.join(out_dir, 'comparison.csv'), index=False)
        degradation.to_csv(os.path.join(out_dir, 'degradation.csv'), index=False)
    return table, degradation


def run_attack_eval(cfg, defenses=DEFENSES, out_dir=None):
    """
    For each defence, the configured attack against the clean run of the same defence on
    the same seed. Returns (per-run table, degradation table with one row per defence,
    seed and metric).
    """
    rows, degradation = DictableToDataframe(), []
    for defense in defenses:
        attacked_cfg = with_defense(cfg, defense)._replace(out_dir=None).validate()
        for (seed, (clean, attacked)) in zip(attacked_cfg.seeds, _paired_runs(attacked_cfg)):
            for (label, result) in (('clean', clean), ('attacked', attacked)):
                rows.append(dict(defense=defense, seed=seed, run=label, **result['mean']))
            report = _degradation(clean['mean'], attacked['mean'])
            report.insert(0, 'seed', seed)
            report.insert(0, 'defense', defense)
            degradation.append(report)
            logger.info("Defence %s, seed %d: accuracy %.4f -> %.4f", defense, seed, clean['mean']['accuracy'], attacked['mean']['accuracy'])
    table = rows.get()
    degradation = pd.concat(degradation, ignore_index=True)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        table.to_csv(os.path.join(out_dir, 'attack_runs.csv'), index=False)
        degradation.to_csv(os.path.join(out_dir, 'degradation.csv'), index=False)
    return table, degradation
