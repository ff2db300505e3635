"""
Command-line entry point.

    qfedlab train --preset smoke --out results/smoke
    qfedlab sweep --preset learning --param n_nodes --values 2,5,10 --workers 3
    qfedlab attack-eval --config attack.json --seed 3
    qfedlab compare --preset smoke --attack label_flip --out results/compare
    qfedlab circuit-eval --n-qubits 3 --depth 2 --inputs 0.1,0.2,0.3 --grad
    qfedlab circuit-eval --circuit circuit.json --grad
"""
import argparse
import json
import logging
import os
import sys
import numpy as np
if __package__ is None or __package__ == '':
    from circuit import ENTANGLERS, CircuitSpec, load_circuit, param_shift_grad, run_vqc
    from _utils import jsonable
    from config import SWEEP_PARAMS, PRESETS, ExperimentConfig, SweepSpec, load_config, preset
    from errors import ConfigurationError, QFedLabException
    from experiment import compare_models, run_attack_eval, run_experiment, run_sweep, write_json
    from preprocessing import cache_key, prepare_data
    from threat import DEFENSES, POISON_KINDS
else:
    from .circuit import ENTANGLERS, CircuitSpec, load_circuit, param_shift_grad, run_vqc
    from ._utils import jsonable
    from .config import SWEEP_PARAMS, PRESETS, ExperimentConfig, SweepSpec, load_config, preset
    from .errors import ConfigurationError, QFedLabException
    from .experiment import compare_models, run_attack_eval, run_experiment, run_sweep, write_json
    from .preprocessing import cache_key, prepare_data
    from .threat import DEFENSES, POISON_KINDS


__all__ = ['main', 'build_parser']

logger = logging.getLogger(__name__)


def _floats(text):
    return [float(v) for v in text.split(',') if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(',') if v.strip()]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="JSON experiment config; its sections override the preset")
    common.add_argument('--preset', choices=sorted(PRESETS), help="start from a named preset")
    common.add_argument('--seed', type=int, help="run this single seed instead of the configured seeds")
    common.add_argument('--out', help="output directory")
    common.add_argument('--workers', type=int, help="parallel sweep workers")
    common.add_argument('-v', '--verbose', action='store_true', help="debug logging")

    parser = argparse.ArgumentParser(prog='qfedlab', description="Federated quantum LSTM fraud-detection experiments")
    sub = parser.add_subparsers(dest='command', required=True)
    p = sub.add_parser('prepare-data', parents=[common], help="preprocess and cache the configured dataset")
    p.add_argument('--cache-dir', help="where to write the prepared-data cache (default: <out>/cache)")
    sub.add_parser('train', parents=[common], help="run a federated experiment")
    p = sub.add_parser('sweep', parents=[common], help="vary one hyperparameter")
    p.add_argument('--param', choices=SWEEP_PARAMS)
    p.add_argument('--values', type=_ints, help="comma-separated values")
    p = sub.add_parser('compare', parents=[common], help="QLSTM vs LSTM, centralized vs FedAvg vs FedRansel vs FedAvg+DP")
    p.add_argument('--attack', choices=[k for k in POISON_KINDS if k != 'none'],
                   help="override attack.kind; with an attack, degradation.csv compares attacked and clean runs")
    p = sub.add_parser('attack-eval', parents=[common], help="attack against each defence, with degradation")
    p.add_argument('--attack', choices=[k for k in POISON_KINDS if k != 'none'], help="override attack.kind")
    p.add_argument('--defenses', type=lambda s: [d.strip() for d in s.split(',')], default=list(DEFENSES),
                   help="comma-separated subset of " + ",".join(DEFENSES))
    p.add_argument('--inference', action='store_true', help="also run membership inference")
    p = sub.add_parser('circuit-eval', parents=[common], help="evaluate one variational circuit")
    p.add_argument('--n-qubits', type=int, default=2)
    p.add_argument('--depth', type=int, default=1)
    p.add_argument('--entangler', choices=ENTANGLERS, default='ring')
    p.add_argument('--inputs', type=_floats, help="comma-separated input angles (default: random)")
    p.add_argument('--circuit', help="JSON circuit with n_qubits, depth, entangler, inputs, weights (and optionally upstream)")
    p.add_argument('--grad', action='store_true', help="also report parameter-shift gradients of upstream . <Z> (upstream defaults to ones)")
    return parser


def resolve_config(args):
    cfg = preset(args.preset) if args.preset else ExperimentConfig()
    sweep = None
    if args.config:
        cfg = load_config(args.config, base=cfg)
        with open(args.config) as f:
            sweep = json.load(f).get('sweep')
    if args.seed is not None:
        cfg = cfg._replace(seeds=(args.seed,))
    if args.out:
        cfg = cfg._replace(out_dir=args.out)
    if args.workers is not None:
        cfg = cfg._replace(workers=args.workers)
    return cfg, sweep


def _prepare_data(args, cfg):
    cache_dir = args.cache_dir or os.path.join(cfg.out_dir, 'cache')
    seed = cfg.seeds[0]
    n_clients = cfg.federation_size()
    prepared = prepare_data(cfg.data, cfg.model.seq_len, n_clients, seed, cache_dir=cache_dir)
    summary = {
        'cache': os.path.join(cache_dir, cache_key(cfg.data, cfg.model.seq_len, n_clients, seed) + '.npz'),
        'windows': prepared.windows.n_samples,
        'input_dim': prepared.input_dim,
        'train': len(prepared.plan.train),
        'test': len(prepared.plan.test),
        'clients': [len(c) for c in prepared.plan.clients],
        'prevalence': prepared.windows.prevalence(),
    }
    print(json.dumps(jsonable(summary), sort_keys=True))


def _sweep(args, cfg, sweep):
    sweep = dict(sweep or {})
    param = args.param or sweep.get('param')
    values = args.values or sweep.get('values')
    if param is None or not values:
        raise ConfigurationError("sweep needs --param and --values, or a sweep section in --config")
    df = run_sweep(SweepSpec(param, tuple(values), cfg), workers=cfg.workers, out_dir=cfg.out_dir)
    print(df.to_string(index=False))


def _compare(args, cfg):
    if args.attack:
        cfg = cfg._replace(attack=cfg.attack._replace(poison=cfg.attack.poison._replace(kind=args.attack)))
    (table, degradation) = compare_models(cfg.validate(), out_dir=cfg.out_dir)
    print(table.to_string(index=False))
    if len(degradation):
        print(degradation.to_string(index=False))


def _attack_eval(args, cfg):
    attack = cfg.attack
    if args.attack:
        attack = attack._replace(poison=attack.poison._replace(kind=args.attack))
    if args.inference:
        attack = attack._replace(inference=True)
    unknown = [d for d in args.defenses if d not in DEFENSES]
    if unknown:
        raise ConfigurationError("Unknown defences " + str(unknown) + ", expected some of " + str(DEFENSES))
    _, degradation = run_attack_eval(cfg._replace(attack=attack), defenses=args.defenses, out_dir=cfg.out_dir)
    print(degradation.to_string(index=False))


def _circuit_eval(args, cfg):
    upstream = None
    if args.circuit:
        (spec, inputs, weights, upstream) = load_circuit(args.circuit)
    else:
        spec = CircuitSpec(args.n_qubits, args.depth, args.entangler).validate()
        rng = np.random.default_rng(cfg.seeds[0])
        inputs = np.asarray(args.inputs if args.inputs is not None else rng.uniform(0.0, np.pi, size=spec.n_qubits))
        weights = rng.uniform(0.0, 2 * np.pi, size=spec.weight_shape)
    result = {'n_qubits': spec.n_qubits, 'depth': spec.depth, 'entangler': spec.entangler,
              'inputs': inputs, 'weights': weights, 'expvals': run_vqc(inputs, weights, spec)}
    if args.grad:
        upstream = np.ones(spec.n_qubits) if upstream is None else upstream
        (grad_inputs, grad_weights) = param_shift_grad(inputs, weights, spec, upstream)
        result.update(upstream=upstream, grad_inputs=grad_inputs, grad_weights=grad_weights)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_json(result, os.path.join(args.out, 'circuit.json'))
    print(json.dumps(jsonable(result), sort_keys=True))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg, sweep = resolve_config(args)
        if args.command == 'prepare-data':
            _prepare_data(args, cfg.validate())
        elif args.command == 'train':
            bundle = run_experiment(cfg)
            print(json.dumps(bundle['summary'], sort_keys=True))
        elif args.command == 'sweep':
            _sweep(args, cfg, sweep)
        elif args.command == 'compare':
            _compare(args, cfg)
        elif args.command == 'attack-eval':
            _attack_eval(args, cfg)
        elif args.command == 'circuit-eval':
            _circuit_eval(args, cfg)
    except QFedLabException as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 2
    return 0


if __name__ == '__main__':
    sys.exit(main())
