"""Command-line interface.

Commands: gen-data, train, adapt-eval, sweep-shots, sweep-steps and compare.
Settings come from, in increasing precedence, built-in defaults, the
``[command]`` section of ``--config``, ``--set KEY=VALUE`` and dedicated
flags. Sweep CSVs are meant for downstream plotting, usually with a log-scaled
shot or step axis.
"""
import argparse
import logging
import os
import sys

from . import backbone
from . import episodes
from . import harness
from .baseline import BaselineConfig, train_supervised_baseline
from .config import (ConfigError, RunConfig, check_keys, load_config,
                     merge_settings, parse_assignments)
from .metrics import write_scores
from .protomaml import ProtoMamlConfig, train_protomaml
from .protonet import ProtoTrainConfig, train_protonet

logger = logging.getLogger(__name__)

TRAINERS = {
    'protonet': (ProtoTrainConfig, train_protonet),
    'protomaml': (ProtoMamlConfig, train_protomaml),
    'baseline': (BaselineConfig, train_supervised_baseline),
}
GEN_OUTPUTS = ['train.csv', 'eval_seen.csv', 'eval_unseen.csv',
               'metadata.txt', 'manifest.txt']
TRAIN_OUTPUTS = ['checkpoint.mspf', 'train_log.csv', 'manifest.txt']
SWEEP_OUTPUTS = ['sweep_detail.csv', 'sweep_summary.csv', 'manifest.txt']
COMPARE_OUTPUTS = ['comparison.csv', 'comparison.txt', 'manifest.txt']
DEFAULT_ADAPT_K = 16


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(',') if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(
            'expected comma separated integers, got {!r}'.format(text))


def _add_common(parser):
    parser.add_argument('--config', help='INI config file with one section '
                        'per command.')
    parser.add_argument('--seed', type=int,
                        help='Master seed for all randomness (default 0).')
    parser.add_argument('--out', required=True, help='Output directory.')
    parser.add_argument('--force', action='store_true',
                        help='Overwrite existing outputs.')
    parser.add_argument('--verbose', action='store_true',
                        help='Log progress to stderr.')
    parser.add_argument('--set', action='append', metavar='KEY=VALUE',
                        help='Override one setting; may be repeated.')


def _add_eval(parser, method_default='protonet'):
    parser.add_argument('--checkpoint', help='Trained backbone checkpoint.')
    parser.add_argument('--dataset', help='Evaluation embedding CSV.')
    parser.add_argument('--method', choices=harness.METHODS,
                        help='Adaptation method (default {}).'.format(
                            method_default))
    parser.add_argument('--steps', type=int,
                        help='ProtoMAML inner adaptation steps (default 25).')
    parser.add_argument('--repeats', type=int,
                        help='Support resamplings per setting (default 9).')
    parser.add_argument('--n-jobs', type=int, dest='n_jobs',
                        help='Repeats evaluated in parallel.')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='metaspoof',
        description=('Few-shot adaptation of bonafide vs spoof detectors '
                     'with ProtoNet and ProtoMAML.'))
    sub = parser.add_subparsers(dest='command')
    sub.required = True

    p = sub.add_parser('gen-data', help='Write synthetic embedding sets.')
    _add_common(p)
    p.add_argument('--dim', type=int, help='Feature dimension.')
    p.add_argument('--per-class', type=int, dest='per_class',
                   help='Training records per class.')
    p.add_argument('--eval-per-class', type=int, dest='eval_per_class',
                   help='Evaluation records per class.')

    p = sub.add_parser('train', help='Train a backbone.')
    _add_common(p)
    p.add_argument('--method', choices=sorted(TRAINERS),
                   help='Training recipe.')
    p.add_argument('--dataset', help='Training embedding CSV.')
    p.add_argument('--val', help=('Validation embedding CSV (defaults to the '
                                  'training set).'))
    p.add_argument('--epochs', type=int, help='Maximum number of epochs.')

    p = sub.add_parser('adapt-eval',
                       help='Adapt at one shot count and report EER.')
    _add_common(p)
    _add_eval(p)
    p.add_argument('--k', type=int, help='Support shots per class '
                   '(default {}).'.format(DEFAULT_ADAPT_K))

    p = sub.add_parser('sweep-shots', help='EER against shots per class.')
    _add_common(p)
    _add_eval(p)
    p.add_argument('--shots', type=_int_list,
                   help='Comma separated shot counts.')

    p = sub.add_parser('sweep-steps',
                       help='ProtoMAML EER against adaptation steps.')
    _add_common(p)
    _add_eval(p, method_default='protomaml')
    p.add_argument('--k', type=int, help='Support shots per class '
                   '(default 96).')
    p.add_argument('--step-values', type=_int_list, dest='step_values',
                   help='Comma separated inner step counts.')

    p = sub.add_parser('compare', help='Comparison table of trained models.')
    _add_common(p)
    p.add_argument('--checkpoint', action='append', metavar='METHOD=PATH',
                   help=('Model to compare, METHOD one of baseline, protonet, '
                         'protomaml; may be repeated.'))
    p.add_argument('--dataset', action='append', metavar='[NAME=]PATH',
                   help='Evaluation set; may be repeated.')
    p.add_argument('--k', type=int, help='Support shots per class for the '
                   'adapted methods (default {}).'.format(DEFAULT_ADAPT_K))
    p.add_argument('--steps', type=int,
                   help='ProtoMAML inner adaptation steps (default 25).')
    p.add_argument('--repeats', type=int,
                   help='Support resamplings per model (default 9).')
    p.add_argument('--n-jobs', type=int, dest='n_jobs',
                   help='Repeats evaluated in parallel.')
    return parser


def _pick(flag, values, key, parse=str):
    """Flag value if given, else the config value, else None."""
    if flag is not None:
        return flag
    if key in values:
        return parse(values[key])
    return None


def _split_list(text):
    return [v.strip() for v in text.split(',') if v.strip()]


def _named(item, default_name):
    name, sep, path = item.partition('=')
    if sep:
        return name.strip(), path.strip()
    return default_name, item


def _dataset_name(path):
    return os.path.splitext(os.path.basename(path))[0]


def make_run_config(args):
    """Merge defaults, the config file, ``--set`` and flags into a
    RunConfig."""
    where = '[{}] '.format(args.command)
    values = {}
    if args.config:
        values = load_config(args.config).get(args.command, {})
    values = dict(values)
    values.update(parse_assignments(args.set))

    def flag(name):
        return getattr(args, name, None)

    seed = _pick(args.seed, values, 'seed', int)
    seed = 0 if seed is None else seed
    run = RunConfig(command=args.command, out=args.out, seed=seed,
                    force=args.force)
    run.method = _pick(flag('method'), values, 'method')
    run.k = _pick(flag('k'), values, 'k', int)
    run.steps = _pick(flag('steps'), values, 'steps', int)

    if args.command == 'gen-data':
        check_keys(values, [episodes.GenConfig], where)
        run.settings['gen'] = merge_settings(
            episodes.GenConfig, values,
            flags={'dim': args.dim, 'per_class': args.per_class,
                   'eval_per_class': args.eval_per_class}, where=where)
        return run

    if args.command == 'train':
        if run.method not in TRAINERS:
            raise ConfigError('train needs --method, one of {}'.format(
                ', '.join(sorted(TRAINERS))))
        cls = TRAINERS[run.method][0]
        check_keys(values, [cls], where)
        dataset = _pick(args.dataset, values, 'dataset')
        if dataset is None:
            raise ConfigError('train needs --dataset')
        run.datasets = [('train', dataset)]
        run.val = _pick(args.val, values, 'val')
        run.settings['train'] = merge_settings(
            cls, values, flags={'epochs': args.epochs, 'seed': seed},
            where=where)
        return run

    check_keys(values, [harness.SweepConfig], where)
    sweep_flags = {'seed': seed, 'repeats': args.repeats,
                   'n_jobs': args.n_jobs, 'adapt_steps': run.steps}
    if args.command == 'compare':
        items = args.checkpoint or _split_list(values.get('checkpoint', ''))
        if not items:
            raise ConfigError('compare needs at least one --checkpoint')
        for item in items:
            method, sep, path = item.partition('=')
            if not sep or method not in TRAINERS:
                raise ConfigError(
                    '--checkpoint expects METHOD=PATH with METHOD one of {}, '
                    'got {!r}'.format(', '.join(sorted(TRAINERS)), item))
            run.checkpoints.append((method.strip(), path.strip()))
        items = args.dataset or _split_list(values.get('dataset', ''))
        if not items:
            raise ConfigError('compare needs at least one --dataset')
        run.datasets = [_named(item, _dataset_name(item)) for item in items]
        run.k = DEFAULT_ADAPT_K if run.k is None else run.k
        # Methods vary per row; the cap applies only to sweeps.
        run.settings['sweep'] = merge_settings(
            harness.SweepConfig, values,
            flags=dict(sweep_flags, shots=(run.k,), shot_cap=None),
            where=where)
        return run

    checkpoint = _pick(flag('checkpoint'), values, 'checkpoint')
    dataset = _pick(flag('dataset'), values, 'dataset')
    if checkpoint is None or dataset is None:
        raise ConfigError('{} needs --checkpoint and --dataset'.format(
            args.command))
    run.checkpoints = [('model', checkpoint)]
    run.datasets = [('eval', dataset)]
    run.method = run.method or (
        'protomaml' if args.command == 'sweep-steps' else 'protonet')
    sweep_flags['method'] = run.method
    if args.command == 'adapt-eval':
        run.k = DEFAULT_ADAPT_K if run.k is None else run.k
        sweep_flags.update(shots=(run.k,), shot_cap=None)
    elif args.command == 'sweep-shots':
        sweep_flags['shots'] = args.shots
    else:
        if run.method != 'protomaml':
            raise ConfigError(
                'sweep-steps varies the number of inner adaptation steps, '
                'which only ProtoMAML performs; ProtoNet adapts without '
                'gradient steps. Use --method protomaml.')
        run.k = 96 if run.k is None else run.k
        sweep_flags.update(shots=(run.k,), shot_cap=None)
        run.step_values = _pick(args.step_values, values, 'step_values',
                                _int_list) or harness.DEFAULT_STEPS
    run.settings['sweep'] = merge_settings(harness.SweepConfig, values,
                                           flags=sweep_flags, where=where)
    return run


def cmd_gen_data(args):
    """Write train, eval_seen and eval_unseen CSVs plus metadata."""
    run = make_run_config(args)
    run.validate(GEN_OUTPUTS)
    gen = run.settings['gen']
    train, eval_seen, eval_unseen = episodes.generate_synthetic(gen, run.seed)
    splits = {'train': train, 'eval_seen': eval_seen,
              'eval_unseen': eval_unseen}
    for name, ds in splits.items():
        episodes.save_dataset(ds, run.output_path(name + '.csv'))
        logger.info('wrote %d %s records', len(ds), name)
    episodes.write_metadata(run.output_path('metadata.txt'), gen, run.seed,
                            splits)
    run.write_manifest()
    return run


def cmd_train(args):
    """Train a backbone with the chosen recipe; write checkpoint and log."""
    run = make_run_config(args)
    run.validate(TRAIN_OUTPUTS)
    train = episodes.load_dataset(run.datasets[0][1])
    if run.val is None:
        logger.warning('no validation set given, validating on the training '
                       'set')
        val = train
    else:
        val = episodes.load_dataset(run.val)
    config = run.settings['train']
    trainer = TRAINERS[run.method][1]
    params, log = trainer(train, val, config, verbose=args.verbose)
    backbone.save_checkpoint(params, run.output_path('checkpoint.mspf'))
    log.to_csv(run.output_path('train_log.csv'), index=False)
    run.write_manifest(extra=[('trainable_params', params.count())])
    return run


def _load_eval(run):
    params = backbone.load_checkpoint(run.checkpoints[0][1])
    dataset = episodes.load_dataset(run.datasets[0][1])
    return params, dataset


def cmd_adapt_eval(args):
    """Adapt at one shot count over repeated support draws; report EER."""
    run = make_run_config(args)
    config = run.settings['sweep']
    outputs = ['adapt_eval.csv', 'manifest.txt'] + [
        'scores_repeat{}.csv'.format(r) for r in range(config.repeats)]
    run.validate(outputs)
    params, dataset = _load_eval(run)
    harness.check_support_sizes(dataset, run.k)
    sweep, trials = harness.run_shot_sweep(params, dataset, config,
                                           verbose=args.verbose,
                                           return_trials=True)
    for r, repeat_trials in enumerate(trials):
        write_scores(repeat_trials,
                     run.output_path('scores_repeat{}.csv'.format(r)))
    sweep.detail.to_csv(run.output_path('adapt_eval.csv'), index=False)
    run.write_manifest()
    for row in sweep.detail.itertuples(index=False):
        sys.stdout.write('repeat {}: EER {:.6f}\n'.format(row.repeat,
                                                          row.eer))
    s = sweep.summary.iloc[0]
    sys.stdout.write('{} k={} EER {:.6f} +/- {:.6f} over {} repeats\n'.format(
        config.method, run.k, s['mean_eer'], s['std_eer'], config.repeats))
    return run


def cmd_sweep(args):
    """Shot-count or adaptation-step sweep; writes detail and summary CSVs."""
    run = make_run_config(args)
    run.validate(SWEEP_OUTPUTS)
    params, dataset = _load_eval(run)
    config = run.settings['sweep']
    if args.command == 'sweep-steps':
        result = harness.run_steps_sweep(params, dataset, config, k=run.k,
                                         step_values=run.step_values,
                                         verbose=args.verbose)
    else:
        result = harness.run_shot_sweep(params, dataset, config,
                                        verbose=args.verbose)
    result.detail.to_csv(run.output_path('sweep_detail.csv'), index=False)
    result.summary.to_csv(run.output_path('sweep_summary.csv'), index=False)
    run.write_manifest()
    return run


def cmd_compare(args):
    """Comparison table of every model on every evaluation set."""
    run = make_run_config(args)
    run.validate(COMPARE_OUTPUTS)
    models = []
    for method, path in run.checkpoints:
        params = backbone.load_checkpoint(path)
        if method == 'baseline' and 'head.weight' not in params:
            raise ConfigError('{} has no supervised head and cannot be '
                              'scored as a baseline'.format(path))
        models.append((os.path.basename(path), method, params))
    eval_sets = {name: episodes.load_dataset(path)
                 for name, path in run.datasets}
    table = harness.compare_methods(models, eval_sets, run.settings['sweep'],
                                    k=run.k, verbose=args.verbose)
    table.to_csv(run.output_path('comparison.csv'), index=False)
    text = harness.format_comparison(table)
    with open(run.output_path('comparison.txt'), 'w') as f:
        f.write(text)
    run.write_manifest()
    sys.stdout.write(text)
    return run


COMMAND_FUNCS = {
    'gen-data': cmd_gen_data,
    'train': cmd_train,
    'adapt-eval': cmd_adapt_eval,
    'sweep-shots': cmd_sweep,
    'sweep-steps': cmd_sweep,
    'compare': cmd_compare,
}


def main(argv=None):
    """Run one command; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format='%(levelname)s %(name)s: %(message)s')
    try:
        COMMAND_FUNCS[args.command](args)
    except (ValueError, OSError) as e:
        sys.stderr.write('error: {}\n'.format(e))
        return 1
    return 0
