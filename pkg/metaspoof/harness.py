"""Few-shot evaluation protocol: repeated support resampling over shot
counts and adaptation steps, and the method comparison table."""
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
import dataclasses
from dataclasses import dataclass
import logging

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import episodes
from .baseline import baseline_score
from .general import chunks, derive_seed
from .metrics import eer_from_scores, make_trials, summarize_repeats
from .protomaml import protomaml_adapt_and_score
from .protonet import protonet_score

logger = logging.getLogger(__name__)

METHODS = ('protonet', 'protomaml')
DEFAULT_SHOTS = (2, 4, 8, 16, 32, 64, 96, 256)
DEFAULT_STEPS = (0, 5, 25, 100, 500, 1000, 5000)
PROTOMAML_SHOT_CAP = 96
COMPARISON_COLUMNS = ['model', 'method', 'trainable_params',
                      'shots_per_class', 'eval_set', 'mean_eer', 'std_eer']

SweepResult = namedtuple('SweepResult', ['detail', 'summary'])
_Job = namedtuple('_Job', ['key', 'k', 'repeat', 'seed', 'steps'])
JobResult = namedtuple('JobResult', ['key', 'repeat', 'eer', 'support_seed',
                                     'trials'])


@dataclass
class SweepConfig:
    """
    Settings of a few-shot sweep.

    ``shots`` defaults to 2 through 256. For ProtoMAML any shot count above
    ``shot_cap`` is dropped (set ``shot_cap`` to None to keep them).
    Every (k, repeat) job draws its support set from its own seed, derived
    from ``seed``, k and the repeat index, so results do not depend on which
    other ks are swept or on ``n_jobs``.

    """
    shots: tuple = DEFAULT_SHOTS
    repeats: int = 9
    adapt_steps: int = 25
    inner_rate: float = 0.1
    method: str = 'protonet'
    seed: int = 0
    n_jobs: int = 1
    shot_cap: int = PROTOMAML_SHOT_CAP

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError('method must be one of {}, got {!r}'.format(
                ', '.join(METHODS), self.method))
        shots = sorted(int(k) for k in self.shots)
        if not shots or shots[0] < 1:
            raise ValueError('shots must be a non-empty list of ints >= 1')
        if self.method == 'protomaml' and self.shot_cap is not None:
            dropped = [k for k in shots if k > self.shot_cap]
            if dropped:
                logger.warning('dropping shot counts %s above the ProtoMAML '
                               'cap of %d', dropped, self.shot_cap)
            shots = [k for k in shots if k <= self.shot_cap]
            if not shots:
                raise ValueError('no shot counts left at or below the cap '
                                 'of {}'.format(self.shot_cap))
        self.shots = tuple(shots)
        if self.repeats < 1:
            raise ValueError('repeats must be >= 1')
        if self.adapt_steps < 0:
            raise ValueError('adapt_steps must be >= 0')
        if self.inner_rate <= 0:
            raise ValueError('inner_rate must be positive')
        if self.n_jobs < 1:
            raise ValueError('n_jobs must be >= 1')


def support_seed(master, k, repeat):
    """Seed of the support draw for shot count ``k`` and repeat ``repeat``."""
    return derive_seed(master, k, repeat)


def check_support_sizes(dataset, k):
    """
    Raise unless both classes keep at least one query record after drawing
    ``k`` support records each.
    """
    targets = dataset.binary_targets()
    for name, n in ((episodes.BONAFIDE, int((targets == 0).sum())),
                    (episodes.SPOOF, int((targets == 1).sum()))):
        if n <= k:
            raise episodes.InsufficientDataError(
                '{}-shot evaluation needs more than {} {} records, the '
                'evaluation set has {}'.format(k, k, name, n))


def score_support(method, params, support, query_features, steps=25,
                  inner_rate=0.1):
    """Bonafide scores of ``query_features`` after adapting to ``support``."""
    if method == 'protonet':
        return protonet_score(params, support, query_features)
    if method == 'protomaml':
        return protomaml_adapt_and_score(params, support, query_features,
                                         steps=steps, inner_rate=inner_rate)
    raise ValueError('unknown method {!r}'.format(method))


def _run_job(params, dataset, config, job):
    rng = np.random.default_rng(job.seed)
    task = episodes.sample_binary_support(dataset, job.k, rng)
    scores = score_support(config.method, params, task, task.query_x,
                           steps=job.steps, inner_rate=config.inner_rate)
    result = eer_from_scores(scores[task.query_y == 0],
                             scores[task.query_y == 1])
    trials = make_trials(task.query_ids, scores, task.query_y)
    return JobResult(job.key, job.repeat, result.eer, job.seed, trials)


def _run_jobs(params, dataset, config, jobs, verbose):
    if params.config.input_dim != dataset.dim:
        raise ValueError(
            'model expects {}-dimensional input but the evaluation set has '
            'dim {}'.format(params.config.input_dim, dataset.dim))
    for k in sorted(set(job.k for job in jobs)):
        check_support_sizes(dataset, k)

    def _one(job):
        return _run_job(params, dataset, config, job)

    if config.n_jobs == 1:
        results = [_one(job) for job in tqdm(jobs, disable=not verbose)]
    else:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(tqdm(pool.map(_one, jobs), total=len(jobs),
                                disable=not verbose))
    return results


def _sweep_frames(results, key, repeats):
    detail = pd.DataFrame(
        [[r.key, r.repeat, r.eer, r.support_seed] for r in results],
        columns=[key, 'repeat', 'eer', 'support_seed'])
    detail['support_seed'] = detail['support_seed'].astype(np.uint64)
    rows = []
    # Jobs are ordered by sweep value, then repeat.
    for group in chunks(results, repeats):
        s = summarize_repeats([r.eer for r in group])
        rows.append([group[0].key, s.mean, s.std])
    summary = pd.DataFrame(rows, columns=[key, 'mean_eer', 'std_eer'])
    return SweepResult(detail, summary)


def shot_jobs(config):
    return [_Job(k, k, r, support_seed(config.seed, k, r), config.adapt_steps)
            for k in config.shots for r in range(config.repeats)]


def run_shot_sweep(params, dataset, config, verbose=False,
                   return_trials=False):
    """
    EER against the number of support shots per class.

    For every k in ``config.shots`` and every repeat, a k-shot bonafide vs
    spoof support set is drawn, the model is adapted with
    ``config.method`` and the remaining records are scored.

    Parameters
    ----------
    params : ParameterSet
        Trained backbone.

    dataset : EpisodeDataset
        Evaluation set.

    config : SweepConfig
        Sweep settings.

    verbose : bool
        Show a progress bar over jobs.

    return_trials : bool
        Also return the scored query trials of every job.

    Returns
    -------
    result : SweepResult
        ``detail`` has columns k, repeat, eer and support_seed;
        ``summary`` has columns k, mean_eer and std_eer.

    trials : list of list of ScoredTrial
        Only if ``return_trials``; one list per detail row.

    """
    results = _run_jobs(params, dataset, config, shot_jobs(config), verbose)
    sweep = _sweep_frames(results, 'k', config.repeats)
    if return_trials:
        return sweep, [r.trials for r in results]
    return sweep


def run_steps_sweep(params, dataset, config, k=96, step_values=DEFAULT_STEPS,
                    verbose=False):
    """
    ProtoMAML EER against the number of inner adaptation steps at a fixed
    shot count.

    Every step value reuses the same support draws (seeded by master seed,
    k and repeat), so the curve compares steps on identical supports.

    Returns
    -------
    result : SweepResult
        Detail columns steps, repeat, eer, support_seed; summary columns
        steps, mean_eer, std_eer.

    """
    if config.method != 'protomaml':
        raise ValueError('the steps sweep adapts with inner SGD steps, which '
                         'only the protomaml method has; got method {!r}'
                         .format(config.method))
    step_values = [int(s) for s in step_values]
    if not step_values or min(step_values) < 0:
        raise ValueError('step values must be a non-empty list of ints >= 0')
    jobs = [_Job(s, k, r, support_seed(config.seed, k, r), s)
            for s in step_values for r in range(config.repeats)]
    results = _run_jobs(params, dataset, config, jobs, verbose)
    return _sweep_frames(results, 'steps', config.repeats)


def compare_methods(models, eval_sets, config, k=None, verbose=False):
    """
    EER of several trained models on several evaluation sets.

    Parameters
    ----------
    models : list of (name, method, ParameterSet)
        ``method`` is ``baseline`` (scored zero-shot on the whole set),
        ``protonet`` or ``protomaml`` (adapted at ``k`` shots, mean and std
        over ``config.repeats`` support draws).

    eval_sets : dict
        Evaluation set name to EpisodeDataset.

    config : SweepConfig
        Repeats, seed, steps and rate for the adapted methods.

    k : int
        Shots per class; defaults to the smallest of ``config.shots``.

    Returns
    -------
    table : pandas.DataFrame
        One row per (model, eval set) with columns model, method,
        trainable_params, shots_per_class, eval_set, mean_eer and std_eer.

    """
    k = config.shots[0] if k is None else int(k)
    rows = []
    for name, method, params in models:
        for set_name, dataset in eval_sets.items():
            if params.config.input_dim != dataset.dim:
                raise ValueError(
                    'model {} expects {}-dimensional input but {} has dim '
                    '{}'.format(name, params.config.input_dim, set_name,
                                dataset.dim))
            if method == 'baseline':
                targets = dataset.binary_targets()
                scores = baseline_score(params, dataset.features)
                eer = eer_from_scores(scores[targets == 0],
                                      scores[targets == 1]).eer
                rows.append([name, method, params.count(), 0, set_name, eer,
                             0.0])
                continue
            sweep_config = dataclasses.replace(config, method=method,
                                               shots=(k,), shot_cap=None)
            result = run_shot_sweep(params, dataset, sweep_config,
                                    verbose=verbose)
            s = result.summary.iloc[0]
            rows.append([name, method, params.count(), k, set_name,
                         float(s['mean_eer']), float(s['std_eer'])])
    return pd.DataFrame(rows, columns=COMPARISON_COLUMNS)


def format_comparison(table):
    """Aligned plain-text rendering of a comparison table."""
    return table.to_string(index=False) + '\n'
