"""Equal error rate and repeat summaries for bonafide-vs-spoof scores.

Scores are oriented so that higher means more bonafide.
"""
from collections import namedtuple
import math

import numpy as np
import pandas as pd

from .episodes import BINARY_LABELS, BONAFIDE, SPOOF

ScoredTrial = namedtuple('ScoredTrial', ['id', 'score', 'truth'])
EerResult = namedtuple('EerResult', ['eer', 'threshold', 'n_bonafide',
                                     'n_spoof'])
RepeatSummary = namedtuple('RepeatSummary', ['mean', 'std', 'count'])

SCORE_COLUMNS = ['id', 'score', 'truth']


def error_rates(bonafide, spoof, thresholds):
    """
    False rejection and false acceptance rates at each threshold.

    FRR(t) is the fraction of bonafide scores below t and FAR(t) the fraction
    of spoof scores at or above t.

    """
    bonafide = np.sort(bonafide)
    spoof = np.sort(spoof)
    frr = np.searchsorted(bonafide, thresholds, side='left') / len(bonafide)
    far = ((len(spoof) - np.searchsorted(spoof, thresholds, side='left'))
           / len(spoof))
    return frr, far


def eer_from_scores(bonafide, spoof):
    """
    Equal error rate from separate bonafide and spoof score arrays.

    Thresholds are swept over the sorted unique scores plus one point just
    above the highest score, where FRR is 1 and FAR is 0. The EER is read at
    the first sweep point where FAR no longer exceeds FRR; if the two are not
    equal there, it is linearly interpolated with the preceding point.

    Returns
    -------
    result : EerResult

    """
    bonafide = np.asarray(bonafide, dtype=np.float64)
    spoof = np.asarray(spoof, dtype=np.float64)
    if len(bonafide) == 0 or len(spoof) == 0:
        raise ValueError('EER needs at least one bonafide and one spoof '
                         'score, got {} and {}'.format(len(bonafide),
                                                       len(spoof)))
    if not (np.isfinite(bonafide).all() and np.isfinite(spoof).all()):
        raise ValueError('scores must be finite')
    scores = np.unique(np.concatenate([bonafide, spoof]))
    thresholds = np.append(scores, np.nextafter(scores[-1], np.inf))
    frr, far = error_rates(bonafide, spoof, thresholds)
    diff = far - frr
    i = int(np.flatnonzero(diff <= 0)[0])
    if diff[i] == 0:
        eer, threshold = far[i], thresholds[i]
    else:
        a = diff[i - 1] / (diff[i - 1] - diff[i])
        eer = frr[i - 1] + a * (frr[i] - frr[i - 1])
        threshold = thresholds[i - 1] + a * (thresholds[i]
                                             - thresholds[i - 1])
    return EerResult(float(eer), float(threshold), len(bonafide), len(spoof))


def compute_eer(trials):
    """
    Equal error rate of a list of ScoredTrial.

    Raises
    ------
    ValueError
        If either class is absent or a truth label is unknown.

    """
    truth = np.array([t.truth for t in trials], dtype=object)
    unknown = ~np.isin(truth, BINARY_LABELS)
    if unknown.any():
        raise ValueError('unknown truth label {!r}'.format(
            truth[unknown][0]))
    scores = np.array([t.score for t in trials], dtype=np.float64)
    return eer_from_scores(scores[truth == BONAFIDE], scores[truth == SPOOF])


def make_trials(ids, scores, targets):
    """ScoredTrial list from ids, scores and 0 (bonafide) / 1 (spoof)
    targets."""
    return [ScoredTrial(i, float(s), BINARY_LABELS[int(t)])
            for i, s, t in zip(ids, scores, targets)]


def summarize_repeats(eers):
    """
    Mean and sample standard deviation of repeated EERs.

    Returns
    -------
    summary : RepeatSummary
        ``std`` uses the n-1 denominator and is 0 for a single value. Both
        are independent of the order of ``eers``.

    """
    values = [float(e) for e in eers]
    if not values:
        raise ValueError('summarize_repeats needs at least one value')
    n = len(values)
    mean = math.fsum(values) / n
    if n == 1:
        return RepeatSummary(mean, 0.0, 1)
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return RepeatSummary(mean, math.sqrt(var), n)


def write_scores(trials, fn):
    """Write trials as a CSV with columns id, score and truth."""
    df = pd.DataFrame(list(trials), columns=SCORE_COLUMNS)
    df.to_csv(fn, index=False)


def read_scores(fn):
    """Read a score CSV written by ``write_scores`` or an external scorer."""
    df = pd.read_csv(fn, dtype={'id': str, 'truth': str},
                     keep_default_na=False, float_precision='round_trip')
    missing = [c for c in SCORE_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError('{}: missing column(s) {}'.format(
            fn, ', '.join(missing)))
    bad = ~df['truth'].isin(BINARY_LABELS)
    if bad.any():
        raise ValueError('{}: line {}: unknown truth label {!r}'.format(
            fn, int(np.flatnonzero(bad.values)[0]) + 2,
            df['truth'][bad].iloc[0]))
    scores = pd.to_numeric(df['score'], errors='coerce').values
    if not np.isfinite(scores).all():
        raise ValueError('{}: line {}: score is not a finite number'.format(
            fn, int(np.flatnonzero(~np.isfinite(scores))[0]) + 2))
    return [ScoredTrial(i, float(s), t)
            for i, s, t in zip(df['id'], scores, df['truth'])]
