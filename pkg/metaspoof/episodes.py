"""Labeled embedding datasets, episodic task sampling and the synthetic
attack-family generator."""
from collections import namedtuple
import csv
from dataclasses import dataclass
import re

import numpy as np
import pandas as pd
from scipy.stats import ortho_group

from . import general

BONAFIDE = 'bonafide'
SPOOF = 'spoof'
BINARY_LABELS = (BONAFIDE, SPOOF)
META_COLUMNS = ['id', 'attack_class', 'binary_label']

LabeledEmbedding = namedtuple(
    'LabeledEmbedding', ['id', 'features', 'attack_class', 'binary_label'])

_LINE_REGEX = re.compile(r'line (\d+)')


class DatasetFormatError(ValueError):
    """An embedding file or in-memory dataset is malformed."""


class InsufficientDataError(ValueError):
    """A class has too few records for the requested sampling."""


class EpisodeDataset:
    """
    Immutable collection of labeled embeddings.

    Parameters
    ----------
    ids : array-like of str
        Record identifiers.

    attack_class : array-like of str
        Attack family per record, ``bonafide`` for genuine records.

    binary_label : array-like of str
        ``bonafide`` or ``spoof`` per record.

    features : numpy.ndarray
        Feature matrix of shape [n_records x dim].

    """

    def __init__(self, ids, attack_class, binary_label, features):
        self.ids = np.asarray(ids, dtype=object)
        self.attack_class = np.asarray(attack_class, dtype=object)
        self.binary_label = np.asarray(binary_label, dtype=object)
        self.features = np.array(features, dtype=np.float64)
        self.features.setflags(write=False)
        n = len(self.ids)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetFormatError(
                'features of shape {} do not match {} records'.format(
                    self.features.shape, n))
        if len(self.attack_class) != n or len(self.binary_label) != n:
            raise DatasetFormatError('label arrays differ in length from ids')
        if n == 0:
            raise DatasetFormatError('dataset has no records')
        for i in range(n):
            label = self.binary_label[i]
            if label not in BINARY_LABELS:
                raise DatasetFormatError(
                    'record {}: unknown binary label {!r}'.format(
                        self.ids[i], label))
            if (self.attack_class[i] == BONAFIDE) != (label == BONAFIDE):
                raise DatasetFormatError(
                    'record {}: attack class {!r} inconsistent with binary '
                    'label {!r}'.format(self.ids[i], self.attack_class[i],
                                        label))
        if not np.isfinite(self.features).all():
            raise DatasetFormatError('features must be finite')
        self.classes = sorted(set(self.attack_class))
        self.class_index = {c: np.flatnonzero(self.attack_class == c)
                            for c in self.classes}

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def records(self):
        return [LabeledEmbedding(self.ids[i], self.features[i],
                                 self.attack_class[i], self.binary_label[i])
                for i in range(len(self))]

    def binary_targets(self):
        """Class index per record: 0 for bonafide, 1 for spoof."""
        return (self.binary_label == SPOOF).astype(int)

    def class_counts(self):
        return {c: len(idx) for c, idx in self.class_index.items()}

    def subset(self, indices):
        indices = np.asarray(indices)
        return EpisodeDataset(self.ids[indices], self.attack_class[indices],
                              self.binary_label[indices],
                              self.features[indices])

    def to_frame(self):
        df = pd.DataFrame(self.features,
                          columns=['f{}'.format(i) for i in range(self.dim)])
        df.insert(0, 'binary_label', self.binary_label)
        df.insert(0, 'attack_class', self.attack_class)
        df.insert(0, 'id', self.ids)
        return df


def _record_lines(fn, n_cols):
    """Check field counts and return the file line of each record."""
    lines = []
    with open(fn, newline='') as f:
        reader = csv.reader(f)
        for row in reader:
            if not row:
                continue
            if len(row) != n_cols:
                raise DatasetFormatError(
                    '{}: line {}: expected {} fields, found {}'.format(
                        fn, reader.line_num, n_cols, len(row)))
            lines.append(reader.line_num)
    # Header first.
    return lines[1:]


def load_dataset(fn):
    """
    Read an embedding CSV.

    Parameters
    ----------
    fn : str
        File with header ``id,attack_class,binary_label,f0,...,f{D-1}`` and
        one record per line.

    Returns
    -------
    dataset : EpisodeDataset
        Records in file order.

    """
    try:
        header = list(pd.read_csv(fn, nrows=0).columns)
    except pd.errors.EmptyDataError:
        raise DatasetFormatError('{}: empty file'.format(fn))
    features = header[3:]
    if (header[:3] != META_COLUMNS or not features
            or features != ['f{}'.format(i) for i in range(len(features))]):
        raise DatasetFormatError(
            '{}: line 1: header must be id,attack_class,binary_label,f0,...'
            .format(fn))
    lines = _record_lines(fn, len(header))
    try:
        df = pd.read_csv(fn, dtype={c: str for c in META_COLUMNS},
                         keep_default_na=False, na_values=[''],
                         float_precision='round_trip')
    except pd.errors.ParserError as e:
        m = _LINE_REGEX.search(str(e))
        where = 'line {}: '.format(m.group(1)) if m else ''
        raise DatasetFormatError('{}: {}{}'.format(fn, where, e))
    if len(df) == 0:
        raise DatasetFormatError('{}: no records'.format(fn))

    values = df[features].apply(pd.to_numeric, errors='coerce')
    if (df[features].dtypes != np.float64).any():
        bad = values.isnull().any(axis=1).values
    else:
        bad = np.zeros(len(df), dtype=bool)
    bad |= ~np.isfinite(values.values).all(axis=1)
    bad |= df[META_COLUMNS].isnull().any(axis=1).values
    if bad.any():
        line = lines[int(np.flatnonzero(bad)[0])]
        raise DatasetFormatError(
            '{}: line {}: missing or non-finite value'.format(fn, line))
    unknown = ~df['binary_label'].isin(BINARY_LABELS).values
    if unknown.any():
        i = int(np.flatnonzero(unknown)[0])
        raise DatasetFormatError(
            '{}: line {}: unknown binary label {!r}'.format(
                fn, lines[i], df['binary_label'].iloc[i]))
    try:
        return EpisodeDataset(df['id'].values, df['attack_class'].values,
                              df['binary_label'].values,
                              df[features].values.astype(np.float64))
    except DatasetFormatError as e:
        raise DatasetFormatError('{}: {}'.format(fn, e))


def save_dataset(dataset, fn):
    """Write ``dataset`` as an embedding CSV that ``load_dataset`` reads back
    exactly."""
    dataset.to_frame().to_csv(fn, index=False)


@dataclass
class GenConfig:
    """
    Synthetic attack-family layout.

    Bonafide records cluster at the origin. Seen attack ``i`` clusters at
    ``separation`` along a random orthonormal direction; unseen attacks sit
    at ``shift`` along directions no seen attack uses. Every record of the
    unseen evaluation split is further translated by ``channel_offset``
    along yet another direction.

    """
    dim: int = 32
    per_class: int = 200
    eval_per_class: int = 300
    n_seen: int = 6
    n_unseen: int = 4
    spread: float = 1.0
    separation: float = 4.0
    shift: float = 4.0
    channel_offset: float = 3.0

    def __post_init__(self):
        if self.n_seen < 1 or self.n_unseen < 1:
            raise ValueError('need at least one seen and one unseen attack')
        if self.dim < self.n_seen + self.n_unseen + 1:
            raise ValueError(
                'dim must be at least n_seen + n_unseen + 1 = {}'.format(
                    self.n_seen + self.n_unseen + 1))
        if self.per_class < 1 or self.eval_per_class < 1:
            raise ValueError('per-class counts must be >= 1')
        if self.spread < 0:
            raise ValueError('spread must be >= 0')

    @property
    def seen_classes(self):
        return ['S{:02d}'.format(i + 1) for i in range(self.n_seen)]

    @property
    def unseen_classes(self):
        return ['S{:02d}'.format(self.n_seen + i + 1)
                for i in range(self.n_unseen)]


def _directions(config, rng):
    return ortho_group.rvs(config.dim, random_state=rng)


def _centers(config, q):
    centers = {BONAFIDE: np.zeros(config.dim)}
    for i, c in enumerate(config.seen_classes):
        centers[c] = config.separation * q[i]
    for j, c in enumerate(config.unseen_classes):
        centers[c] = config.shift * q[config.n_seen + j]
    return centers, config.channel_offset * q[config.n_seen + config.n_unseen]


def synthetic_centers(config, seed):
    """
    True cluster means used by ``generate_synthetic``.

    Returns
    -------
    centers : dict
        Class label to mean vector, before any channel offset.

    channel : numpy.ndarray
        Translation applied to every record of the unseen evaluation split.

    """
    rng = np.random.default_rng(seed)
    return _centers(config, _directions(config, rng))


def _draw_split(split, classes, centers, n, config, rng, offset=None):
    ids, attack, label, feats = [], [], [], []
    for c in classes:
        x = centers[c] + config.spread * rng.standard_normal((n, config.dim))
        if offset is not None:
            x = x + offset
        ids += ['{}_{}_{:05d}'.format(split, c, i) for i in range(n)]
        attack += [c] * n
        label += [BONAFIDE if c == BONAFIDE else SPOOF] * n
        feats.append(x)
    return EpisodeDataset(ids, attack, label, np.vstack(feats))


def generate_synthetic(config, seed):
    """
    Draw the synthetic train, seen-domain and unseen-domain splits.

    Parameters
    ----------
    config : GenConfig
        Layout and sizes.

    seed : int
        Master seed; equal seeds give identical splits.

    Returns
    -------
    train, eval_seen, eval_unseen : EpisodeDataset
        ``train`` and ``eval_seen`` hold bonafide plus the seen attacks;
        ``eval_unseen`` holds bonafide plus the unseen attacks, all shifted
        by the channel offset.

    """
    rng = np.random.default_rng(seed)
    centers, channel = _centers(config, _directions(config, rng))
    seen = [BONAFIDE] + config.seen_classes
    unseen = [BONAFIDE] + config.unseen_classes
    train = _draw_split('train', seen, centers, config.per_class, config, rng)
    eval_seen = _draw_split('eval_seen', seen, centers, config.eval_per_class,
                            config, rng)
    eval_unseen = _draw_split('eval_unseen', unseen, centers,
                              config.eval_per_class, config, rng,
                              offset=channel)
    return train, eval_seen, eval_unseen


def write_metadata(fn, config, seed, splits):
    """
    Write the generator settings and split sizes as key=value lines.

    Parameters
    ----------
    fn : str
        Output file.

    config : GenConfig
        Generator settings.

    seed : int
        Master seed.

    splits : dict
        Split name to EpisodeDataset.

    """
    items = general.config_items(config)
    items.append(('seed', seed))
    for name, ds in splits.items():
        items.append(('{}.records'.format(name), len(ds)))
        items.append(('{}.classes'.format(name), ds.classes))
    general.write_key_values(items, fn)


@dataclass
class TaskSpec:
    """N-way K-shot episode shape."""
    n_way: int = 3
    k_shot: int = 5
    query_per_class: int = 5

    def __post_init__(self):
        if self.n_way < 2:
            raise ValueError('n_way must be >= 2')
        if self.k_shot < 1 or self.query_per_class < 1:
            raise ValueError('k_shot and query_per_class must be >= 1')


@dataclass
class Task:
    """
    One episode.

    ``support_y`` and ``query_y`` hold task-local class indices; local class
    ``i`` is dataset class ``classes[i]``.

    """
    support_x: np.ndarray
    support_y: np.ndarray
    support_ids: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    query_ids: np.ndarray
    classes: tuple

    @property
    def n_way(self):
        return len(self.classes)


def _make_task(dataset, support_idx, support_y, query_idx, query_y, classes):
    return Task(support_x=dataset.features[support_idx],
                support_y=np.asarray(support_y, dtype=int),
                support_ids=dataset.ids[support_idx],
                query_x=dataset.features[query_idx],
                query_y=np.asarray(query_y, dtype=int),
                query_ids=dataset.ids[query_idx],
                classes=tuple(classes))


def sample_task(dataset, spec, rng):
    """
    Draw an N-way K-shot episode.

    Classes are chosen uniformly without replacement. Within each class,
    ``k_shot + query_per_class`` records are drawn without replacement; the
    first ``k_shot`` go to the support set and the rest to the query set.

    Parameters
    ----------
    dataset : EpisodeDataset
        Source of records.

    spec : TaskSpec
        Episode shape.

    rng : numpy.random.Generator
        Random stream; the same state reproduces the same task.

    Returns
    -------
    task : Task

    """
    if spec.n_way > len(dataset.classes):
        raise InsufficientDataError(
            '{}-way task requested but dataset has {} classes'.format(
                spec.n_way, len(dataset.classes)))
    need = spec.k_shot + spec.query_per_class
    picked = rng.choice(len(dataset.classes), size=spec.n_way, replace=False)
    classes = [dataset.classes[i] for i in picked]
    support_idx, query_idx = [], []
    for c in classes:
        members = dataset.class_index[c]
        if len(members) < need:
            raise InsufficientDataError(
                'class {} has {} records, {} needed'.format(
                    c, len(members), need))
        draw = members[rng.choice(len(members), size=need, replace=False)]
        support_idx.append(draw[:spec.k_shot])
        query_idx.append(draw[spec.k_shot:])
    n = spec.n_way
    return _make_task(dataset, np.concatenate(support_idx),
                      np.repeat(np.arange(n), spec.k_shot),
                      np.concatenate(query_idx),
                      np.repeat(np.arange(n), spec.query_per_class), classes)


def sample_binary_support(dataset, k, rng):
    """
    Draw a two-way bonafide vs spoof support set and use the rest as query.

    Local class 0 is bonafide and class 1 pools every attack class. The query
    set holds every record not in the support, in dataset order.

    """
    if k < 1:
        raise ValueError('k must be >= 1')
    targets = dataset.binary_targets()
    bona = np.flatnonzero(targets == 0)
    spoof = np.flatnonzero(targets == 1)
    for name, members in ((BONAFIDE, bona), (SPOOF, spoof)):
        if len(members) < k:
            raise InsufficientDataError(
                '{} class has {} records, {} needed'.format(
                    name, len(members), k))
    support_idx = np.concatenate([
        bona[rng.choice(len(bona), size=k, replace=False)],
        spoof[rng.choice(len(spoof), size=k, replace=False)]])
    in_support = np.zeros(len(dataset), dtype=bool)
    in_support[support_idx] = True
    query_idx = np.flatnonzero(~in_support)
    return _make_task(dataset, support_idx, np.repeat([0, 1], k), query_idx,
                      targets[query_idx], BINARY_LABELS)
