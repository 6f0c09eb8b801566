"""Prototypical networks: class centroids, the distance softmax, episodic
training and nonparametric few-shot scoring."""
from dataclasses import dataclass, field
import logging

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import autodiff as ad
from . import backbone
from . import episodes
from .optim import AdamW, LR_MODES, cyclic_lr

logger = logging.getLogger(__name__)

LOG_COLUMNS = ['epoch', 'mean_loss', 'val_acc', 'lr']


@dataclass
class PrototypeSet:
    """One centroid per task class; row ``i`` belongs to ``classes[i]``."""
    vectors: ad.Tensor
    classes: tuple = ()

    def __len__(self):
        return self.vectors.shape[0]


@dataclass
class ProtoTrainConfig:
    """
    Episodic training recipe.

    The optimizer is AdamW; its rate follows ``cyclic_lr`` between
    ``base_lr`` and ``max_lr`` with a half-period of ``step_size_epochs``
    epochs. ``patience``, if set, stops training after that many epochs
    without a strictly better validation accuracy.

    """
    epochs: int = 200
    episodes_per_epoch: int = 100
    n_way: int = 3
    k_shot: int = 5
    query_per_class: int = 5
    max_lr: float = 1e-3
    base_lr: float = 1e-6
    step_size_epochs: int = 8
    lr_mode: str = 'triangular'
    lr_gamma: float = 1.0
    weight_decay: float = 0.01
    val_tasks: int = 200
    patience: int = None
    hidden_dims: tuple = (256, 128)
    output_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        if self.epochs < 1 or self.episodes_per_epoch < 1:
            raise ValueError('epochs and episodes_per_epoch must be >= 1')
        if self.max_lr <= 0 or self.base_lr <= 0:
            raise ValueError('learning rates must be positive')
        if self.step_size_epochs < 1:
            raise ValueError('step_size_epochs must be >= 1')
        if self.lr_mode not in LR_MODES:
            raise ValueError('lr_mode must be one of {}'.format(
                ', '.join(LR_MODES)))
        if self.val_tasks < 1:
            raise ValueError('val_tasks must be >= 1')
        if self.patience is not None and self.patience < 0:
            raise ValueError('patience must be >= 0')
        # Raises on a bad episode shape.
        episodes.TaskSpec(self.n_way, self.k_shot, self.query_per_class)

    @property
    def task_spec(self):
        return episodes.TaskSpec(self.n_way, self.k_shot, self.query_per_class)

    @property
    def iterations_per_epoch(self):
        return self.episodes_per_epoch

    def backbone_config(self, input_dim):
        return backbone.BackboneConfig(input_dim=input_dim,
                                       hidden_dims=self.hidden_dims,
                                       output_dim=self.output_dim,
                                       seed=self.seed)


def compute_prototypes(embeddings, task_labels, classes=()):
    """
    Class centroids of a support set.

    Parameters
    ----------
    embeddings : Tensor
        Support embeddings of shape [m x d].

    task_labels : array-like of int
        Task-local class index per row; every index 0..N-1 must occur.

    Returns
    -------
    protos : PrototypeSet
        Row ``i`` is the mean of the embeddings labeled ``i``.

    """
    task_labels = np.asarray(task_labels)
    n = int(task_labels.max()) + 1 if len(task_labels) else 0
    if classes:
        n = max(n, len(classes))
    if n == 0:
        raise ValueError('compute_prototypes: no support embeddings')
    return PrototypeSet(ad.segment_mean(embeddings, task_labels, n),
                        tuple(classes))


def proto_log_probs(query_emb, protos):
    """Log-probabilities of each query row under the negative squared
    distance softmax, shape [q x N]."""
    vectors = protos.vectors if isinstance(protos, PrototypeSet) else protos
    return ad.log_softmax(-ad.sq_euclidean(query_emb, vectors))


def _accuracy(log_probs, targets):
    return float(np.mean(np.argmax(log_probs.data, axis=1) == targets))


def episode_loss(params, task):
    """
    ProtoNet loss of one episode.

    Support and query are embedded with ``params``; prototypes come from the
    support only.

    Returns
    -------
    loss : Tensor
        Mean query NLL, a 0-d tensor connected to ``params``.

    accuracy : float
        Fraction of query rows whose most probable class is correct.

    """
    protos = compute_prototypes(backbone.embed(params, task.support_x),
                                task.support_y, task.classes)
    lp = proto_log_probs(backbone.embed(params, task.query_x), protos)
    return ad.nll_loss(lp, task.query_y), _accuracy(lp, task.query_y)


def make_task_bank(dataset, spec, n_tasks, seed):
    """Fixed list of validation tasks drawn from ``dataset``."""
    rng = np.random.default_rng([seed, 1])
    return [episodes.sample_task(dataset, spec, rng) for _ in range(n_tasks)]


def evaluate_bank(params, bank):
    """Mean query accuracy of ProtoNet classification over a task bank."""
    accs = []
    for task in bank:
        protos = compute_prototypes(backbone.embed(params, task.support_x),
                                    task.support_y, task.classes)
        lp = proto_log_probs(backbone.embed(params, task.query_x), protos)
        accs.append(_accuracy(lp, task.query_y))
    return float(np.mean(accs))


def _check_dims(train, val):
    if train.dim != val.dim:
        raise ValueError(
            'training data has dim {} but validation data has dim {}'.format(
                train.dim, val.dim))


class _BestTracker:
    """Keeps a copy of the parameters with the best validation score."""

    def __init__(self, patience, higher_is_better=True):
        self.patience = patience
        self.sign = 1.0 if higher_is_better else -1.0
        self.best = None
        self.best_epoch = 0
        self.params = None

    def update(self, epoch, value, params):
        if self.best is None or self.sign * value > self.sign * self.best:
            self.best = value
            self.best_epoch = epoch
            self.params = backbone.clone_params(params).requires_grad_()
            return True
        return False

    def should_stop(self, epoch):
        return (self.patience is not None
                and epoch - self.best_epoch > self.patience)


def train_protonet(train, val, config, verbose=False):
    """
    Episodic ProtoNet training.

    Each epoch samples ``episodes_per_epoch`` tasks from ``train`` and takes
    one AdamW step per task. After each epoch the mean query accuracy over a
    fixed bank of ``val_tasks`` tasks from ``val`` is measured.

    Parameters
    ----------
    train : EpisodeDataset
        Meta-training classes.

    val : EpisodeDataset
        Validation classes; must share the feature width of ``train``.

    config : ProtoTrainConfig
        Recipe.

    verbose : bool
        Show a progress bar over epochs.

    Returns
    -------
    params : ParameterSet
        Parameters of the epoch with the highest validation accuracy.

    log : pandas.DataFrame
        One row per epoch with columns epoch, mean_loss, val_acc and lr.

    """
    _check_dims(train, val)
    spec = config.task_spec
    params = backbone.init_xavier(config.backbone_config(train.dim))
    optimizer = AdamW(params.tensors(), weight_decay=config.weight_decay)
    bank = make_task_bank(val, spec, config.val_tasks, config.seed)
    rng = np.random.default_rng([config.seed, 0])
    tracker = _BestTracker(config.patience)
    rows = []
    iteration = 0
    for epoch in tqdm(range(1, config.epochs + 1), disable=not verbose,
                      desc='protonet'):
        epoch_lr = cyclic_lr(iteration, config)
        losses = []
        for _ in range(config.episodes_per_epoch):
            task = episodes.sample_task(train, spec, rng)
            params.zero_grads()
            loss, _ = episode_loss(params, task)
            ad.backward(loss)
            optimizer.step(cyclic_lr(iteration, config))
            losses.append(float(loss.data))
            iteration += 1
        val_acc = evaluate_bank(params, bank)
        rows.append([epoch, float(np.mean(losses)), val_acc, epoch_lr])
        logger.info('epoch %d: loss %.6f val_acc %.4f lr %.3g', epoch,
                    rows[-1][1], val_acc, epoch_lr)
        tracker.update(epoch, val_acc, params)
        if tracker.should_stop(epoch):
            logger.info('no improvement for %d epochs, stopping at epoch %d',
                        config.patience, epoch)
            break
    log = pd.DataFrame(rows, columns=LOG_COLUMNS)
    return tracker.params, log


def protonet_score(params, support, query_features):
    """
    Bonafide log-odds from support prototypes without any parameter update.

    Parameters
    ----------
    params : ParameterSet
        Trained backbone.

    support : Task
        Two-way support set, class 0 bonafide and class 1 spoof.

    query_features : numpy.ndarray
        Rows to score, shape [q x input_dim].

    Returns
    -------
    scores : numpy.ndarray
        ``log p(bonafide | x) - log p(spoof | x)`` per row.

    """
    labels = np.asarray(support.support_y)
    missing = [c for c in (0, 1) if not (labels == c).any()]
    if missing:
        raise ValueError('support set has no {} records'.format(
            episodes.BINARY_LABELS[missing[0]]))
    if set(np.unique(labels)) != {0, 1}:
        raise ValueError('support set must be two-way')
    protos = compute_prototypes(backbone.embed(params, support.support_x),
                                labels)
    lp = proto_log_probs(backbone.embed(params, query_features), protos).data
    return lp[:, 0] - lp[:, 1]
