"""ProtoMAML: a prototype-initialized linear head adapted with inner-loop
SGD, and first-order meta-updates of the shared backbone."""
from dataclasses import dataclass
import logging
import math

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import autodiff as ad
from . import backbone
from . import episodes
from .general import chunks
from .optim import AdamW, cyclic_lr, sgd_step
from .protonet import (LOG_COLUMNS, ProtoTrainConfig, _BestTracker,
                       _accuracy, _check_dims, compute_prototypes,
                       make_task_bank)

logger = logging.getLogger(__name__)


@dataclass
class LinearHead:
    """Output layer with one row of ``W`` [N x d] and one entry of ``b`` [N]
    per task class."""
    W: ad.Tensor
    b: ad.Tensor

    def tensors(self):
        return [self.W, self.b]


@dataclass
class ProtoMamlConfig(ProtoTrainConfig):
    """
    ProtoMAML recipe.

    Extends ``ProtoTrainConfig`` with the inner rate, the inner step counts
    used in training, validation and evaluation, and the number of tasks
    whose gradients are averaged into one outer update.
    ``val_inner_steps`` defaults to ``train_inner_steps``.

    """
    inner_rate: float = 0.1
    train_inner_steps: int = 1
    adapt_inner_steps: int = 25
    tasks_per_update: int = 4
    val_inner_steps: int = None

    def __post_init__(self):
        super().__post_init__()
        if self.inner_rate <= 0:
            raise ValueError('inner_rate must be positive')
        if self.train_inner_steps < 0 or self.adapt_inner_steps < 0:
            raise ValueError('inner step counts must be >= 0')
        if self.tasks_per_update < 1:
            raise ValueError('tasks_per_update must be >= 1')
        if self.val_inner_steps is None:
            self.val_inner_steps = self.train_inner_steps
        if self.val_inner_steps < 0:
            raise ValueError('val_inner_steps must be >= 0')

    @property
    def iterations_per_epoch(self):
        return math.ceil(self.episodes_per_epoch / self.tasks_per_update)


def init_head_from_prototypes(protos):
    """
    Linear head equivalent to the prototype distance softmax.

    Row ``i`` is ``W[i] = 2 v_i`` and ``b[i] = -||v_i||^2``. The result stays
    connected to whatever graph produced the prototypes.

    """
    v = protos.vectors
    n, d = v.shape
    norms = ad.sq_euclidean(v, ad.Tensor(np.zeros((1, d))))
    return LinearHead(2.0 * v, -ad.reshape(norms, (n,)))


def head_log_probs(params, head, batch):
    """log_softmax(embed(params, batch) W^T + b), shape [q x N]."""
    emb = backbone.embed(params, batch)
    return ad.log_softmax(ad.affine(emb, ad.transpose(head.W), head.b))


def _prototype_head(params, support):
    protos = compute_prototypes(backbone.embed(params, support.support_x),
                                support.support_y, support.classes)
    return init_head_from_prototypes(protos)


def inner_adapt(params, support, steps, inner_rate):
    """
    Adapt a private copy of the backbone and a prototype head to a support
    set.

    The head is built once from the support prototypes; both it and the
    cloned backbone then take ``steps`` full-batch SGD steps on the support
    NLL. ``params`` is never modified.

    Parameters
    ----------
    params : ParameterSet
        Starting backbone.

    support : Task
        Support set (only ``support_x``, ``support_y`` and ``classes`` are
        used).

    steps : int
        Number of SGD steps, >= 0.

    inner_rate : float
        SGD step size.

    Returns
    -------
    adapted : ParameterSet
        Updated copy of the backbone, with no gradients.

    head : LinearHead
        Updated head, made of fresh leaf tensors.

    trace : list of float
        Support loss before each step.

    """
    if steps < 0:
        raise ValueError('steps must be >= 0')
    adapted = backbone.clone_params(params).requires_grad_()
    init = _prototype_head(adapted, support)
    head = LinearHead(ad.Tensor(init.W.data, requires_grad=True),
                      ad.Tensor(init.b.data, requires_grad=True))
    tensors = adapted.tensors() + head.tensors()
    trace = []
    for _ in range(steps):
        ad.zero_grads(tensors)
        loss = ad.nll_loss(head_log_probs(adapted, head, support.support_x),
                           support.support_y)
        ad.backward(loss)
        trace.append(float(loss.data))
        sgd_step(tensors, inner_rate)
    for t in tensors:
        t.grad = None
    return adapted, head, trace


def meta_gradient(params, tasks, config):
    """
    Add the first-order meta-gradient of ``tasks`` into ``params`` grads.

    For each task the query loss at the adapted parameters is
    back-propagated, and its gradient is applied to the original parameters
    without differentiating through the inner updates. The gradient that
    reaches the adapted head is also routed back through the head's
    prototype initialization into the backbone. Per-task contributions are
    averaged.

    Returns
    -------
    mean_loss : float
        Mean query loss over ``tasks``.

    """
    assert len(tasks) > 0
    n = len(tasks)
    losses = []
    for task in tasks:
        init = _prototype_head(params, task)
        adapted, head, _ = inner_adapt(params, task, config.train_inner_steps,
                                       config.inner_rate)
        ad.zero_grads(adapted.tensors() + head.tensors())
        loss = ad.nll_loss(head_log_probs(adapted, head, task.query_x),
                           task.query_y)
        ad.backward(loss)
        losses.append(float(loss.data))
        for p, q in zip(params.tensors(), adapted.tensors()):
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            p.grad += q.grad / n
        surrogate = (ad.sum_all(init.W * ad.Tensor(head.W.grad / n))
                     + ad.sum_all(init.b * ad.Tensor(head.b.grad / n)))
        ad.backward(surrogate)
    return float(np.mean(losses))


def outer_step(params, tasks, config, optimizer=None, lr=None):
    """
    One meta-update from a group of tasks.

    Parameters
    ----------
    params : ParameterSet
        Shared backbone, updated in place.

    tasks : list of Task
        Tasks whose meta-gradients are averaged.

    config : ProtoMamlConfig
        Inner-loop settings.

    optimizer : AdamW
        Outer optimizer over ``params``. If None, plain SGD is used.

    lr : float
        Outer rate; defaults to ``config.max_lr``.

    Returns
    -------
    params : ParameterSet
        The same object, updated.

    mean_loss : float
        Mean query loss over ``tasks`` before the update.

    """
    if not tasks:
        raise ValueError('outer_step needs at least one task')
    if lr is None:
        lr = config.max_lr
    params.zero_grads()
    mean_loss = meta_gradient(params, tasks, config)
    if all(not np.any(t.grad) for t in params.tensors()):
        logger.debug('all meta-gradients are zero, skipping outer step')
        return params, mean_loss
    if optimizer is None:
        sgd_step(params.tensors(), lr)
    else:
        optimizer.step(lr)
    return params, mean_loss


def adapted_accuracy(params, task, steps, inner_rate):
    """Query accuracy after adapting to the task's support set."""
    adapted, head, _ = inner_adapt(params, task, steps, inner_rate)
    return _accuracy(head_log_probs(adapted, head, task.query_x),
                     task.query_y)


def train_protomaml(train, val, config, verbose=False):
    """
    Episodic ProtoMAML training.

    Each epoch samples ``episodes_per_epoch`` tasks and takes one outer step
    per group of ``tasks_per_update`` tasks. Validation adapts on each bank
    task's support with ``val_inner_steps`` steps and measures query
    accuracy. Returns the best-validation parameters and a per-epoch log as
    ``train_protonet`` does.

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
                      desc='protomaml'):
        epoch_lr = cyclic_lr(iteration, config)
        tasks = [episodes.sample_task(train, spec, rng)
                 for _ in range(config.episodes_per_epoch)]
        losses = []
        for group in chunks(tasks, config.tasks_per_update):
            _, loss = outer_step(params, group, config, optimizer,
                                 cyclic_lr(iteration, config))
            losses += [loss] * len(group)
            iteration += 1
        val_acc = float(np.mean([
            adapted_accuracy(params, task, config.val_inner_steps,
                             config.inner_rate) for task in bank]))
        rows.append([epoch, float(np.mean(losses)), val_acc, epoch_lr])
        logger.info('epoch %d: loss %.6f val_acc %.4f lr %.3g', epoch,
                    rows[-1][1], val_acc, epoch_lr)
        tracker.update(epoch, val_acc, params)
        if tracker.should_stop(epoch):
            logger.info('no improvement for %d epochs, stopping at epoch %d',
                        config.patience, epoch)
            break
    return tracker.params, pd.DataFrame(rows, columns=LOG_COLUMNS)


def protomaml_adapt_and_score(params, support, query_features, steps=25,
                              inner_rate=0.1):
    """
    Bonafide log-odds after adapting to a two-way support set.

    Parameters
    ----------
    params : ParameterSet
        Trained backbone; left untouched.

    support : Task
        Two-way support set, class 0 bonafide and class 1 spoof.

    query_features : numpy.ndarray
        Rows to score.

    steps : int
        Inner SGD steps on the support.

    inner_rate : float
        Inner SGD step size.

    Returns
    -------
    scores : numpy.ndarray
        ``log p(bonafide | x) - log p(spoof | x)`` under the adapted model.

    """
    labels = np.asarray(support.support_y)
    if set(np.unique(labels)) != {0, 1}:
        raise ValueError('support set must contain bonafide (0) and spoof (1) '
                         'records only')
    adapted, head, _ = inner_adapt(params, support, steps, inner_rate)
    lp = head_log_probs(adapted, head, query_features).data
    return lp[:, 0] - lp[:, 1]
