"""Supervised two-class baseline: the backbone plus a bonafide/spoof head
trained with NLL, scored zero-shot on new domains."""
from dataclasses import dataclass
import logging

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import autodiff as ad
from . import backbone
from .general import chunks
from .metrics import eer_from_scores
from .optim import AdamW
from .protonet import _BestTracker, _check_dims

logger = logging.getLogger(__name__)

LOG_COLUMNS = ['epoch', 'mean_loss', 'val_eer', 'lr']


@dataclass
class BaselineConfig:
    """Mini-batch AdamW training with early stopping on validation EER."""
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-6
    weight_decay: float = 0.0
    patience: int = 15
    hidden_dims: tuple = (256, 128)
    output_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError('epochs and batch_size must be >= 1')
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError('lr and weight_decay must be >= 0')
        if self.patience is not None and self.patience < 0:
            raise ValueError('patience must be >= 0')

    def backbone_config(self, input_dim):
        return backbone.BackboneConfig(input_dim=input_dim,
                                       hidden_dims=self.hidden_dims,
                                       output_dim=self.output_dim,
                                       seed=self.seed, head_classes=2)


def baseline_log_probs(params, features):
    return ad.log_softmax(backbone.head_logits(params, features))


def baseline_score(params, features):
    """Bonafide log-odds ``log p(bonafide | x) - log p(spoof | x)``."""
    lp = baseline_log_probs(params, features).data
    return lp[:, 0] - lp[:, 1]


def dataset_eer(params, dataset):
    targets = dataset.binary_targets()
    scores = baseline_score(params, dataset.features)
    return eer_from_scores(scores[targets == 0], scores[targets == 1]).eer


def train_supervised_baseline(train, val, config, verbose=False):
    """
    Train the backbone and a two-class head on bonafide vs spoof labels.

    Parameters
    ----------
    train : EpisodeDataset
        Training records; all attack classes count as spoof.

    val : EpisodeDataset
        Validation records, scored by EER after every epoch.

    config : BaselineConfig
        Recipe. Training stops once ``patience`` epochs in a row fail to
        lower the validation EER.

    verbose : bool
        Show a progress bar over epochs.

    Returns
    -------
    params : ParameterSet
        Parameters of the epoch with the lowest validation EER.

    log : pandas.DataFrame
        Columns epoch, mean_loss, val_eer and lr.

    """
    _check_dims(train, val)
    for name, ds in (('training', train), ('validation', val)):
        targets = ds.binary_targets()
        if targets.min() == targets.max():
            raise ValueError('{} data must contain bonafide and spoof '
                             'records'.format(name))
    params = backbone.init_xavier(config.backbone_config(train.dim))
    optimizer = AdamW(params.tensors(), weight_decay=config.weight_decay)
    rng = np.random.default_rng([config.seed, 0])
    targets = train.binary_targets()
    tracker = _BestTracker(config.patience, higher_is_better=False)
    rows = []
    for epoch in tqdm(range(1, config.epochs + 1), disable=not verbose,
                      desc='baseline'):
        order = rng.permutation(len(train))
        losses = []
        for batch in chunks(order, config.batch_size):
            params.zero_grads()
            loss = ad.nll_loss(
                baseline_log_probs(params, train.features[batch]),
                targets[batch])
            ad.backward(loss)
            optimizer.step(config.lr)
            losses.append(float(loss.data))
        val_eer = dataset_eer(params, val)
        rows.append([epoch, float(np.mean(losses)), val_eer, config.lr])
        logger.info('epoch %d: loss %.6f val_eer %.4f', epoch, rows[-1][1],
                    val_eer)
        tracker.update(epoch, val_eer, params)
        if tracker.should_stop(epoch):
            logger.info('no improvement for %d epochs, stopping at epoch %d',
                        config.patience, epoch)
            break
    return tracker.params, pd.DataFrame(rows, columns=LOG_COLUMNS)
