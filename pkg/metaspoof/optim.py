"""Optimizers and the cyclic learning-rate schedule shared by the trainers."""
import numpy as np

LR_MODES = ('triangular', 'triangular2', 'exp_range')


def cyclic_lr(iteration, config):
    """
    Cyclic learning rate for a given optimizer step.

    Parameters
    ----------
    iteration : int
        Zero-based optimizer step index.

    config : object
        Anything with ``base_lr``, ``max_lr``, ``step_size_epochs``,
        ``iterations_per_epoch``, ``lr_mode`` and ``lr_gamma`` attributes,
        e.g. ``ProtoTrainConfig``.

    Returns
    -------
    lr : float
        The rate rises linearly from ``base_lr`` to ``max_lr`` over
        ``step_size_epochs`` epochs of steps, falls back over the same span
        and repeats. ``triangular2`` halves the amplitude every cycle and
        ``exp_range`` scales it by ``lr_gamma ** iteration``.

    """
    step_size = config.step_size_epochs * config.iterations_per_epoch
    assert step_size > 0
    cycle = np.floor(1 + iteration / (2 * step_size))
    x = abs(iteration / step_size - 2 * cycle + 1)
    if config.lr_mode == 'triangular':
        scale = 1.0
    elif config.lr_mode == 'triangular2':
        scale = 1 / (2.0 ** (cycle - 1))
    elif config.lr_mode == 'exp_range':
        scale = config.lr_gamma ** iteration
    else:
        raise ValueError('unknown lr_mode {!r}; expected one of {}'.format(
            config.lr_mode, ', '.join(LR_MODES)))
    return float(config.base_lr
                 + (config.max_lr - config.base_lr) * max(0.0, 1 - x) * scale)


def sgd_step(tensors, lr):
    """In-place plain gradient descent on every tensor that has a grad."""
    for t in tensors:
        if t.grad is not None:
            t.data -= lr * t.grad


class AdamW:
    """
    Adam with decoupled weight decay.

    Parameters
    ----------
    tensors : list of Tensor
        Parameters updated in place by ``step``.

    weight_decay : float
        Decay applied as ``theta *= 1 - lr * weight_decay`` before the
        adaptive update.

    """

    def __init__(self, tensors, weight_decay=0.01, betas=(0.9, 0.999),
                 eps=1e-8):
        self.tensors = list(tensors)
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.tensors]
        self.v = [np.zeros_like(p.data) for p in self.tensors]

    def step(self, lr):
        self.t += 1
        bc1 = 1 - self.beta1 ** self.t
        bc2 = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.tensors, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data *= 1 - lr * self.weight_decay
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grads(self):
        for p in self.tensors:
            p.grad = np.zeros_like(p.data)
