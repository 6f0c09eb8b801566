"""The embedding network: a ReLU MLP mapping input features to the metric
space, plus its parameters and checkpoint file."""
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

MAGIC = b'MSPF'
VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file is malformed or does not match the expected layout."""


@dataclass
class BackboneConfig:
    """
    Layer layout of the backbone.

    Parameters
    ----------
    input_dim : int
        Width of the input feature vectors.

    hidden_dims : tuple of int
        Widths of the hidden ReLU layers, possibly empty.

    output_dim : int
        Width of the embedding.

    seed : int
        Seed for ``init_xavier``.

    head_classes : int
        If positive, a supervised linear head with this many outputs is
        appended (used by the two-class baseline).

    """
    input_dim: int = 32
    hidden_dims: tuple = (256, 128)
    output_dim: int = 64
    seed: int = 0
    head_classes: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        dims = [self.input_dim, self.output_dim] + list(self.hidden_dims)
        if any(d < 1 for d in dims):
            raise ValueError('all layer widths must be >= 1, got {}'.format(
                self.dims))
        if self.head_classes < 0:
            raise ValueError('head_classes must be >= 0')
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError('seed must fit in an unsigned 64-bit integer')

    @property
    def dims(self):
        return [self.input_dim] + list(self.hidden_dims) + [self.output_dim]


class ParameterSet:
    """
    Ordered, named parameter tensors of a backbone.

    Layer ``i`` owns ``layer{i}.weight`` [in x out] and ``layer{i}.bias``
    [out]. A supervised head, if present, owns ``head.weight``
    [classes x out] and ``head.bias`` [classes].

    """

    def __init__(self, config, tensors):
        self.config = config
        self._tensors = OrderedDict(tensors)

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def tensors(self):
        return list(self._tensors.values())

    def items(self):
        return list(self._tensors.items())

    def layers(self):
        """List of (weight, bias) pairs of the embedding layers."""
        n = len(self.config.dims) - 1
        return [(self['layer{}.weight'.format(i)],
                 self['layer{}.bias'.format(i)]) for i in range(n)]

    def count(self):
        return int(sum(t.size for t in self.tensors()))

    def zero_grads(self):
        ad.zero_grads(self.tensors())

    def requires_grad_(self, flag=True):
        for t in self.tensors():
            t.requires_grad = flag
        return self

    def equals(self, other):
        """True if both sets have the same names and bit-identical values."""
        if self.names() != other.names():
            return False
        return all(np.array_equal(a.data, b.data)
                   for a, b in zip(self.tensors(), other.tensors()))


def parameter_count(config):
    """Closed-form number of trainable values for ``config``."""
    dims = config.dims
    n = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if config.head_classes:
        n += config.head_classes * config.output_dim + config.head_classes
    return n


def _xavier(rng, fan_in, fan_out, shape):
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape)


def init_xavier(config):
    """
    Draw fresh parameters for ``config``.

    Weights are Normal(0, 2 / (fan_in + fan_out)) and biases are zero. The
    draw depends only on ``config`` so equal configs give bit-identical sets.

    """
    rng = np.random.default_rng(config.seed)
    dims = config.dims
    tensors = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        w = _xavier(rng, fan_in, fan_out, (fan_in, fan_out))
        tensors.append(('layer{}.weight'.format(i),
                        ad.Tensor(w, requires_grad=True)))
        tensors.append(('layer{}.bias'.format(i),
                        ad.Tensor(np.zeros(fan_out), requires_grad=True)))
    if config.head_classes:
        c, d = config.head_classes, config.output_dim
        tensors.append(('head.weight',
                        ad.Tensor(_xavier(rng, d, c, (c, d)),
                                  requires_grad=True)))
        tensors.append(('head.bias',
                        ad.Tensor(np.zeros(c), requires_grad=True)))
    return ParameterSet(config, tensors)


def embed(params, batch):
    """
    Forward pass of the backbone.

    Parameters
    ----------
    params : ParameterSet
        Backbone parameters.

    batch : Tensor or numpy.ndarray
        Input of shape [m x input_dim].

    Returns
    -------
    out : Tensor
        Embeddings of shape [m x output_dim]. The last layer is affine only,
        so entries may be negative.

    """
    x = batch if isinstance(batch, ad.Tensor) else ad.Tensor(batch)
    if x.data.ndim != 2 or x.shape[1] != params.config.input_dim:
        raise ad.ShapeError(
            'embed: expected a batch of width {}, got shape {}'.format(
                params.config.input_dim, x.shape))
    layers = params.layers()
    for i, (w, b) in enumerate(layers):
        x = ad.affine(x, w, b)
        if i < len(layers) - 1:
            x = ad.relu(x)
    return x


def head_logits(params, batch):
    """Embeddings followed by the supervised head, shape [m x classes]."""
    if 'head.weight' not in params:
        raise ValueError('parameter set has no supervised head')
    emb = embed(params, batch)
    return ad.affine(emb, ad.transpose(params['head.weight']),
                     params['head.bias'])


def clone_params(params):
    """Deep copy with fresh leaf tensors and no gradients."""
    return ParameterSet(
        params.config,
        [(name, ad.Tensor(t.data, requires_grad=t.requires_grad))
         for name, t in params.items()])


def save_checkpoint(params, path):
    """
    Write ``params`` to ``path``.

    Layout, all little-endian: the 4 bytes ``MSPF``; u32 version; u32 number
    of layer widths n; n u32 widths; u32 head class count; u64 init seed;
    then every tensor as raw f64 in declaration order.

    """
    config = params.config
    dims = config.dims
    header = np.array([VERSION, len(dims)] + dims + [config.head_classes],
                      dtype='<u4')
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(header.tobytes())
        f.write(np.array([config.seed], dtype='<u8').tobytes())
        for t in params.tensors():
            f.write(np.ascontiguousarray(t.data, dtype='<f8').tobytes())


def load_checkpoint(path):
    """Read a checkpoint written by ``save_checkpoint``."""
    with open(path, 'rb') as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise CheckpointError('{}: not a checkpoint (bad magic)'.format(path))
    pos = 4

    def _take(dtype, count):
        nonlocal pos
        size = np.dtype(dtype).itemsize * count
        if pos + size > len(raw):
            raise CheckpointError('{}: truncated file'.format(path))
        out = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
        pos += size
        return out

    version, n_dims = (int(v) for v in _take('<u4', 2))
    if version != VERSION:
        raise CheckpointError('{}: unsupported version {}'.format(
            path, version))
    if n_dims < 2:
        raise CheckpointError('{}: bad layer spec'.format(path))
    dims = [int(v) for v in _take('<u4', n_dims)]
    head_classes = int(_take('<u4', 1)[0])
    seed = int(_take('<u8', 1)[0])
    try:
        config = BackboneConfig(input_dim=dims[0], hidden_dims=dims[1:-1],
                                output_dim=dims[-1], seed=seed,
                                head_classes=head_classes)
    except ValueError as e:
        raise CheckpointError('{}: {}'.format(path, e))
    expected = parameter_count(config) * 8
    if len(raw) - pos != expected:
        raise CheckpointError(
            '{}: expected {} bytes of parameters, found {}'.format(
                path, expected, len(raw) - pos))
    template = init_xavier(config)
    tensors = []
    for name, t in template.items():
        values = _take('<f8', t.size).reshape(t.shape)
        tensors.append((name, ad.Tensor(values, requires_grad=True)))
    return ParameterSet(config, tensors)
