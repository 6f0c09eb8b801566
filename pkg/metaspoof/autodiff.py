"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its inputs and a closure that maps the upstream
gradient to one gradient per input. Nodes are numbered on creation, so
creation order is a valid topological order of the graph and ``backward``
simply walks the reachable nodes in reverse creation order.
"""
import itertools

import numpy as np
from scipy.special import logsumexp

_node_ids = itertools.count()


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """
    Dense float64 array that can take part in a differentiation graph.

    Parameters
    ----------
    data : array-like
        Values. Always copied and stored as a float64 numpy array.

    requires_grad : bool
        If True, ``backward`` populates ``grad`` for this tensor.

    """
    __slots__ = ('data', 'grad', 'requires_grad', '_prev', '_backward', '_op',
                 '_id')

    def __init__(self, data, requires_grad=False, _children=(), _op=''):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._prev = _children
        self._backward = None
        self._op = _op
        self._id = next(_node_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def is_leaf(self):
        return len(self._prev) == 0

    def numpy(self):
        """Return a copy of the values."""
        return self.data.copy()

    def backward(self):
        backward(self)

    def __add__(self, other):
        return elementwise(self, other, 'add')

    def __radd__(self, other):
        return elementwise(other, self, 'add')

    def __sub__(self, other):
        return elementwise(self, other, 'sub')

    def __rsub__(self, other):
        return elementwise(other, self, 'sub')

    def __mul__(self, other):
        return elementwise(self, other, 'mul')

    def __rmul__(self, other):
        return elementwise(other, self, 'mul')

    def __neg__(self):
        return elementwise(self, -1.0, 'mul')

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return 'Tensor(shape={}, op={!r}, requires_grad={})'.format(
            self.shape, self._op, self.requires_grad)


def _lift(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data, children, op, backward_fn):
    """Wrap an op output, recording the graph only if an input needs it."""
    needs_grad = any(c.requires_grad for c in children)
    if not needs_grad:
        return Tensor(data, _op=op)
    out = Tensor(data, requires_grad=True, _children=tuple(children), _op=op)
    out._backward = backward_fn
    return out


def matmul(a, b):
    """
    Matrix product of a [m x k] and b [k x n].

    Raises
    ------
    ShapeError
        If either operand is not 2-D or the inner dimensions differ.

    """
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul: cannot multiply {} by {}'.format(
            a.shape, b.shape))
    a_data, b_data = a.data, b.data

    def _backward(g):
        return g @ b_data.T, a_data.T @ g

    return _result(a_data @ b_data, (a, b), 'matmul', _backward)


def elementwise(a, b, kind):
    """
    Elementwise add, sub or mul.

    Both operands must have the same shape, except that either one may be a
    scalar (0-d), in which case it is applied to every element of the other.

    """
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError('{}: shapes {} and {} differ'.format(
            kind, a.shape, b.shape))
    a_data, b_data = a.data, b.data
    if kind == 'add':
        out = a_data + b_data
    elif kind == 'sub':
        out = a_data - b_data
    elif kind == 'mul':
        out = a_data * b_data
    else:
        raise ValueError('unknown elementwise kind: {}'.format(kind))

    def _reduce(g, like):
        # Gradient w.r.t. a broadcast scalar is the sum over its uses.
        if like.ndim == 0 and g.ndim != 0:
            return np.sum(g)
        return g

    def _backward(g):
        if kind == 'add':
            ga, gb = g, g
        elif kind == 'sub':
            ga, gb = g, -g
        else:
            ga, gb = g * b_data, g * a_data
        return _reduce(ga, a_data), _reduce(gb, b_data)

    return _result(out, (a, b), kind, _backward)


def add(a, b):
    return elementwise(a, b, 'add')


def sub(a, b):
    return elementwise(a, b, 'sub')


def mul(a, b):
    return elementwise(a, b, 'mul')


def relu(a):
    """max(0, x) elementwise. The subgradient at 0 is taken as 0."""
    a = _lift(a)
    mask = a.data > 0

    def _backward(g):
        return (g * mask,)

    return _result(np.where(mask, a.data, 0.0), (a,), 'relu', _backward)


def transpose(a):
    a = _lift(a)
    if a.data.ndim != 2:
        raise ShapeError('transpose: expected a 2-D tensor, got {}'.format(
            a.shape))

    def _backward(g):
        return (g.T,)

    return _result(a.data.T, (a,), 'transpose', _backward)


def reshape(a, shape):
    a = _lift(a)
    in_shape = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError('reshape: cannot reshape {} to {}'.format(
            in_shape, shape))

    def _backward(g):
        return (g.reshape(in_shape),)

    return _result(out, (a,), 'reshape', _backward)


def affine(x, w, b):
    """
    Affine map x @ w + b for x [m x k], w [k x n] and bias b [n].

    The bias is added to every row; this is the only broadcast other than
    scalar-by-tensor the engine supports.

    """
    x, w, b = _lift(x), _lift(w), _lift(b)
    if (x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]
            or b.shape != (w.shape[1],)):
        raise ShapeError('affine: incompatible shapes x={} w={} b={}'.format(
            x.shape, w.shape, b.shape))
    x_data, w_data = x.data, w.data

    def _backward(g):
        return g @ w_data.T, x_data.T @ g, g.sum(axis=0)

    return _result(x_data @ w_data + b.data, (x, w, b), 'affine', _backward)


def sum_all(a):
    """Sum of all entries, as a 0-d tensor."""
    a = _lift(a)
    shape = a.shape

    def _backward(g):
        return (np.full(shape, g),)

    return _result(np.sum(a.data), (a,), 'sum', _backward)


def sq_euclidean(a, b):
    """
    Pairwise squared Euclidean distances.

    Parameters
    ----------
    a : Tensor
        Tensor of shape [m x d].

    b : Tensor
        Tensor of shape [n x d].

    Returns
    -------
    out : Tensor
        Tensor of shape [m x n] with out[i, j] = sum_t (a[i, t] - b[j, t])**2.

    """
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError('sq_euclidean: trailing dimensions of {} and {} '
                         'differ'.format(a.shape, b.shape))
    diff = a.data[:, None, :] - b.data[None, :, :]

    def _backward(g):
        ga = 2.0 * np.einsum('ij,ijt->it', g, diff)
        gb = -2.0 * np.einsum('ij,ijt->jt', g, diff)
        return ga, gb

    return _result(np.sum(diff ** 2, axis=-1), (a, b), 'sq_euclidean',
                   _backward)


def segment_mean(a, labels, n_segments):
    """
    Mean of the rows of a [m x d] grouped by integer labels.

    Row i of the output is the mean of the rows of ``a`` with label i. Every
    label in 0..n_segments-1 must occur at least once.

    """
    a = _lift(a)
    labels = np.asarray(labels)
    if a.data.ndim != 2 or labels.shape != (a.shape[0],):
        raise ShapeError('segment_mean: {} rows but {} labels'.format(
            a.shape, labels.shape))
    members = [labels == i for i in range(n_segments)]
    counts = np.array([m.sum() for m in members])
    empty = np.flatnonzero(counts == 0)
    if len(empty) > 0:
        raise ValueError('segment_mean: class {} has no rows'.format(
            int(empty[0])))
    out = np.stack([a.data[m].mean(axis=0) for m in members])

    def _backward(g):
        return ((g / counts[:, None])[labels],)

    return _result(out, (a,), 'segment_mean', _backward)


def log_softmax(a):
    """
    Row-wise log-softmax of a [m x n] tensor, stabilised by max subtraction.

    Raises
    ------
    ValueError
        If any input is NaN.

    """
    a = _lift(a)
    if a.data.ndim != 2:
        raise ShapeError('log_softmax: expected a 2-D tensor, got {}'.format(
            a.shape))
    if np.isnan(a.data).any():
        raise ValueError('log_softmax: input contains NaN')
    out = a.data - logsumexp(a.data, axis=1, keepdims=True)
    probs = np.exp(out)

    def _backward(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return _result(out, (a,), 'log_softmax', _backward)


def nll_loss(log_probs, targets):
    """
    Mean negative log-likelihood of integer targets.

    Parameters
    ----------
    log_probs : Tensor
        Tensor of shape [m x n] holding log-probabilities.

    targets : array-like of int
        Class index per row, each in [0, n).

    Returns
    -------
    loss : Tensor
        0-d tensor, mean of -log_probs[i, targets[i]].

    """
    log_probs = _lift(log_probs)
    targets = np.asarray(targets)
    m, n = log_probs.shape
    if targets.shape != (m,):
        raise ShapeError('nll_loss: {} rows but {} targets'.format(
            log_probs.shape, targets.shape))
    if m and (targets.min() < 0 or targets.max() >= n):
        raise ValueError('nll_loss: targets must lie in [0, {})'.format(n))
    rows = np.arange(m)

    def _backward(g):
        grad = np.zeros((m, n))
        grad[rows, targets] = -g / m
        return (grad,)

    return _result(-np.mean(log_probs.data[rows, targets]), (log_probs,),
                   'nll_loss', _backward)


def backward(loss):
    """
    Back-propagate from a scalar loss.

    Gradients are added into the ``grad`` of every leaf tensor that requires
    them; call ``zero_grads`` between steps to start from zero.

    """
    if loss.data.ndim != 0:
        raise ValueError('backward: loss must be a scalar, got shape {}'.format(
            loss.shape))
    if not loss.requires_grad:
        raise ValueError('backward: loss does not depend on any tensor that '
                         'requires grad')
    nodes = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node._id in nodes:
            continue
        nodes[node._id] = node
        stack.extend(c for c in node._prev if c.requires_grad)

    upstream = {loss._id: np.ones(())}
    for node_id in sorted(nodes, reverse=True):
        node = nodes[node_id]
        g = upstream.pop(node_id, None)
        if g is None:
            continue
        if node.is_leaf():
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for child, child_grad in zip(node._prev, node._backward(g)):
            if not child.requires_grad:
                continue
            if child._id in upstream:
                upstream[child._id] = upstream[child._id] + child_grad
            else:
                upstream[child._id] = child_grad


def zero_grads(tensors):
    """Reset ``grad`` of every tensor to zeros."""
    for t in tensors:
        t.grad = np.zeros_like(t.data)


def grad_check(f, point, h=1e-5, n_coords=None, seed=0, skip_within=None):
    """
    Compare analytic gradients against central finite differences.

    Parameters
    ----------
    f : callable
        Maps a Tensor (or a list of Tensors, matching ``point``) to a 0-d
        Tensor.

    point : Tensor or list of Tensor
        Where to evaluate the gradient. Never modified.

    h : float
        Finite-difference step.

    n_coords : int
        If given and smaller than the number of coordinates, check this many
        coordinates sampled uniformly without replacement.

    seed : int
        Seed for coordinate sampling.

    skip_within : float
        Coordinates whose value lies within this distance of zero are not
        checked. Use it for functions with a kink at the origin such as
        ``relu``.

    Returns
    -------
    err : float
        max over checked coordinates of
        |analytic - numeric| / max(1, |analytic|).

    """
    assert h > 0
    single = isinstance(point, Tensor)
    points = [point] if single else list(point)
    values = [p.data.copy() for p in points]

    def _call(arrays, requires_grad=False):
        ts = [Tensor(v, requires_grad=requires_grad) for v in arrays]
        return ts, f(ts[0] if single else ts)

    leaves, loss = _call(values, requires_grad=True)
    backward(loss)
    analytic = [l.grad if l.grad is not None else np.zeros_like(l.data)
                for l in leaves]

    coords = [(i, idx) for i, v in enumerate(values)
              for idx in np.ndindex(v.shape)]
    if skip_within is not None:
        coords = [(i, idx) for i, idx in coords
                  if abs(values[i][idx]) >= skip_within]
    if n_coords is not None and len(coords) > n_coords:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[j] for j in sorted(pick)]

    worst = 0.0
    for i, idx in coords:
        shifted = [v.copy() for v in values]
        shifted[i][idx] = values[i][idx] + h
        f_plus = float(_call(shifted)[1].data)
        shifted[i][idx] = values[i][idx] - h
        f_minus = float(_call(shifted)[1].data)
        numeric = (f_plus - f_minus) / (2 * h)
        a = analytic[i][idx]
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
