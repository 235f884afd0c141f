"""
This module contains the differentiable computation substrate of the engine.

A :class:`Tensor` wraps a float64 numpy array and records the operation that produced it.
Calling :meth:`Tensor.backward` on a scalar walks the recorded tape in reverse and accumulates
gradients into every :class:`ParamTensor` that took part in the computation.

On top of the tape the module provides dense and recurrent layers, activations, the Adam
optimizer with decoupled weight decay, a plateau scheduler, early stopping and a central
difference gradient checker.
"""

import logging

import numpy as np
from scipy.special import logsumexp

from .errors import NonFiniteError, ShapeError


__all__ = ['Tensor', 'ParamTensor', 'as_tensor', 'concat', 'take_rows', 'scatter_rows', 'spmm',
           'row_norms', 'relu', 'tanh', 'sigmoid', 'softplus', 'softmax', 'log_softmax', 'exp', 'absolute', 'cos',
           'dense_forward', 'dense_backward', 'dense', 'rnn_cell', 'gru_cell',
           'Module', 'Dense', 'MLP', 'RNNCell', 'GRUCell',
           'OptimizerState', 'adam_step', 'PlateauScheduler', 'EarlyStopping', 'grad_check', 'uniform_init']

logger = logging.getLogger(__name__)

DTYPE = np.float64


def _unbroadcast(grad, shape):
    """
    Sums ``grad`` over the axes numpy broadcasting added to reach its shape from ``shape``
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)

    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)

    return grad


def _topological_order(root):
    order = []
    seen = set()
    stack = [(root, False)]

    while stack:
        node, processed = stack.pop()

        if processed:
            order.append(node)
            continue

        if id(node) in seen:
            continue

        seen.add(id(node))
        stack.append((node, True))

        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    return order


class Tensor:
    """
    A float64 array that remembers how it was computed.
    """
    __array_priority__ = 100

    def __init__(self, values, parents=(), backward_fn=None, requires_grad=None):
        """
        :param values: Array data, converted to float64
        :param parents: Tensors this one was computed from
        :type parents: tuple of Tensor
        :param backward_fn: Maps the gradient w.r.t. this tensor to a tuple of gradients w.r.t. parents
        :param requires_grad: Defaults to True when any parent requires gradients
        """
        self.values = np.asarray(values, dtype=DTYPE)
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self._parents)

        self.requires_grad = requires_grad
        self.grads = None

    def __repr__(self):
        return '<Tensor: shape={}>'.format(self.shape)

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.values)

    def numpy(self):
        """
        :return: A copy of the values detached from the tape
        :rtype: numpy.ndarray
        """
        return self.values.copy()

    def _accumulate(self, grad):
        if self.grads is None:
            self.grads = np.array(grad, dtype=DTYPE)
        else:
            self.grads = self.grads + grad

    def backward(self, upstream=None):
        """
        Backpropagates through the tape that produced this tensor.

        :param upstream: Gradient w.r.t. this tensor. Defaults to 1 for scalars
        """
        if upstream is None:
            if self.values.size != 1:
                raise ShapeError('backward() without upstream gradient needs a scalar, got shape {}'
                                 .format(self.shape))
            upstream = np.ones_like(self.values)

        order = _topological_order(self)

        for node in order:
            if node._backward_fn is not None:
                node.grads = None

        self._accumulate(np.asarray(upstream, dtype=DTYPE))

        for node in reversed(order):
            if node._backward_fn is None or node.grads is None:
                continue

            parent_grads = node._backward_fn(node.grads)

            for parent, grad in zip(node._parents, parent_grads):
                if parent.requires_grad and grad is not None:
                    parent._accumulate(grad)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None):
        count = self.values.size if axis is None else self.values.shape[axis]
        return reduce_sum(self, axis) * (1.0 / count)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


class ParamTensor(Tensor):
    """
    A trainable leaf tensor.

    ``name`` is the dotted path of the parameter inside its module tree. The shape is fixed
    at construction: assigning values of another shape raises :class:`ShapeError`.
    """

    def __init__(self, values, name):
        self._values = None
        super().__init__(values, requires_grad=True)
        self.name = name
        self.grads = np.zeros_like(self._values)

    def __repr__(self):
        return '<ParamTensor: {} {}>'.format(self.name, self.shape)

    @property
    def values(self):
        return self._values

    @values.setter
    def values(self, value):
        value = np.asarray(value, dtype=DTYPE)

        if self._values is not None and value.shape != self._values.shape:
            raise ShapeError('parameter {} has shape {}, cannot assign {}'
                             .format(getattr(self, 'name', '?'), self._values.shape, value.shape))

        self._values = value.copy()

    def zero_grad(self):
        self.grads = np.zeros_like(self._values)


def as_tensor(value):
    """
    :return: ``value`` itself when it is a Tensor, otherwise a constant Tensor
    :rtype: Tensor
    """
    if isinstance(value, Tensor):
        return value

    return Tensor(value, requires_grad=False)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.values + b.values, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(a.values - b.values, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return Tensor(a.values * b.values, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (_unbroadcast(g / b.values, a.shape),
                _unbroadcast(-g * a.values / (b.values ** 2), b.shape))

    return Tensor(a.values / b.values, (a, b), backward)


def power(a, exponent):
    a = as_tensor(a)

    def backward(g):
        return g * exponent * a.values ** (exponent - 1),

    return Tensor(a.values ** exponent, (a,), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError('cannot multiply {} by {}'.format(a.shape, b.shape))

    def backward(g):
        return g @ b.values.T, a.values.T @ g

    return Tensor(a.values @ b.values, (a, b), backward)


def transpose(a):
    def backward(g):
        return g.T,

    return Tensor(a.values.T, (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)

    def backward(g):
        return g.reshape(a.shape),

    return Tensor(a.values.reshape(shape), (a,), backward)


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy(),

    return Tensor(np.sum(a.values, axis=axis, keepdims=keepdims), (a,), backward)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.values)

    def backward(g):
        return g * out,

    return Tensor(out, (a,), backward)


def absolute(a):
    a = as_tensor(a)

    def backward(g):
        return g * np.sign(a.values),

    return Tensor(np.abs(a.values), (a,), backward)


def cos(a):
    a = as_tensor(a)

    def backward(g):
        return -g * np.sin(a.values),

    return Tensor(np.cos(a.values), (a,), backward)


def relu(a):
    a = as_tensor(a)

    def backward(g):
        return g * (a.values > 0),

    return Tensor(np.maximum(a.values, 0.0), (a,), backward)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.values)

    def backward(g):
        return g * (1.0 - out ** 2),

    return Tensor(out, (a,), backward)


def _stable_sigmoid(x):
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out


def sigmoid(a):
    a = as_tensor(a)
    out = _stable_sigmoid(np.atleast_1d(a.values)).reshape(a.shape)

    def backward(g):
        return g * out * (1.0 - out),

    return Tensor(out, (a,), backward)


def softplus(a):
    a = as_tensor(a)
    x = a.values
    out = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)

    def backward(g):
        return g * _stable_sigmoid(np.atleast_1d(x)).reshape(x.shape),

    return Tensor(out, (a,), backward)


def softmax(a):
    """
    Softmax over the last axis
    """
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return out * (g - np.sum(g * out, axis=-1, keepdims=True)),

    return Tensor(out, (a,), backward)


def log_softmax(a):
    """
    Log of the softmax over the last axis. Finite for any finite input.
    """
    a = as_tensor(a)
    out = a.values - logsumexp(a.values, axis=-1, keepdims=True)

    def backward(g):
        return g - np.exp(out) * np.sum(g, axis=-1, keepdims=True),

    return Tensor(out, (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor(np.concatenate([t.values for t in tensors], axis=axis), tensors, backward)


def take_rows(a, index):
    """
    Gathers rows ``index`` of a 2-d tensor. Repeated indices are allowed.
    """
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(a.values)
        np.add.at(full, index, g)
        return full,

    return Tensor(a.values[index], (a,), backward)


def scatter_rows(base, index, rows):
    """
    Returns ``base`` with rows ``index`` replaced by ``rows``. Indices must be unique.
    """
    base, rows = as_tensor(base), as_tensor(rows)
    index = np.asarray(index, dtype=np.int64)
    out = base.values.copy()
    out[index] = rows.values

    def backward(g):
        g_base = g.copy()
        g_base[index] = 0.0
        return g_base, g[index]

    return Tensor(out, (base, rows), backward)


def spmm(matrix, a):
    """
    Multiplies a constant scipy sparse matrix by a dense tensor
    """
    a = as_tensor(a)

    def backward(g):
        return np.asarray(matrix.T @ g),

    return Tensor(np.asarray(matrix @ a.values), (a,), backward)


def row_norms(a):
    """
    Euclidean norm of every row. The gradient at a zero row is taken as zero.
    """
    a = as_tensor(a)
    norms = np.sqrt(np.sum(a.values ** 2, axis=1))

    def backward(g):
        safe = np.where(norms > 0, norms, 1.0)
        return (g / safe)[:, None] * a.values * (norms > 0)[:, None],

    return Tensor(norms, (a,), backward)


def dense_forward(x, weight, bias):
    """
    :param x: Inputs, shape (batch, in)
    :param weight: Kernel, shape (in, out)
    :param bias: Bias, shape (out,)
    :rtype: numpy.ndarray
    """
    return x @ weight + bias


def dense_backward(x, weight, upstream):
    """
    :return: Gradients w.r.t. the input, the kernel and the bias
    :rtype: tuple of numpy.ndarray
    """
    return upstream @ weight.T, x.T @ upstream, upstream.sum(axis=0)


def dense(x, weight, bias):
    x = as_tensor(x)

    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError('{} expects inputs with {} columns, got shape {}'
                         .format(getattr(weight, 'name', 'dense'), weight.shape[0], x.shape))

    def backward(g):
        return dense_backward(x.values, weight.values, g)

    return Tensor(dense_forward(x.values, weight.values, bias.values), (x, weight, bias), backward)


def uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """
    Owns named parameters and child modules. Parameter order is insertion order.
    """

    def __init__(self, name):
        self.name = name
        self._parameters = {}
        self._modules = {}

    def add_parameter(self, key, values):
        param = ParamTensor(values, '{}.{}'.format(self.name, key))
        self._parameters[key] = param
        setattr(self, key, param)
        return param

    def add_module(self, key, module):
        self._modules[key] = module
        setattr(self, key, module)
        return module

    def parameters(self):
        """
        :rtype: list of ParamTensor
        """
        params = list(self._parameters.values())

        for module in self._modules.values():
            params.extend(module.parameters())

        return params

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()


class Dense(Module):

    def __init__(self, name, in_dim, out_dim, rng, bias=True):
        super().__init__(name)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.add_parameter('weight', uniform_init(rng, in_dim, (in_dim, out_dim)))

        if bias:
            self.add_parameter('bias', np.zeros(out_dim))
        else:
            self.bias = Tensor(np.zeros(out_dim), requires_grad=False)

    def __call__(self, x):
        return dense(x, self.weight, self.bias)


class MLP(Module):
    """
    Two dense layers with a ReLU in between: ``W2 · relu(W1 · x)``
    """

    def __init__(self, name, in_dim, hidden_dim, out_dim, rng):
        super().__init__(name)
        self.add_module('hidden', Dense(name + '.hidden', in_dim, hidden_dim, rng))
        self.add_module('output', Dense(name + '.output', hidden_dim, out_dim, rng))

    def __call__(self, x):
        return self.output(relu(self.hidden(x)))


def rnn_cell(cell, x, h):
    """
    Elman cell: ``tanh(x · W_x + h · W_h + b)``
    """
    return tanh(dense(x, cell.input_weight, cell.bias) + as_tensor(h) @ cell.hidden_weight)


def gru_cell(cell, x, h):
    """
    Gated recurrent cell.

    With update gate ``z`` the new state is ``(1 - z) * h + z * n``: a zero gate carries the state
    through, a unit gate replaces it with the candidate ``n``.
    """
    h = as_tensor(h)
    r = sigmoid(dense(x, cell.input_r, cell.bias_r) + h @ cell.hidden_r)
    z = sigmoid(dense(x, cell.input_z, cell.bias_z) + h @ cell.hidden_z)
    n = tanh(dense(x, cell.input_n, cell.bias_n) + r * dense(h, cell.hidden_n, cell.bias_hn))
    return (1.0 - z) * h + z * n


class RNNCell(Module):

    def __init__(self, name, input_dim, hidden_dim, rng):
        super().__init__(name)
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.add_parameter('input_weight', uniform_init(rng, input_dim, (input_dim, hidden_dim)))
        self.add_parameter('hidden_weight', uniform_init(rng, hidden_dim, (hidden_dim, hidden_dim)))
        self.add_parameter('bias', np.zeros(hidden_dim))

    def __call__(self, x, h):
        return rnn_cell(self, x, h)


class GRUCell(Module):

    def __init__(self, name, input_dim, hidden_dim, rng):
        super().__init__(name)
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim

        for gate in ('r', 'z', 'n'):
            self.add_parameter('input_' + gate, uniform_init(rng, input_dim, (input_dim, hidden_dim)))
            self.add_parameter('hidden_' + gate, uniform_init(rng, hidden_dim, (hidden_dim, hidden_dim)))
            self.add_parameter('bias_' + gate, np.zeros(hidden_dim))

        self.add_parameter('bias_hn', np.zeros(hidden_dim))

    def __call__(self, x, h):
        return gru_cell(self, x, h)


class OptimizerState:
    """
    Adam moments and the schedule of the learning rate
    """

    def __init__(self, lr=0.01, weight_decay=1e-5, lr_decay=0.9, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.lr_decay = lr_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moments = {}
        self.second_moments = {}

    def __repr__(self):
        return '<OptimizerState: step={} lr={}>'.format(self.step_count, self.lr)

    def decay_lr(self):
        self.lr *= self.lr_decay
        logger.info('learning rate decayed to %.6g', self.lr)


def adam_step(params, state):
    """
    Applies one Adam update with decoupled weight decay and zeroes the gradients.

    :type params: list of ParamTensor
    :type state: OptimizerState
    :exception NonFiniteError: a gradient or an updated value is not finite
    """
    for param in params:
        if not np.all(np.isfinite(param.grads)):
            raise NonFiniteError(param.name, 'non-finite gradient')

    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t

    for param in params:
        g = param.grads
        m = state.first_moments.get(param.name)
        v = state.second_moments.get(param.name)

        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)

        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.first_moments[param.name] = m
        state.second_moments[param.name] = v

        update = state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        values = param.values - update - state.lr * state.weight_decay * param.values

        if not np.all(np.isfinite(values)):
            raise NonFiniteError(param.name, 'non-finite parameter after update')

        param.values = values
        param.zero_grad()


class PlateauScheduler:
    """
    Decays the learning rate when the monitored score has not improved for ``patience`` evaluations
    """

    def __init__(self, state, patience=3):
        self.state = state
        self.patience = patience
        self.best = None
        self.stale = 0

    def observe(self, score):
        if self.best is None or score > self.best:
            self.best = score
            self.stale = 0
            return

        self.stale += 1

        if self.stale >= self.patience:
            self.state.decay_lr()
            self.stale = 0


class EarlyStopping:

    def __init__(self, patience=5):
        self.patience = patience
        self.best = None
        self.stale = 0

    def observe(self, score):
        """
        :return: True when ``score`` is a new best
        :rtype: bool
        """
        if self.best is None or score > self.best:
            self.best = score
            self.stale = 0
            return True

        self.stale += 1
        return False

    @property
    def should_stop(self):
        return self.stale >= self.patience


def grad_check(f, params, eps=1e-5, max_coords=None, rng=None, floor=1e-4):
    """
    Compares the tape gradient of ``f`` against central differences.

    :param f: Callable without arguments returning a scalar Tensor built from ``params``
    :param params: Parameters to perturb
    :type params: list of ParamTensor
    :param eps: Perturbation
    :param max_coords: Number of coordinates sampled per parameter, all when None
    :param rng: numpy Generator for sampling coordinates
    :param floor: Lower bound of the error denominator
    :return: Max over sampled coordinates of ``|a - n| / max(|a|, |n|, floor)``
    :rtype: float
    """
    for param in params:
        param.zero_grad()

    f().backward()
    analytic = [param.grads.copy() for param in params]

    if rng is None:
        rng = np.random.default_rng(0)

    max_error = 0.0

    for param, grad in zip(params, analytic):
        flat = param.values.reshape(-1)
        coords = np.arange(flat.size)

        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)

        for coord in coords:
            original = flat[coord]
            flat[coord] = original + eps
            param.values = flat.reshape(param.shape)
            plus = f().item()
            flat[coord] = original - eps
            param.values = flat.reshape(param.shape)
            minus = f().item()
            flat[coord] = original
            param.values = flat.reshape(param.shape)

            numeric = (plus - minus) / (2.0 * eps)
            a = grad.reshape(-1)[coord]
            error = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            max_error = max(max_error, error)

    for param in params:
        param.zero_grad()

    return max_error
