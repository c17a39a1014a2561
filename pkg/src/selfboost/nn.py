"""A small reverse-mode neural toolkit for a fixed conv/GRU/dense architecture.

Every op takes an optional :class:`Tape`. With a tape, the op appends a
closure that pushes the output gradient back into its inputs; calling
``tape.backward(loss)`` replays the closures in reverse. Without a tape the op
is a plain forward pass. All arrays are float64; a batch axis leads
everywhere (conv/GRU inputs are [batch, time, channels]).
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import GraphNotScalar, ShapeMismatch


class Node:
    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g


class Parameter(Node):
    __slots__ = ("name",)

    def __init__(self, name, value):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True)
        self.name = name

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Tape:
    def __init__(self):
        self._ops = []

    def push(self, fn):
        self._ops.append(fn)

    def __len__(self):
        return len(self._ops)

    def backward(self, loss):
        if loss.value.size != 1:
            raise GraphNotScalar(f"loss has shape {loss.value.shape}; expected a scalar")
        loss.grad = np.ones_like(loss.value)
        for fn in reversed(self._ops):
            fn()
        self._ops.clear()


def as_node(x):
    return x if isinstance(x, Node) else Node(x)


def _out(value, tape, *inputs):
    return Node(value, requires_grad=tape is not None and any(n.requires_grad for n in inputs))


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# Layers


@dataclass
class Conv1dLayer:
    kernels: Parameter  # [num_filters, kernel_width, in_channels]
    biases: Parameter  # [num_filters]

    @classmethod
    def init(cls, rng, in_channels, num_filters, kernel_width, name="conv"):
        w = glorot_uniform(
            rng,
            (num_filters, kernel_width, in_channels),
            kernel_width * in_channels,
            kernel_width * num_filters,
        )
        return cls(Parameter(f"{name}.kernels", w), Parameter(f"{name}.biases", np.zeros(num_filters)))

    @property
    def kernel_width(self):
        return self.kernels.value.shape[1]

    def parameters(self):
        return [self.kernels, self.biases]


@dataclass
class GruLayer:
    W_z: Parameter
    W_r: Parameter
    W: Parameter
    U_z: Parameter
    U_r: Parameter
    U: Parameter
    b_z: Parameter
    b_r: Parameter
    b_h: Parameter

    @classmethod
    def init(cls, rng, input_size, hidden_size, name="gru"):
        def w(tag):
            return Parameter(
                f"{name}.{tag}",
                glorot_uniform(rng, (hidden_size, input_size), input_size, hidden_size),
            )

        def u(tag):
            return Parameter(
                f"{name}.{tag}",
                glorot_uniform(rng, (hidden_size, hidden_size), hidden_size, hidden_size),
            )

        def b(tag):
            return Parameter(f"{name}.{tag}", np.zeros(hidden_size))

        return cls(w("W_z"), w("W_r"), w("W"), u("U_z"), u("U_r"), u("U"), b("b_z"), b("b_r"), b("b_h"))

    @property
    def hidden_size(self):
        return self.U.value.shape[0]

    @property
    def input_size(self):
        return self.W.value.shape[1]

    def parameters(self):
        return [self.W_z, self.W_r, self.W, self.U_z, self.U_r, self.U, self.b_z, self.b_r, self.b_h]


@dataclass
class DenseLayer:
    weights: Parameter  # [out, in]
    bias: Parameter  # [out]

    @classmethod
    def init(cls, rng, in_features, out_features, name="dense"):
        w = glorot_uniform(rng, (out_features, in_features), in_features, out_features)
        return cls(Parameter(f"{name}.weights", w), Parameter(f"{name}.bias", np.zeros(out_features)))

    def parameters(self):
        return [self.weights, self.bias]


# ---------------------------------------------------------------------------
# Ops


def _batched(x, ndim):
    """Add a leading batch axis to an unbatched input; report whether we did."""
    if x.value.ndim == ndim - 1:
        return Node(x.value[None], x.requires_grad), True
    if x.value.ndim != ndim:
        raise ShapeMismatch(f"expected {ndim - 1}-D or {ndim}-D input, got shape {x.value.shape}")
    return x, False


def conv1d(layer, x, tape=None):
    """Valid cross-correlation, stride 1, followed by ReLU.

    ``x`` is [length, in_channels] or [batch, length, in_channels].
    """
    x = as_node(x)
    xb, squeezed = _batched(x, 3)
    w = layer.kernels.value
    F, K, C = w.shape
    if xb.value.shape[2] != C:
        raise ShapeMismatch(f"input has {xb.value.shape[2]} channels, kernels expect {C}")
    if xb.value.shape[1] < K:
        raise ShapeMismatch(f"input length {xb.value.shape[1]} < kernel width {K}")
    pre = kernels.conv1d_forward(xb.value, w, layer.biases.value)
    value = np.maximum(pre, 0.0)
    out = _out(value[0] if squeezed else value, tape, x, layer.kernels, layer.biases)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            g = out.grad[None] if squeezed else out.grad
            g = g * (pre > 0.0)
            dx, dw, db = kernels.conv1d_backward(xb.value, w, g)
            layer.kernels.accumulate(dw)
            layer.biases.accumulate(db)
            x.accumulate(dx[0] if squeezed else dx)

        tape.push(backward)
    return out


def maxpool1d(x, pool_width, tape=None):
    """Non-overlapping max pooling along time; the trailing remainder is dropped.

    Ties send the gradient to the first position of the window.
    """
    x = as_node(x)
    xb, squeezed = _batched(x, 3)
    B, L, C = xb.value.shape
    if pool_width < 1 or L < pool_width:
        raise ShapeMismatch(f"cannot pool length {L} with width {pool_width}")
    Lo = L // pool_width
    win = xb.value[:, : Lo * pool_width, :].reshape(B, Lo, pool_width, C)
    arg = np.argmax(win, axis=2)  # first occurrence on ties
    value = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0, :]
    out = _out(value[0] if squeezed else value, tape, x)
    if tape is not None:
        def backward():
            if out.grad is None or not x.requires_grad:
                return
            g = out.grad[None] if squeezed else out.grad
            dwin = np.zeros((B, Lo, pool_width, C))
            np.put_along_axis(dwin, arg[:, :, None, :], g[:, :, None, :], axis=2)
            dx = np.zeros((B, L, C))
            dx[:, : Lo * pool_width, :] = dwin.reshape(B, Lo * pool_width, C)
            x.accumulate(dx[0] if squeezed else dx)

        tape.push(backward)
    return out


def _gru_params(layer):
    return tuple(p.value for p in layer.parameters())


def gru_sequence(layer, x, h0=None, tape=None):
    """Run the GRU over time and return every hidden state.

    ``x`` is [time, input] or [batch, time, input]; ``h0`` defaults to zeros.
    The update gate weights the candidate: ``h = (1 - z) * h_prev + z * cand``.
    """
    x = as_node(x)
    xb, squeezed = _batched(x, 3)
    B, T, I = xb.value.shape
    H = layer.hidden_size
    if I != layer.input_size:
        raise ShapeMismatch(f"GRU expects {layer.input_size} inputs, got {I}")
    if T < 1:
        raise ShapeMismatch("GRU needs at least one time step")
    h0 = as_node(np.zeros(H) if h0 is None else h0)
    h0b = h0.value[None] if h0.value.ndim == 1 else h0.value
    if h0b.shape[-1] != H:
        raise ShapeMismatch(f"initial state has size {h0b.shape[-1]}, expected {H}")
    h0b = np.broadcast_to(h0b, (B, H))
    hseq, cache = kernels.gru_forward(xb.value, h0b, _gru_params(layer))
    out = _out(hseq[0] if squeezed else hseq, tape, x, h0, *layer.parameters())
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            g = out.grad[None] if squeezed else out.grad
            dx, dh0, grads = kernels.gru_backward(cache, g)
            for p, gp in zip(layer.parameters(), grads):
                p.accumulate(gp)
            x.accumulate(dx[0] if squeezed else dx)
            if h0.requires_grad:
                h0.accumulate(dh0.sum(axis=0) if h0.value.ndim == 1 else dh0)

        tape.push(backward)
    return out


def gru_step(layer, x_t, h_prev):
    """One GRU update for a single input vector; returns the new state."""
    x_t = np.asarray(x_t, dtype=np.float64)
    return gru_sequence(layer, x_t[None, :], h_prev).value[0]


def last_step(x, tape=None):
    """[batch, time, features] -> [batch, features] at the final time step."""
    x = as_node(x)
    out = _out(x.value[:, -1, :], tape, x)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(x.value)
            g[:, -1, :] = out.grad
            x.accumulate(g)

        tape.push(backward)
    return out


def dense(layer, x, tape=None):
    """Affine map ``W x + b`` over the last axis."""
    x = as_node(x)
    W = layer.weights.value
    if x.value.shape[-1] != W.shape[1]:
        raise ShapeMismatch(f"dense expects {W.shape[1]} inputs, got {x.value.shape[-1]}")
    out = _out(x.value @ W.T + layer.bias.value, tape, x, layer.weights, layer.bias)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            g = out.grad
            g2 = g.reshape(-1, g.shape[-1])
            x2 = x.value.reshape(-1, x.value.shape[-1])
            layer.weights.accumulate(g2.T @ x2)
            layer.bias.accumulate(g2.sum(axis=0))
            x.accumulate(g @ W)

        tape.push(backward)
    return out


def relu(x, tape=None):
    x = as_node(x)
    mask = x.value > 0.0
    # np.maximum keeps NaN, so a diverged layer still reaches the loss check
    out = _out(np.maximum(x.value, 0.0), tape, x)
    if tape is not None:
        def backward():
            if out.grad is not None:
                x.accumulate(out.grad * mask)

        tape.push(backward)
    return out


def flatten(x, tape=None):
    """[batch, ...] -> [batch, prod(...)]."""
    x = as_node(x)
    shape = x.value.shape
    out = _out(x.value.reshape(shape[0], -1), tape, x)
    if tape is not None:
        def backward():
            if out.grad is not None:
                x.accumulate(out.grad.reshape(shape))

        tape.push(backward)
    return out


def concat(views, axis=-1, tape=None):
    """Concatenate along the feature axis; backward splits by recorded offsets."""
    views = [as_node(v) for v in views]
    if not views:
        raise ShapeMismatch("nothing to concatenate")
    ref = views[0].value.shape
    ax = axis % len(ref)
    for v in views[1:]:
        s = v.value.shape
        if len(s) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(s, ref)) if i != ax):
            raise ShapeMismatch(f"cannot concatenate shapes {ref} and {s} on axis {axis}")
    sizes = [v.value.shape[ax] for v in views]
    offsets = np.cumsum([0] + sizes)
    out = _out(np.concatenate([v.value for v in views], axis=ax), tape, *views)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            for v, lo, hi in zip(views, offsets[:-1], offsets[1:]):
                idx = [slice(None)] * out.grad.ndim
                idx[ax] = slice(int(lo), int(hi))
                v.accumulate(out.grad[tuple(idx)])

        tape.push(backward)
    return out


def mse(prediction, target, tape=None):
    """Mean of squared differences over all elements, as a scalar node."""
    prediction = as_node(prediction)
    target = np.asarray(target.value if isinstance(target, Node) else target, dtype=np.float64)
    if prediction.value.shape != target.shape:
        raise ShapeMismatch(f"prediction {prediction.value.shape} vs target {target.shape}")
    diff = prediction.value - target
    out = _out(np.array(np.mean(diff * diff)), tape, prediction)
    if tape is not None:
        def backward():
            if out.grad is not None:
                prediction.accumulate(out.grad * 2.0 * diff / diff.size)

        tape.push(backward)
    return out


def weighted_mean(scalars, weights, tape=None):
    """(1/N) * sum_i weights[i] * scalars[i]."""
    scalars = [as_node(s) for s in scalars]
    if len(scalars) != len(weights):
        raise ShapeMismatch(f"{len(scalars)} terms but {len(weights)} weights")
    n = len(scalars)
    total = 0.0
    for s, w in zip(scalars, weights):
        total += float(w) * float(s.value)
    out = _out(np.array(total / n), tape, *scalars)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            for s, w in zip(scalars, weights):
                s.accumulate(out.grad * (float(w) / n))

        tape.push(backward)
    return out


# ---------------------------------------------------------------------------
# Optimisation


def global_grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def clip_grad_norm(params, max_norm):
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    norm = global_grad_norm(params)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def hyperparameters(self):
        return {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
        }


def adam_step(state, params, grads=None):
    """Apply one bias-corrected Adam update in place.

    ``grads`` defaults to each parameter's ``.grad``. Moments are keyed by
    parameter name.
    """
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]
    if len(grads) != len(params):
        raise ShapeMismatch(f"{len(params)} parameters but {len(grads)} gradients")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g in zip(params, grads):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.value.shape:
            raise ShapeMismatch(f"gradient {g.shape} vs parameter {p.name} {p.value.shape}")
        m = state.first_moment.get(p.name)
        v = state.second_moment.get(p.name)
        if m is None:
            m = np.zeros_like(p.value)
            v = np.zeros_like(p.value)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.first_moment[p.name] = m
        state.second_moment[p.name] = v
        p.value = p.value - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return state
