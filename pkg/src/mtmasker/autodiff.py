"""Reverse-mode automatic differentiation on float64 numpy arrays.

A :class:`Tensor` wraps an ndarray and records, per operation, a closure
that routes the output gradient back to its parents.  ``backward()`` on a
scalar loss walks the graph in reverse topological order and populates
``grad`` on every ``requires_grad`` tensor reachable from the loss.

Everything runs in float64.  The engine implements exactly the ops the
models in this package need; it is not a general array library.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, EmptySequenceError, NumericError, ParameterError

_GUMBEL_EPS = 1e-10
_BCE_EPS = 1e-7
_NEG_BIG = 1e30


class Rng:
    """Seeded random stream (PCG64). Same seed + same call sequence = same output."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, seq, size=None, replace=True):
        return self._gen.choice(seq, size=size, replace=replace)

    def spawn(self, offset):
        """Derived stream: seed + offset (used for per-trial seeds)."""
        return Rng(self.seed + int(offset))


def _as_f64(data):
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """Dense float64 array participating in the gradient tape.

    Construct leaves with ``Tensor(data, requires_grad=True)``; interior
    nodes are created by the ops below.  A tape is confined to one thread.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = _as_f64(data)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def _accumulate_owned(self, g):
        """Accumulate a buffer the caller will not reuse (skips one copy)."""
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g

    def _ensure_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def backward(self, seed=None):
        """Backpropagate from this tensor. Default seed is all-ones (1.0 for scalars)."""
        if seed is None:
            seed = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(_as_f64(seed))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Convenience operators; full op set lives at module level.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------


def _give(tensor, buf, shared):
    """Route a gradient buffer to `tensor`; `shared` buffers must be copied."""
    if buf is shared:
        tensor._accumulate(buf)
    else:
        tensor._accumulate_owned(buf)


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _give(a, _unbroadcast(g, a.data.shape), g)
        if b.requires_grad:
            _give(b, _unbroadcast(g, b.data.shape), g)

    return Tensor(out_data, parents=(a, b), backward=bwd)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            _give(a, _unbroadcast(g, a.data.shape), g)
        if b.requires_grad:
            b._accumulate_owned(_unbroadcast(-g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate_owned(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate_owned(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate_owned(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate_owned(
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def exp(x):
    x = _wrap(x)
    out_data = np.exp(x.data)

    def bwd(g):
        if x.requires_grad:
            x._accumulate_owned(g * out_data)

    return Tensor(out_data, parents=(x,), backward=bwd)


def log(x):
    x = _wrap(x)
    out_data = np.log(x.data)

    def bwd(g):
        if x.requires_grad:
            x._accumulate_owned(g / x.data)

    return Tensor(out_data, parents=(x,), backward=bwd)


def tanh(x):
    x = _wrap(x)
    out_data = np.tanh(x.data)

    def bwd(g):
        if x.requires_grad:
            x._accumulate_owned(g * (1.0 - out_data * out_data))

    return Tensor(out_data, parents=(x,), backward=bwd)


def sigmoid(x):
    x = _wrap(x)
    e = np.exp(-np.abs(x.data))
    out_data = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bwd(g):
        if x.requires_grad:
            x._accumulate_owned(g * out_data * (1.0 - out_data))

    return Tensor(out_data, parents=(x,), backward=bwd)


def relu(x):
    x = _wrap(x)
    out_data = np.maximum(x.data, 0.0)

    def bwd(g):
        if x.requires_grad:
            x._accumulate_owned(g * (x.data > 0))

    return Tensor(out_data, parents=(x,), backward=bwd)


def absolute(x):
    x = _wrap(x)
    out_data = np.abs(x.data)

    def bwd(g):
        if x.requires_grad:
            x._accumulate_owned(g * np.sign(x.data))

    return Tensor(out_data, parents=(x,), backward=bwd)


def tsum(x, axis=None, keepdims=False):
    x = _wrap(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not x.requires_grad:
            return
        if axis is None:
            x._accumulate_owned(np.broadcast_to(g, x.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            x._accumulate_owned(np.broadcast_to(gg, x.data.shape).copy())

    return Tensor(out_data, parents=(x,), backward=bwd)


def tmean(x, axis=None, keepdims=False):
    x = _wrap(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    x = _wrap(x)
    out_data = x.data.reshape(shape)

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.data.shape))

    return Tensor(out_data, parents=(x,), backward=bwd)


def _is_basic_index(idx):
    """Basic (slice/int) indexing never selects a position twice, so the
    gradient scatter can use plain += instead of np.add.at."""
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice, type(Ellipsis), type(None)))
               for p in parts)


def getitem(x, idx):
    x = _wrap(x)
    out_data = x.data[idx]
    basic = _is_basic_index(idx)

    def bwd(g):
        if x.requires_grad:
            buf = x._ensure_grad()
            if basic:
                buf[idx] += g
            else:
                np.add.at(buf, idx, g)

    return Tensor(out_data, parents=(x,), backward=bwd)


def concat(tensors, axis=-1):
    tensors = [_wrap(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return Tensor(out_data, parents=tuple(tensors), backward=bwd)


def stack(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        slices = np.moveaxis(g, axis, 0)
        for t, gi in zip(tensors, slices):
            if t.requires_grad:
                t._accumulate(gi)

    return Tensor(out_data, parents=tuple(tensors), backward=bwd)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate_owned(g @ b.data.T)
        if b.requires_grad:
            b._accumulate_owned(a.data.T @ g)

    return Tensor(out_data, parents=(a, b), backward=bwd)


def linear(x, w, b=None):
    """Affine map over the last axis: x @ w + b for x of any leading shape."""
    x = _wrap(x)
    lead = x.data.shape[:-1]
    flat = reshape(x, (-1, x.data.shape[-1])) if x.ndim != 2 else x
    out = matmul(flat, w)
    if b is not None:
        out = add(out, b)
    if x.ndim != 2:
        out = reshape(out, lead + (w.data.shape[-1],))
    return out


# ---------------------------------------------------------------------------
# Softmax family
# ---------------------------------------------------------------------------


def log_softmax(x, axis=-1):
    x = _wrap(x)
    if not np.all(np.isfinite(x.data)):
        raise NumericError("log_softmax received non-finite input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def bwd(g):
        if x.requires_grad:
            x._accumulate_owned(g - np.exp(out_data) * g.sum(axis=axis, keepdims=True))

    return Tensor(out_data, parents=(x,), backward=bwd)


def softmax(x, axis=-1):
    x = _wrap(x)
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax received non-finite input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            x._accumulate_owned(out_data * (g - dot))

    return Tensor(out_data, parents=(x,), backward=bwd)


def gumbel_noise(rng, shape):
    """Gumbel(0,1) samples via inverse CDF, with guards inside both logs.

    ``rng=None`` is the deterministic test hook: noise is identically zero.
    """
    if rng is None:
        return np.zeros(shape)
    u = rng.uniform(size=shape)
    return -np.log(-np.log(u + _GUMBEL_EPS) + _GUMBEL_EPS)


def gumbel_softmax(logits, tau, rng, hard=False):
    """Sample a relaxed categorical along the last axis.

    Soft mode returns softmax((logits + g)/tau).  Hard mode returns the
    one-hot argmax of the soft sample in the forward value while gradients
    flow as if the soft sample had been returned (straight-through).
    """
    if tau <= 0:
        raise ParameterError(f"gumbel_softmax temperature must be positive, got {tau}")
    logits = _wrap(logits)
    noise = gumbel_noise(rng, logits.data.shape)
    soft = softmax(mul(add(logits, noise), 1.0 / tau), axis=-1)
    if not hard:
        return soft
    idx = soft.data.argmax(axis=-1)
    hard_data = np.zeros_like(soft.data)
    np.put_along_axis(hard_data, idx[..., None], 1.0, axis=-1)

    def bwd(g):
        soft._accumulate(g)

    return Tensor(hard_data, parents=(soft,), backward=bwd)


# ---------------------------------------------------------------------------
# Sequence ops
# ---------------------------------------------------------------------------


def max_over_time(x):
    """Per-feature max over the position axis: (..., L, F) -> (..., F).

    Gradient routes to the argmax position only; ties go to the lowest index.
    """
    x = _wrap(x)
    if x.ndim < 2 or x.data.shape[-2] == 0:
        raise EmptySequenceError(f"max_over_time needs a nonempty (..., L, F) input, got {x.shape}")
    idx = x.data.argmax(axis=-2)
    out_data = np.take_along_axis(x.data, idx[..., None, :], axis=-2).squeeze(-2)

    def bwd(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.put_along_axis(full, idx[..., None, :], g[..., None, :], axis=-2)
            x._accumulate_owned(full)

    return Tensor(out_data, parents=(x,), backward=bwd)


def conv1d(x, kernel, bias, width):
    """Same-length 1-D convolution over positions.

    x: (..., L, d); kernel: (width*d, F); bias: (F,).  Input is zero-padded
    by (width-1)/2 on both sides so the output is (..., L, F).
    """
    if width % 2 == 0:
        raise ParameterError(f"conv1d width must be odd, got {width}")
    x = _wrap(x)
    kernel = _wrap(kernel)
    bias = _wrap(bias)
    *lead, L, d = x.data.shape
    if kernel.data.shape[0] != width * d:
        raise DimensionError(
            f"conv1d kernel rows {kernel.data.shape[0]} != width*d = {width * d}")
    half = (width - 1) // 2
    pad_spec = [(0, 0)] * len(lead) + [(half, half), (0, 0)]
    xp = np.pad(x.data, pad_spec)
    # windows: (..., L, width, d) -> (..., L, width*d)
    win = np.stack([xp[..., k:k + L, :] for k in range(width)], axis=-2)
    cols = win.reshape(*lead, L, width * d)
    flat = cols.reshape(-1, width * d)
    out_data = (flat @ kernel.data + bias.data).reshape(*lead, L, -1)

    def bwd(g):
        gflat = g.reshape(-1, g.shape[-1])
        if kernel.requires_grad:
            kernel._accumulate(flat.T @ gflat)
        if bias.requires_grad:
            bias._accumulate(gflat.sum(axis=0))
        if x.requires_grad:
            gcols = (gflat @ kernel.data.T).reshape(*lead, L, width, d)
            gxp = np.zeros_like(xp)
            for k in range(width):
                gxp[..., k:k + L, :] += gcols[..., :, k, :]
            if half:
                x._accumulate(gxp[..., half:half + L, :])
            else:
                x._accumulate_owned(gxp)

    return Tensor(out_data, parents=(x, kernel, bias), backward=bwd)


def conv1d_bank(x, kernels):
    """Concatenate same-length convolutions of several widths along features.

    kernels: iterable of (width, kernel Tensor, bias Tensor).
    """
    outs = [conv1d(x, k, b, w) for w, k, b in kernels]
    return outs[0] if len(outs) == 1 else concat(outs, axis=-1)


def embedding_lookup(table, ids):
    """Gather rows of `table` (V, d) at integer `ids` (...,) -> (..., d)."""
    table = _wrap(table)
    ids = np.asarray(ids)
    out_data = table.data[ids]

    def bwd(g):
        if table.requires_grad:
            np.add.at(table._ensure_grad(), ids.ravel(),
                      g.reshape(-1, table.data.shape[1]))

    return Tensor(out_data, parents=(table,), backward=bwd)


def dropout(x, rate, rng, training):
    """Inverted dropout: zero with probability `rate`, scale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    x = _wrap(x)
    if not training or rate == 0.0:
        return x
    keep = (rng.uniform(size=x.data.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def cross_entropy(logits, label):
    """Negative log-likelihood of `label` under softmax(logits).

    logits: (C,) with int label, or (B, C) with (B,) labels; returns a
    scalar or (B,) tensor respectively.
    """
    logits = _wrap(logits)
    lab = np.asarray(label)
    C = logits.data.shape[-1]
    if np.any(lab < 0) or np.any(lab >= C):
        raise IndexError(f"label {label} out of range for {C} classes")
    ls = log_softmax(logits, axis=-1)
    if logits.ndim == 1:
        return mul(getitem(ls, int(lab)), -1.0)
    picked_data = np.take_along_axis(ls.data, lab[:, None], axis=1)[:, 0]

    def bwd(g):
        full = np.zeros_like(ls.data)
        np.put_along_axis(full, lab[:, None], g[:, None], axis=1)
        ls._accumulate(full)

    picked = Tensor(picked_data, parents=(ls,), backward=bwd)
    return mul(picked, -1.0)


def binary_cross_entropy(p, q):
    """Cross-entropy between Bernoulli(q) and Bernoulli(p): -(q ln p + (1-q) ln(1-p)).

    `q` may be a fractional prior. `p` is clipped to [1e-7, 1 - 1e-7] before
    the logs; inputs outside [0, 1] are rejected.
    """
    p = _wrap(p)
    qa = _as_f64(q)
    if np.any(p.data < 0) or np.any(p.data > 1):
        raise ParameterError("binary_cross_entropy: p outside [0, 1]")
    if np.any(qa < 0) or np.any(qa > 1):
        raise ParameterError("binary_cross_entropy: q outside [0, 1]")
    pc = np.clip(p.data, _BCE_EPS, 1.0 - _BCE_EPS)
    out_data = -(qa * np.log(pc) + (1.0 - qa) * np.log(1.0 - pc))

    def bwd(g):
        if p.requires_grad:
            p._accumulate_owned(g * (pc - qa) / (pc * (1.0 - pc)))

    return Tensor(out_data, parents=(p,), backward=bwd)


def masked_neg_inf(x, valid):
    """Push masked-out positions to -inf-like values before max pooling.

    x: (..., L, F); valid: (..., L) with 1 at real tokens, 0 at padding.
    """
    x = _wrap(x)
    offset = (np.asarray(valid, dtype=np.float64) - 1.0) * _NEG_BIG
    return add(x, offset[..., None])


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------


class LstmParams:
    """Weights for one LSTM direction; gate order is (input, forget, cell, output)."""

    def __init__(self, wx, wh, b):
        self.wx = wx  # (d, 4h)
        self.wh = wh  # (h, 4h)
        self.b = b    # (4h,)

    @property
    def hidden_size(self):
        return self.wh.data.shape[0]

    def tensors(self):
        return [self.wx, self.wh, self.b]


def _gate_update(params, pre_gates, h_prev, c_prev):
    h = params.hidden_size
    gates = add(pre_gates, matmul(h_prev, params.wh))
    i = sigmoid(getitem(gates, (slice(None), slice(0, h))))
    f = sigmoid(getitem(gates, (slice(None), slice(h, 2 * h))))
    g = tanh(getitem(gates, (slice(None), slice(2 * h, 3 * h))))
    o = sigmoid(getitem(gates, (slice(None), slice(3 * h, 4 * h))))
    c = add(mul(f, c_prev), mul(i, g))
    h_new = mul(o, tanh(c))
    return h_new, c


def lstm_step(params, x_t, h_prev, c_prev):
    """One LSTM cell update for a (B, d) input slice."""
    return _gate_update(params, add(linear(x_t, params.wx), params.b),
                        h_prev, c_prev)


def _lstm_direction(params, x, valid, reverse):
    B, L, _ = x.data.shape
    h = params.hidden_size
    h_t = zeros((B, h))
    c_t = zeros((B, h))
    # input projections for every step in one matrix product
    xw = add(linear(x, params.wx), params.b)
    order = range(L - 1, -1, -1) if reverse else range(L)
    outputs = [None] * L
    for t in order:
        pre = getitem(xw, (slice(None), t))
        h_new, c_new = _gate_update(params, pre, h_t, c_t)
        if valid is not None:
            v = valid[:, t:t + 1]
            h_t = add(mul(h_new, v), mul(h_t, 1.0 - v))
            c_t = add(mul(c_new, v), mul(c_t, 1.0 - v))
        else:
            h_t, c_t = h_new, c_new
        outputs[t] = h_t
    return stack(outputs, axis=1)


def lstm_forward(x, params, bidirectional=False, params_back=None, valid=None):
    """Run an LSTM over x: (B, L, d) or (L, d) -> (B, L, h) or (L, h).

    Bidirectional mode concatenates the forward pass with a pass over the
    reversed sequence, per position.  `valid` (B, L) freezes the state at
    padded steps so they contribute nothing.
    """
    x = _wrap(x)
    single = x.ndim == 2
    if single:
        x = reshape(x, (1,) + x.data.shape)
    if x.data.shape[1] == 0:
        raise EmptySequenceError("lstm_forward needs a nonempty sequence")
    if valid is not None:
        valid = np.asarray(valid, dtype=np.float64)
    fwd = _lstm_direction(params, x, valid, reverse=False)
    if bidirectional:
        if params_back is None:
            raise ParameterError("bidirectional lstm_forward needs params_back")
        bwd_out = _lstm_direction(params_back, x, valid, reverse=True)
        out = concat([fwd, bwd_out], axis=-1)
    else:
        out = fwd
    return reshape(out, out.data.shape[1:]) if single else out


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


class Adam:
    """Bias-corrected Adam. `decay` names the tensors that get weight decay."""

    def __init__(self, params, lr=0.001, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0, decay=()):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self._decay_ids = {id(p) for p in decay}
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise DimensionError(
                    f"grad shape {p.grad.shape} != param shape {p.data.shape}")
            g = p.grad
            if self.weight_decay and id(p) in self._decay_ids:
                g = g + self.weight_decay * p.data
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * (g * g)
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def clip_grad_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most `max_norm`.

    Returns the applied scale factor (1.0 when no clipping fired).
    """
    sq = 0.0
    for p in params:
        if p.grad is not None:
            sq += float((p.grad * p.grad).sum())
    norm = np.sqrt(sq)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for p in params:
        if p.grad is not None:
            p.grad *= scale
    return scale
