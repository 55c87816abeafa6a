"""Parameter containers for the network building blocks.

Each layer owns named ``Tensor`` leaves and registers them in a shared
ordered dict so models can enumerate parameters deterministically.
Weight matrices and biases are tracked separately: weight decay applies
to matrices only.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def glorot_uniform(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class ParamRegistry:
    """Ordered name -> Tensor map with a weight/bias distinction."""

    def __init__(self):
        self.params = {}
        self._weights = set()

    def register(self, name, data, weight):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        if weight:
            self._weights.add(name)
        return t

    def tensors(self):
        return list(self.params.values())

    def weight_tensors(self):
        return [t for n, t in self.params.items() if n in self._weights]

    def named(self):
        return list(self.params.items())

    def count(self):
        return sum(t.data.size for t in self.params.values())


class Linear:
    def __init__(self, reg, rng, name, d_in, d_out):
        self.w = reg.register(f"{name}.w", glorot_uniform(rng, d_in, d_out), weight=True)
        self.b = reg.register(f"{name}.b", np.zeros(d_out), weight=False)

    def __call__(self, x):
        return ad.linear(x, self.w, self.b)


class LstmDirection:
    """One LSTM direction; forget-gate bias starts at 1."""

    def __init__(self, reg, rng, name, d_in, hidden):
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0
        self.params = ad.LstmParams(
            reg.register(f"{name}.wx", glorot_uniform(rng, d_in, 4 * hidden), weight=True),
            reg.register(f"{name}.wh", glorot_uniform(rng, hidden, 4 * hidden,
                                                      shape=(hidden, 4 * hidden)), weight=True),
            reg.register(f"{name}.b", b, weight=False),
        )


class BiLstm:
    def __init__(self, reg, rng, name, d_in, hidden, bidirectional=True):
        self.bidirectional = bidirectional
        self.fwd = LstmDirection(reg, rng, f"{name}.f", d_in, hidden)
        self.bwd = LstmDirection(reg, rng, f"{name}.r", d_in, hidden) if bidirectional else None
        self.out_dim = hidden * (2 if bidirectional else 1)

    def __call__(self, x, valid=None):
        return ad.lstm_forward(x, self.fwd.params, bidirectional=self.bidirectional,
                               params_back=self.bwd.params if self.bwd else None, valid=valid)


class ConvBank:
    """Parallel odd-width same-length convolutions, concatenated along features."""

    def __init__(self, reg, rng, name, d_in, widths, feature_maps):
        self.widths = tuple(widths)
        self.kernels = []
        for w in self.widths:
            k = reg.register(f"{name}.w{w}.kernel",
                             glorot_uniform(rng, w * d_in, feature_maps,
                                            shape=(w * d_in, feature_maps)), weight=True)
            b = reg.register(f"{name}.w{w}.bias", np.zeros(feature_maps), weight=False)
            self.kernels.append((w, k, b))
        self.out_dim = feature_maps * len(self.widths)

    def __call__(self, x):
        return ad.conv1d_bank(x, self.kernels)


class Classifier:
    """Two-layer feedforward head with ReLU, two output classes."""

    def __init__(self, reg, rng, name, d_in, hidden):
        self.fc1 = Linear(reg, rng, f"{name}.fc1", d_in, hidden)
        self.fc2 = Linear(reg, rng, f"{name}.fc2", hidden, 2)

    def __call__(self, x, rate=0.0, rng=None, training=False):
        h = ad.relu(self.fc1(x))
        h = ad.dropout(h, rate, rng, training)
        return self.fc2(h)


class AdditiveAttention:
    """Position-wise scores v . tanh(W h + b), normalized over the sequence."""

    def __init__(self, reg, rng, name, d_in, hidden):
        self.proj = Linear(reg, rng, f"{name}.proj", d_in, hidden)
        self.v = reg.register(f"{name}.v", glorot_uniform(rng, hidden, 1, shape=(hidden, 1)),
                              weight=True)

    def scores(self, h):
        """Raw scores (..., L) over a (..., L, d) input."""
        s = ad.linear(ad.tanh(self.proj(h)), self.v)
        return ad.reshape(s, s.data.shape[:-1])
