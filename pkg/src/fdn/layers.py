"""Stateful layers: parameter containers composed from the autodiff ops.

Layers hold parameter Tensors (requires_grad=True) and, for batch norm,
running statistics as plain arrays. Train/eval behaviour is selected by the
``training`` argument threaded through the forward calls rather than stored
on the layer.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Conv1d:
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0):
        if kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(np.zeros((out_channels, in_channels, kernel_size)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def init(self, rng: np.random.Generator):
        fan_in = self.in_channels * self.kernel_size
        bound = np.sqrt(1.0 / fan_in)
        self.weight.data[...] = rng.uniform(-bound, bound, self.weight.shape)
        self.bias.data[...] = 0.0

    def named_parameters(self, prefix: str = ""):
        yield prefix + "weight", self.weight
        yield prefix + "bias", self.bias

    def named_buffers(self, prefix: str = ""):
        return iter(())


class Linear:
    def __init__(self, in_features: int, out_features: int):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(np.zeros((out_features, in_features)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)

    def init(self, rng: np.random.Generator):
        bound = np.sqrt(1.0 / self.in_features)
        self.weight.data[...] = rng.uniform(-bound, bound, self.weight.shape)
        self.bias.data[...] = 0.0

    def named_parameters(self, prefix: str = ""):
        yield prefix + "weight", self.weight
        yield prefix + "bias", self.bias

    def named_buffers(self, prefix: str = ""):
        return iter(())


class BatchNorm1d:
    """Per-channel normalization over (C, T) or (N, C, T) inputs.

    Train mode normalizes with batch statistics and updates the running
    estimates with an exponential moving average (unbiased variance, the
    usual convention); eval mode reads the running estimates only.
    """

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(num_features), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features), requires_grad=True)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        if training:
            out, mean, var = ad.batchnorm_train(x, self.gamma, self.beta, eps=self.eps)
            channels = x.data.shape[0] if x.data.ndim == 2 else x.data.shape[1]
            m = x.data.size // channels
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (var * m / (m - 1) - self.running_var)
            return out
        return ad.batchnorm_eval(x, self.gamma, self.beta, self.running_mean,
                                 self.running_var, eps=self.eps)

    def init(self, rng: np.random.Generator):
        self.gamma.data[...] = 1.0
        self.beta.data[...] = 0.0
        self.running_mean[...] = 0.0
        self.running_var[...] = 1.0

    def named_parameters(self, prefix: str = ""):
        yield prefix + "gamma", self.gamma
        yield prefix + "beta", self.beta

    def named_buffers(self, prefix: str = ""):
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var


class Gru:
    """Single-layer unidirectional GRU; returns the final hidden state.

    Gate convention (z update, r reset, n candidate), with the reset gate
    applied to the hidden-to-candidate product after its bias:

        z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
        r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
        n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
        h' = (1 - z) * n + z * h
    """

    _GATES = ("z", "r", "n")

    def __init__(self, input_size: int, hidden_size: int):
        self.input_size = input_size
        self.hidden_size = hidden_size
        for gate in self._GATES:
            setattr(self, f"w_i{gate}", Tensor(np.zeros((hidden_size, input_size)), requires_grad=True))
            setattr(self, f"w_h{gate}", Tensor(np.zeros((hidden_size, hidden_size)), requires_grad=True))
            setattr(self, f"b_i{gate}", Tensor(np.zeros(hidden_size), requires_grad=True))
            setattr(self, f"b_h{gate}", Tensor(np.zeros(hidden_size), requires_grad=True))
        self._ones = Tensor(np.ones(hidden_size))

    def __call__(self, seq: Tensor) -> Tensor:
        """Run the recurrence over a (T, input_size) sequence from a zero state."""
        if seq.data.ndim != 2 or seq.data.shape[1] != self.input_size:
            raise ValueError(f"gru expects (T, {self.input_size}) input, got shape {seq.data.shape}")
        h = Tensor(np.zeros(self.hidden_size))
        for t in range(seq.data.shape[0]):
            x_t = ad.row(seq, t)
            z = ad.sigmoid(ad.add(ad.linear(x_t, self.w_iz, self.b_iz),
                                  ad.linear(h, self.w_hz, self.b_hz)))
            r = ad.sigmoid(ad.add(ad.linear(x_t, self.w_ir, self.b_ir),
                                  ad.linear(h, self.w_hr, self.b_hr)))
            n = ad.tanh(ad.add(ad.linear(x_t, self.w_in, self.b_in),
                               ad.mul(r, ad.linear(h, self.w_hn, self.b_hn))))
            h = ad.add(ad.mul(ad.sub(self._ones, z), n), ad.mul(z, h))
        return h

    def init(self, rng: np.random.Generator):
        bound = np.sqrt(1.0 / self.hidden_size)
        for gate in self._GATES:
            getattr(self, f"w_i{gate}").data[...] = rng.uniform(-bound, bound, (self.hidden_size, self.input_size))
            getattr(self, f"w_h{gate}").data[...] = rng.uniform(-bound, bound, (self.hidden_size, self.hidden_size))
            getattr(self, f"b_i{gate}").data[...] = 0.0
            getattr(self, f"b_h{gate}").data[...] = 0.0

    def named_parameters(self, prefix: str = ""):
        for gate in self._GATES:
            for name in (f"w_i{gate}", f"w_h{gate}", f"b_i{gate}", f"b_h{gate}"):
                yield prefix + name, getattr(self, name)

    def named_buffers(self, prefix: str = ""):
        return iter(())
