"""FDN speaker-embedding network.

The building block rescales channels by attention weights computed from the
difference between the pooled beginning and ending windows of the feature
map (a squeeze/excitation-style bottleneck on that difference), then runs a
pre-activation residual conv pair and pools time by 3. The heavy variant
averages two such attention vectors, the second one computed from the output
of the block's first convolution.

Layer plan (light, full size), input raw waveform (1, T):

    Conv(k=3, s=3, 128) + BN + LeakyReLU   -> (128, T/3)
    2 x block(128 -> 128)                  -> (128, T/27)
    4 x block(128 -> 256, first projects)  -> (256, T/2187)
    GRU(1024) final state                  -> 1024
    FC embedding                           -> 1024
    FC classifier                          -> num_speakers
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import BatchNorm1d, Conv1d, Gru, Linear

LEAKY_SLOPE = 0.3

# Fraction of the feature length by which the ending window is shifted past
# the beginning window: a 0.5 s shift of a 3.19 s window on a 3.69 s crop.
DEFAULT_SHIFT_FRACTION = 0.5 / 3.69


@dataclass
class ModelConfig:
    """Architecture hyperparameters; channel_divisor shrinks every width for
    desk-scale test configurations while preserving the structure."""

    variant: str = "light"
    front_channels: int = 128
    block1_channels: int = 256
    block0_repeats: int = 2
    block1_repeats: int = 4
    alpha: int = 8
    gru_hidden: int = 1024
    embedding_dim: int = 1024
    num_speakers: int = 6112
    crop_samples: int = 59049
    shift_fraction: float = DEFAULT_SHIFT_FRACTION
    channel_divisor: int = 1

    def __post_init__(self):
        if self.variant not in ("light", "heavy"):
            raise ValueError(f"variant must be 'light' or 'heavy', got {self.variant!r}")
        if not 0.0 < self.shift_fraction < 1.0:
            raise ValueError("shift_fraction must lie in (0, 1)")
        if self.num_speakers < 2:
            raise ValueError("num_speakers must be >= 2")
        for name in ("front_channels", "block1_channels", "gru_hidden", "embedding_dim"):
            if getattr(self, name) % self.channel_divisor != 0:
                raise ValueError(f"channel_divisor {self.channel_divisor} does not divide {name}")
        for name in ("front_channels", "block1_channels"):
            if (getattr(self, name) // self.channel_divisor) % self.alpha != 0:
                raise ValueError(f"effective {name} not divisible by alpha={self.alpha}")
        q, r = divmod(self.crop_samples, self.stride_product)
        if r != 0 or not _is_power_of_3(q):
            raise ValueError(
                f"crop_samples must be a power of 3 times {self.stride_product}, got {self.crop_samples}"
            )

    @property
    def stride_product(self) -> int:
        """Total time downsampling: front stride 3, then one pool-by-3 per block."""
        return 3 ** (1 + self.block0_repeats + self.block1_repeats)

    @property
    def min_eval_samples(self) -> int:
        """Shortest usable input at inference: three recurrence steps."""
        return 3 * self.stride_product

    @property
    def ch_front(self) -> int:
        return self.front_channels // self.channel_divisor

    @property
    def ch_block1(self) -> int:
        return self.block1_channels // self.channel_divisor

    @property
    def ch_gru(self) -> int:
        return self.gru_hidden // self.channel_divisor

    @property
    def ch_embedding(self) -> int:
        return self.embedding_dim // self.channel_divisor

    @classmethod
    def tiny(cls, variant: str = "light", num_speakers: int = 8, **overrides) -> "ModelConfig":
        kwargs = dict(variant=variant, num_speakers=num_speakers,
                      channel_divisor=16, crop_samples=2187)
        kwargs.update(overrides)
        return cls(**kwargs)


def _is_power_of_3(n: int) -> bool:
    if n < 1:
        return False
    while n % 3 == 0:
        n //= 3
    return n == 1


def split_feature(f: Tensor, shift_fraction: float):
    """Split a (C, T) map into beginning and ending windows of equal length.

    The ending window is shifted ceil(shift_fraction * T) frames past the
    beginning one and ends at the final frame; the windows overlap whenever
    shift_fraction < 0.5 (shift_fraction = 0.5 gives disjoint halves).
    """
    t = f.data.shape[1]
    shift = math.ceil(shift_fraction * t)
    t_win = t - shift
    if t_win < 1:
        raise ValueError(f"feature too short for split: T={t}, shift_fraction={shift_fraction}")
    return ad.time_slice(f, 0, t_win), ad.time_slice(f, shift, t)


class SeoAttention:
    """Channel attention from the finite difference of windowed pooled features.

    Pools the beginning and ending windows over time, runs each through its
    own channel-reducing k=1 conv, subtracts (ending minus beginning), expands
    back with a third k=1 conv and squashes through a sigmoid.
    """

    def __init__(self, in_channels: int, alpha: int, shift_fraction: float,
                 out_channels: int | None = None):
        if in_channels % alpha != 0:
            raise ValueError(f"channels {in_channels} not divisible by reduction ratio {alpha}")
        reduced = in_channels // alpha
        self.in_channels = in_channels
        self.out_channels = in_channels if out_channels is None else out_channels
        self.shift_fraction = shift_fraction
        self.squeeze_end = Conv1d(in_channels, reduced, 1)
        self.squeeze_begin = Conv1d(in_channels, reduced, 1)
        self.expand = Conv1d(reduced, self.out_channels, 1)

    def attention(self, f: Tensor) -> Tensor:
        """Attention weights in (0, 1)^out_channels for a (in_channels, T) map."""
        begin, end = split_feature(f, self.shift_fraction)
        pooled_begin = ad.global_avg_pool(begin)
        pooled_end = ad.global_avg_pool(end)
        diff = ad.sub(self.squeeze_end(pooled_end), self.squeeze_begin(pooled_begin))
        return ad.sigmoid(self.expand(diff))

    def __call__(self, f: Tensor):
        """Rescale f by its attention weights; returns (rescaled, weights)."""
        weights = self.attention(f)
        return ad.channel_scale(f, weights), weights

    def named_parameters(self, prefix: str = ""):
        yield from self.squeeze_end.named_parameters(prefix + "squeeze_end.")
        yield from self.squeeze_begin.named_parameters(prefix + "squeeze_begin.")
        yield from self.expand.named_parameters(prefix + "expand.")

    def named_buffers(self, prefix: str = ""):
        return iter(())

    def _children(self):
        return (self.squeeze_end, self.squeeze_begin, self.expand)

    def init(self, rng):
        for child in self._children():
            child.init(rng)


def hierarchical_rescale(f: Tensor, attn1: SeoAttention, attn2: SeoAttention, first_conv):
    """Average two attention vectors and rescale f by the result.

    attn1 reads f directly; attn2 reads ``first_conv(f)``, the pre-activated
    first convolution of the block it lives in. Both must emit weights for
    f's channel count. Returns (rescaled map, averaged weights).
    """
    w1 = attn1.attention(f)
    w2 = attn2.attention(first_conv(f))
    if w1.data.shape != w2.data.shape:
        raise ValueError(f"channel mismatch between attention stages: {w1.data.shape} vs {w2.data.shape}")
    avg = ad.scale(ad.add(w1, w2), 0.5)
    return ad.channel_scale(f, avg), avg


class FdnBlock:
    """Attention rescale, pre-activation residual conv pair, then pool by 3.

    The residual sum taps the block input (projected by a k=1 conv when the
    channel count changes) and happens before the pool. The first block of
    the network omits the leading BN+activation of its conv stack.
    """

    def __init__(self, in_channels: int, out_channels: int, alpha: int, shift_fraction: float,
                 heavy: bool = False, first_of_network: bool = False):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.attn1 = SeoAttention(in_channels, alpha, shift_fraction)
        self.attn2 = (SeoAttention(out_channels, alpha, shift_fraction, out_channels=in_channels)
                      if heavy else None)
        self.pre_bn1 = None if first_of_network else BatchNorm1d(in_channels)
        self.conv1 = Conv1d(in_channels, out_channels, 3, stride=1, padding=1)
        self.pre_bn2 = BatchNorm1d(out_channels)
        self.conv2 = Conv1d(out_channels, out_channels, 3, stride=1, padding=1)
        self.project = Conv1d(in_channels, out_channels, 1) if in_channels != out_channels else None

    def first_conv(self, f: Tensor, training: bool) -> Tensor:
        h = f
        if self.pre_bn1 is not None:
            h = ad.leaky_relu(self.pre_bn1(h, training), LEAKY_SLOPE)
        return self.conv1(h)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        if x.data.shape[1] % 3 != 0:
            raise ValueError(f"block input length {x.data.shape[1]} not divisible by 3")
        if self.attn2 is not None:
            u, _ = hierarchical_rescale(x, self.attn1, self.attn2,
                                        lambda f: self.first_conv(f, training))
        else:
            u, _ = self.attn1(x)
        r = self.first_conv(u, training)
        r = self.conv2(ad.leaky_relu(self.pre_bn2(r, training), LEAKY_SLOPE))
        skip = self.project(x) if self.project is not None else x
        return ad.maxpool1d(ad.add(r, skip), 3)

    def _children(self):
        named = [("attn1.", self.attn1)]
        if self.attn2 is not None:
            named.append(("attn2.", self.attn2))
        if self.pre_bn1 is not None:
            named.append(("pre_bn1.", self.pre_bn1))
        named += [("conv1.", self.conv1), ("pre_bn2.", self.pre_bn2), ("conv2.", self.conv2)]
        if self.project is not None:
            named.append(("project.", self.project))
        return named

    def named_parameters(self, prefix: str = ""):
        for name, child in self._children():
            yield from child.named_parameters(prefix + name)

    def named_buffers(self, prefix: str = ""):
        for name, child in self._children():
            yield from child.named_buffers(prefix + name)

    def init(self, rng):
        for _, child in self._children():
            child.init(rng)


class FdnNetwork:
    """Full embedding-plus-classifier network over a raw waveform (1, T)."""

    def __init__(self, config: ModelConfig):
        self.config = config
        heavy = config.variant == "heavy"
        c0, c1 = config.ch_front, config.ch_block1
        self.front = Conv1d(1, c0, 3, stride=3, padding=0)
        self.front_bn = BatchNorm1d(c0)
        self.blocks = []
        for i in range(config.block0_repeats):
            self.blocks.append(FdnBlock(c0, c0, config.alpha, config.shift_fraction,
                                        heavy=heavy, first_of_network=(i == 0)))
        for i in range(config.block1_repeats):
            self.blocks.append(FdnBlock(c0 if i == 0 else c1, c1, config.alpha,
                                        config.shift_fraction, heavy=heavy))
        self.gru = Gru(c1, config.ch_gru)
        self.embed = Linear(config.ch_gru, config.ch_embedding)
        self.classify = Linear(config.ch_embedding, config.num_speakers)

    def forward(self, wave: Tensor, training: bool = False):
        """Map a (1, T) waveform tensor to (embedding, logits)."""
        if wave.data.ndim != 2 or wave.data.shape[0] != 1:
            raise ValueError(f"expected a (1, T) waveform tensor, got shape {wave.data.shape}")
        t = wave.data.shape[1]
        sp = self.config.stride_product
        if t < sp:
            raise ValueError(f"input length {t} below minimum length {sp}")
        if t % sp != 0:
            raise ValueError(f"input length {t} must be a multiple of {sp}")
        x = ad.leaky_relu(self.front_bn(self.front(wave), training), LEAKY_SLOPE)
        for block in self.blocks:
            x = block(x, training)
        h = self.gru(ad.transpose2d(x))
        embedding = self.embed(h)
        logits = self.classify(embedding)
        return embedding, logits

    __call__ = forward

    def _children(self):
        named = [("front.", self.front), ("front_bn.", self.front_bn)]
        named += [(f"blocks.{i}.", b) for i, b in enumerate(self.blocks)]
        named += [("gru.", self.gru), ("embed.", self.embed), ("classify.", self.classify)]
        return named

    def named_parameters(self, prefix: str = ""):
        for name, child in self._children():
            yield from child.named_parameters(prefix + name)

    def named_buffers(self, prefix: str = ""):
        for name, child in self._children():
            yield from child.named_buffers(prefix + name)

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def initialize(self, seed: int) -> "FdnNetwork":
        """Deterministically initialize every parameter from one seed."""
        rng = np.random.default_rng(seed)
        for _, child in self._children():
            child.init(rng)
        return self


def count_parameters(config: ModelConfig) -> int:
    """Number of trainable scalars for a configuration (running stats excluded)."""
    net = FdnNetwork(config)
    return sum(p.size for _, p in net.named_parameters())
