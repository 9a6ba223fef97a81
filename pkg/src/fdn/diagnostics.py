"""Finite-difference verification of every backward rule.

Runs central-difference gradient checks over the individual ops, the
attention module, the hierarchical variant, and the full tiny-config light
and heavy networks (sampled coordinates per parameter tensor for the
network-level checks). Returns (name, max_relative_error) rows; everything
is expected to sit far below the 1e-4 acceptance bound away from the
measure-zero kink points of leaky_relu and maxpool.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .layers import BatchNorm1d, Conv1d, Gru
from .model import FdnNetwork, ModelConfig, SeoAttention, hierarchical_rescale

GRAD_TOLERANCE = 1e-4


def _sumsq(t: Tensor) -> Tensor:
    return ad.sum_all(ad.mul(t, t))


def _away_from_zero(rng, shape, low=0.05, high=1.0):
    # keeps leaky_relu inputs clear of the kink at 0
    return rng.uniform(low, high, shape) * rng.choice([-1.0, 1.0], size=shape)


def _op_checks(rng, step):
    rows = []

    x = Tensor(rng.normal(size=(3, 12)))
    w = Tensor(rng.normal(size=(5, 3, 3)) * 0.5)
    b = Tensor(rng.normal(size=5) * 0.1)
    conv = lambda _t: _sumsq(ad.conv1d(x, w, b, stride=2, padding=1))
    rows.append(("conv1d/input", grad_check(conv, x, step)))
    rows.append(("conv1d/weight", grad_check(conv, w, step)))
    rows.append(("conv1d/bias", grad_check(conv, b, step)))

    xp = Tensor(rng.normal(size=(3, 12)))
    rows.append(("maxpool1d", grad_check(lambda t: _sumsq(ad.maxpool1d(t, 3)), xp, step)))

    xg = Tensor(rng.normal(size=(4, 10)))
    rows.append(("global_avg_pool", grad_check(lambda t: _sumsq(ad.global_avg_pool(t)), xg, step)))

    xl = Tensor(_away_from_zero(rng, (4, 8)))
    rows.append(("leaky_relu", grad_check(lambda t: _sumsq(ad.leaky_relu(t, 0.3)), xl, step)))

    xs = Tensor(rng.normal(size=(4, 6)))
    rows.append(("sigmoid", grad_check(lambda t: _sumsq(ad.sigmoid(t)), xs, step)))
    rows.append(("tanh", grad_check(lambda t: _sumsq(ad.tanh(t)), xs, step)))

    c1 = Tensor(rng.normal(size=(4, 6)))
    c2 = Tensor(rng.normal(size=(4, 6)))
    ew = lambda t: _sumsq(ad.mul(ad.add(t, c1), ad.sub(t, c2)))
    rows.append(("add/sub/mul", grad_check(ew, Tensor(rng.normal(size=(4, 6))), step)))

    f = Tensor(rng.normal(size=(5, 9)))
    cw = Tensor(rng.normal(size=(5, 1)))
    rows.append(("channel_scale/map", grad_check(lambda t: _sumsq(ad.channel_scale(t, cw)), f, step)))
    rows.append(("channel_scale/weights",
                 grad_check(lambda t: _sumsq(ad.channel_scale(f, t)), cw, step)))

    xv = Tensor(rng.normal(size=7))
    lw = Tensor(rng.normal(size=(4, 7)) * 0.5)
    lb = Tensor(rng.normal(size=4) * 0.1)
    lin = lambda _t: _sumsq(ad.linear(xv, lw, lb))
    rows.append(("linear/input", grad_check(lin, xv, step)))
    rows.append(("linear/weight", grad_check(lin, lw, step)))
    rows.append(("linear/bias", grad_check(lin, lb, step)))

    logits = Tensor(rng.normal(size=(4, 6)))
    labels = rng.integers(0, 6, size=4)
    rows.append(("softmax_cross_entropy",
                 grad_check(lambda t: ad.softmax_cross_entropy(t, labels), logits, step)))

    xb = Tensor(rng.normal(size=(2, 3, 8)))
    gamma = Tensor(rng.uniform(0.5, 1.5, 3))
    beta = Tensor(rng.normal(size=3) * 0.2)
    bn_train = lambda _t: _sumsq(ad.batchnorm_train(xb, gamma, beta)[0])
    rows.append(("batchnorm_train/input", grad_check(bn_train, xb, step)))
    rows.append(("batchnorm_train/gamma", grad_check(bn_train, gamma, step)))
    rows.append(("batchnorm_train/beta", grad_check(bn_train, beta, step)))
    rm, rv = rng.normal(size=3) * 0.3, rng.uniform(0.5, 2.0, 3)
    bn_eval = lambda _t: _sumsq(ad.batchnorm_eval(xb, gamma, beta, rm, rv))
    rows.append(("batchnorm_eval/input", grad_check(bn_eval, xb, step)))
    rows.append(("batchnorm_eval/gamma", grad_check(bn_eval, gamma, step)))

    gru = Gru(3, 5)
    gru.init(np.random.default_rng(rng.integers(2**32)))
    for gate in Gru._GATES:  # biases start at zero: nudge them off the origin
        getattr(gru, f"b_i{gate}").data[...] = rng.normal(size=5) * 0.1
        getattr(gru, f"b_h{gate}").data[...] = rng.normal(size=5) * 0.1
    seq = Tensor(rng.normal(size=(4, 3)))
    gru_fn = lambda _t: _sumsq(gru(seq))
    rows.append(("gru/input", grad_check(gru_fn, seq, step)))
    for name, p in gru.named_parameters("gru/"):
        rows.append((name, grad_check(gru_fn, p, step)))
    return rows


def _seo_checks(rng, step):
    rows = []
    seo = SeoAttention(8, 4, shift_fraction=0.5 / 3.69)
    seo.init(np.random.default_rng(rng.integers(2**32)))
    x = Tensor(rng.normal(size=(8, 20)))
    fn = lambda _t: ad.sum_all(seo(x)[0])
    rows.append(("seo/input", grad_check(fn, x, step)))
    for name, p in seo.named_parameters("seo/"):
        rows.append((name, grad_check(fn, p, step)))
    return rows


def _hierarchical_checks(rng, step):
    rows = []
    attn1 = SeoAttention(6, 2, shift_fraction=0.5 / 3.69)
    attn2 = SeoAttention(10, 2, shift_fraction=0.5 / 3.69, out_channels=6)
    conv = Conv1d(6, 10, 3, stride=1, padding=1)
    bn = BatchNorm1d(6)
    sub_rng = np.random.default_rng(rng.integers(2**32))
    for m in (attn1, attn2, conv, bn):
        m.init(sub_rng)
    bn.beta.data[...] = rng.normal(size=6) * 0.1

    def first_conv(f):
        return conv(ad.leaky_relu(bn(f, training=True), 0.3))

    x = Tensor(rng.normal(size=(6, 15)))
    fn = lambda _t: ad.sum_all(hierarchical_rescale(x, attn1, attn2, first_conv)[0])
    rows.append(("hier/input", grad_check(fn, x, step)))
    for name, p in attn1.named_parameters("hier/attn1."):
        rows.append((name, grad_check(fn, p, step)))
    for name, p in attn2.named_parameters("hier/attn2."):
        rows.append((name, grad_check(fn, p, step)))
    for name, p in conv.named_parameters("hier/conv."):
        rows.append((name, grad_check(fn, p, step)))
    rows.append(("hier/bn.gamma", grad_check(fn, bn.gamma, step)))
    rows.append(("hier/bn.beta", grad_check(fn, bn.beta, step)))
    return rows


def _network_checks(rng, step, variant, coords_per_tensor=4):
    config = ModelConfig.tiny(variant=variant)
    model = FdnNetwork(config).initialize(int(rng.integers(2**32)))
    wave = Tensor(rng.uniform(-1.0, 1.0, size=(1, config.crop_samples)))
    label = int(rng.integers(config.num_speakers))

    def fn(_t):
        _, logits = model.forward(wave, training=True)
        return ad.softmax_cross_entropy(logits, label)

    rows = [(f"{variant}/input", grad_check(fn, wave, step, max_coords=coords_per_tensor,
                                            rng=int(rng.integers(2**32))))]
    for name, p in model.named_parameters(f"{variant}/"):
        model.zero_grad()
        rows.append((name, grad_check(fn, p, step, max_coords=coords_per_tensor,
                                      rng=int(rng.integers(2**32)))))
    return rows


def run_gradient_suite(seed: int = 0, step: float = 1e-5, networks: bool = True):
    """All gradient checks; returns a list of (check_name, max_rel_err)."""
    rng = np.random.default_rng(seed)
    rows = []
    rows += _op_checks(rng, step)
    rows += _seo_checks(rng, step)
    rows += _hierarchical_checks(rng, step)
    if networks:
        rows += _network_checks(rng, step, "light")
        rows += _network_checks(rng, step, "heavy")
    return rows
