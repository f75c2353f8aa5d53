"""Registered finite-difference cases. Each returns its max relative error.

Every case projects the op output onto a fixed random tensor so the scalar
depends on all output coordinates.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import DiscriminatorConfig, DomainEncoderConfig, GeneratorConfig
from .gradcheck import check_gradients, check_module_gradients, register
from .losses import hinge_d, hinge_g, rec_loss
from .norm import batch_norm, instance_norm, masked_channel_stats, rain_forward, region_norm_rn


def _proj(out: T.Tensor, rng_seed: int = 99) -> T.Tensor:
    w = np.random.default_rng(rng_seed).standard_normal(out.shape)
    return (out * w).sum()


def _mask(rng, n, h, w, p=0.35):
    m = (rng.random((n, 1, h, w)) < p).astype(np.float64)
    m[:, 0, 0, 0], m[:, 0, -1, -1] = 1, 0  # both regions non-empty
    return m


def _x(rng, *shape):
    return rng.standard_normal(shape)


# ---- tensor ops -------------------------------------------------------------


@register("conv2d", "tensor")
def _conv(rng):
    x, w, b = _x(rng, 2, 3, 7, 7), _x(rng, 4, 3, 3, 3), _x(rng, 1, 4, 1, 1)
    return check_gradients(lambda t: _proj(T.conv2d(t[0], t[1], t[2], stride=2, padding=1)), [x, w, b], rng)


@register("conv2d_k4s2", "tensor")
def _conv4(rng):
    x, w = _x(rng, 1, 2, 8, 8), _x(rng, 3, 2, 4, 4)
    return check_gradients(lambda t: _proj(T.conv2d(t[0], t[1], None, stride=2, padding=1)), [x, w], rng)


@register("conv_transpose2d", "tensor")
def _convt(rng):
    x, w, b = _x(rng, 2, 3, 4, 4), _x(rng, 3, 2, 4, 4), _x(rng, 1, 2, 1, 1)
    return check_gradients(lambda t: _proj(T.conv_transpose2d(t[0], t[1], t[2], stride=2, padding=1)),
                           [x, w, b], rng)


@register("leaky_relu", "tensor")
def _lrelu(rng):
    x = _x(rng, 2, 3, 4, 4)
    x[np.abs(x) < 1e-3] = 0.5  # keep probes off the kink
    return check_gradients(lambda t: _proj(T.leaky_relu(t[0], 0.2)), [x], rng)


@register("relu", "tensor")
def _relu(rng):
    x = _x(rng, 2, 3, 4, 4)
    x[np.abs(x) < 1e-3] = 0.5
    return check_gradients(lambda t: _proj(T.relu(t[0])), [x], rng)


@register("sigmoid", "tensor")
def _sigmoid(rng):
    return check_gradients(lambda t: _proj(T.sigmoid(t[0])), [_x(rng, 2, 3, 4, 4) * 3], rng)


@register("tanh", "tensor")
def _tanh(rng):
    return check_gradients(lambda t: _proj(T.tanh(t[0])), [_x(rng, 2, 3, 4, 4) * 2], rng)


@register("arithmetic_broadcast", "tensor")
def _arith(rng):
    a, b = _x(rng, 2, 3, 4, 4), np.abs(_x(rng, 1, 3, 1, 1)) + 0.5
    return check_gradients(lambda t: _proj((t[0] * t[1] - t[1]) / (t[1] + 1.0) + T.sqrt(t[1])), [a, b], rng)


@register("concat_where_resize", "tensor")
def _misc(rng):
    a, b = _x(rng, 2, 2, 4, 4), _x(rng, 2, 3, 4, 4)
    cond = rng.random((2, 5, 8, 8)) < 0.5

    def build(t):
        up = T.resize_nearest(T.concat_channels(t[0], t[1]), 8, 8)
        return _proj(T.where(cond, up, T.square(up)))

    return check_gradients(build, [a, b], rng)


@register("attention_block", "model")
def _attention(rng):
    from .model import AttentionBlock

    block = AttentionBlock(rng, 5)
    enc, dec = _x(rng, 2, 2, 4, 4), _x(rng, 2, 3, 4, 4)
    leaves = [T.Tensor(enc, requires_grad=True), T.Tensor(dec, requires_grad=True)]
    return check_module_gradients(lambda: _proj(block(leaves[0], leaves[1])), block.parameters(),
                                  [enc, dec], leaves, rng)


# ---- normalization ----------------------------------------------------------


@register("masked_channel_stats", "region_norm")
def _stats(rng):
    m = _mask(rng, 2, 5, 5)

    def build(t):
        s = masked_channel_stats(t[0], m)
        return _proj(s.mean, 1) + _proj(s.std, 2)

    return check_gradients(build, [_x(rng, 2, 3, 5, 5)], rng)


@register("instance_norm", "region_norm")
def _in(rng):
    x, g, b = _x(rng, 2, 3, 5, 5), _x(rng, 1, 3, 1, 1), _x(rng, 1, 3, 1, 1)
    return check_gradients(lambda t: _proj(instance_norm(t[0], 1e-5, t[1], t[2])), [x, g, b], rng)


@register("batch_norm", "region_norm")
def _bn(rng):
    x, g, b = _x(rng, 3, 2, 4, 4), _x(rng, 1, 2, 1, 1), _x(rng, 1, 2, 1, 1)
    return check_gradients(lambda t: _proj(batch_norm(t[0], 1e-5, t[1], t[2])), [x, g, b], rng)


@register("region_norm", "region_norm")
def _rn(rng):
    x, g, b = _x(rng, 2, 2, 5, 5), _x(rng, 1, 2, 1, 1), _x(rng, 1, 2, 1, 1)
    m = _mask(rng, 2, 5, 5)
    return check_gradients(lambda t: _proj(region_norm_rn(t[0], m, 1e-5, t[1], t[2])), [x, g, b], rng)


@register("rain", "region_norm")
def _rain(rng):
    m = _mask(rng, 2, 6, 6)
    return check_gradients(lambda t: _proj(rain_forward(t[0], m)), [_x(rng, 2, 3, 6, 6)], rng, probes=20)


@register("rain_literal_variance", "region_norm")
def _rain_lit(rng):
    m = _mask(rng, 2, 6, 6)
    return check_gradients(lambda t: _proj(rain_forward(t[0], m, literal_variance=True)),
                           [_x(rng, 2, 3, 6, 6)], rng, probes=20)


@register("rain_literal_roles", "region_norm")
def _rain_roles(rng):
    m = _mask(rng, 2, 6, 6)
    return check_gradients(lambda t: _proj(rain_forward(t[0], m, literal_roles=True)),
                           [_x(rng, 2, 3, 6, 6)], rng, probes=20)


@register("rain_fallback", "region_norm")
def _rain_fb(rng):
    m = _mask(rng, 2, 6, 6)
    m[1] = 0
    m[1, 0, 2, 3] = 1  # single foreground pixel: sample 1 takes the instance-norm path
    return check_gradients(lambda t: _proj(rain_forward(t[0], m)), [_x(rng, 2, 3, 6, 6)], rng, probes=20)


# ---- model pieces -----------------------------------------------------------


@register("spectral_norm_conv", "model")
def _sn(rng):
    from .model import SNConv

    conv = SNConv(rng, 2, 3, 3, 1, 1)
    conv.eval()  # freeze u so the function is fixed while probing
    x = _x(rng, 1, 2, 5, 5)
    leaf = T.Tensor(x, requires_grad=True)
    return check_module_gradients(lambda: _proj(conv(leaf)), conv.parameters(), [x], [leaf], rng)


@register("partial_conv", "model")
def _pconv(rng):
    from .model import partial_conv

    m = _mask(rng, 2, 6, 6)[:, :1]
    x, w, b = _x(rng, 2, 2, 6, 6), _x(rng, 3, 2, 3, 3), _x(rng, 1, 3, 1, 1)
    return check_gradients(lambda t: _proj(partial_conv(t[0], m, t[1], t[2], stride=2, padding=1)[0]),
                           [x, w, b], rng)


@register("generator", "model")
def _generator(rng):
    from .model import Generator

    G = Generator(GeneratorConfig(depth=2, base_channels=2, input_size=8, attention_blocks=2), rng)
    for p in G.parameters():
        p.data = p.data + rng.standard_normal(p.shape) * 0.3
    x = rng.uniform(-1, 1, (2, 3, 8, 8))
    m = _mask(rng, 2, 8, 8, 0.5)
    leaf = T.Tensor(x, requires_grad=True)
    # conv biases feeding instance norm have exactly zero gradient; the central
    # difference there is pure roundoff (~1e-9), hence the larger absolute floor
    return check_module_gradients(lambda: _proj(G(leaf, m)), G.parameters(), [x], [leaf], rng, probes=3,
                                  floor=1e-5)


@register("discriminator", "model")
def _disc(rng):
    from .model import Discriminator

    D = Discriminator(DiscriminatorConfig(base_channels=2), rng)
    D.eval()
    x = _x(rng, 2, 3, 16, 16)
    leaf = T.Tensor(x, requires_grad=True)
    return check_module_gradients(lambda: _proj(D(leaf)), D.parameters(), [x], [leaf], rng, probes=4)


@register("domain_verification", "model")
def _dv(rng):
    from .model import DomainDiscriminator

    Dv = DomainDiscriminator(DomainEncoderConfig(base_channels=2, embedding=4), rng)
    Dv.eval()
    x = _x(rng, 2, 3, 8, 8)
    m = _mask(rng, 2, 8, 8, 0.5)
    leaf = T.Tensor(x, requires_grad=True)
    return check_module_gradients(lambda: Dv(leaf, m).sum(), Dv.parameters(), [x], [leaf], rng, probes=4)


# ---- losses -----------------------------------------------------------------


@register("rec_loss", "losses")
def _rec(rng):
    target = _x(rng, 2, 3, 4, 4)
    x = target + _x(rng, 2, 3, 4, 4)  # stay away from |d| = 0
    return check_gradients(lambda t: rec_loss(t[0], target), [x], rng)


@register("hinge_d", "losses")
def _hd(rng):
    real, fake = rng.uniform(-3, 3, (4, 1, 1, 1)), rng.uniform(-3, 3, (4, 1, 1, 1))
    for a in (real, fake):
        a[np.abs(np.abs(a) - 1) < 1e-2] = 0.3  # away from the hinge kinks
    return check_gradients(lambda t: hinge_d(t[0], t[1]), [real, fake], rng)


@register("hinge_g", "losses")
def _hg(rng):
    return check_gradients(lambda t: hinge_g(t[0]), [rng.uniform(-3, 3, (4, 1, 1, 1))], rng)
