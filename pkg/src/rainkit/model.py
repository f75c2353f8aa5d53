"""Harmonization networks: the U-Net generator, the global discriminator and
the domain-verification discriminator built on partial convolutions."""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError, load_module_state, load_with_header, module_state, save_with_header
from .config import DiscriminatorConfig, DomainEncoderConfig, GeneratorConfig
from .norm import make_norm
from .plans import NormPlan, get_plan
from .tensor import Module, Parameter, Tensor

INIT_STD = 0.02


def _normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(T.DEFAULT_DTYPE)


class Conv(Module):
    def __init__(self, rng, c_in, c_out, k, stride=1, padding=0, bias=True):
        self.weight = Parameter(_normal(rng, (c_out, c_in, k, k)))
        self.bias = Parameter(np.zeros((1, c_out, 1, 1), T.DEFAULT_DTYPE)) if bias else None
        self.stride, self.padding = stride, padding

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose(Module):
    def __init__(self, rng, c_in, c_out, k, stride=1, padding=0, bias=True):
        self.weight = Parameter(_normal(rng, (c_in, c_out, k, k)))
        self.bias = Parameter(np.zeros((1, c_out, 1, 1), T.DEFAULT_DTYPE)) if bias else None
        self.stride, self.padding = stride, padding

    def forward(self, x):
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class AttentionBlock(Module):
    """Gate concatenated skip features with a sigmoid of a 1x1 convolution."""

    def __init__(self, rng, channels: int):
        self.conv = Conv(rng, channels, channels, 1)

    def forward(self, enc_feat: Tensor, dec_feat: Optional[Tensor] = None) -> Tensor:
        # without decoder features (innermost stage) the gate acts on the bottleneck alone
        if dec_feat is None:
            f_in = enc_feat
        else:
            if enc_feat.shape[2:] != dec_feat.shape[2:]:
                raise T.ShapeError(f"attention: spatial mismatch {enc_feat.shape[2:]} vs {dec_feat.shape[2:]}")
            f_in = T.concat_channels(enc_feat, dec_feat)
        return T.sigmoid(self.conv(f_in)) * f_in


def attention_forward(block: AttentionBlock, enc_feat: Tensor, dec_feat: Optional[Tensor] = None) -> Tensor:
    return block(enc_feat, dec_feat)


class Generator(Module):
    """U-Net with stride-2 encoder stages, transposed-conv decoder stages,
    skip concatenations and one normalization slot after every stage."""

    def __init__(self, cfg: GeneratorConfig, rng: Optional[np.random.Generator] = None,
                 plan: Optional[NormPlan] = None):
        cfg.validate()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.plan: NormPlan = plan if plan is not None else get_plan(cfg.norm_plan, cfg.depth)
        d = cfg.depth
        if len(self.plan) != 2 * d:
            raise ValueError(f"plan {self.plan.name} has {len(self.plan)} slots, network has {2 * d}")
        norm_kw = dict(eps=cfg.eps, min_pixels=cfg.min_pixels,
                       literal_variance=cfg.literal_variance, literal_roles=cfg.literal_roles)

        self.down, self.down_norm = [], []
        c_prev = cfg.in_channels
        for i in range(1, d + 1):
            c = cfg.channels(i)
            self.down.append(Conv(rng, c_prev, c, 4, 2, 1))
            self.down_norm.append(make_norm(self.plan[i], c, **norm_kw))
            c_prev = c

        self.up, self.up_norm, self.attn = [], [], []
        for j in range(1, d + 1):
            c_out = cfg.channels(d - j) if j < d else cfg.base_channels
            self.up.append(ConvTranspose(rng, self._decoder_in(j), c_out, 4, 2, 1))
            self.up_norm.append(make_norm(self.plan[d + j], c_out, **norm_kw))
        # attention on the decoder inputs of the last `attention_blocks` stages
        self.attn_stages = list(range(d - cfg.attention_blocks + 1, d + 1))
        self.attn = [AttentionBlock(rng, self._decoder_in(j)) for j in self.attn_stages]
        # the head also sees the raw input: a full-resolution skip that bypasses every norm slot
        self.head = Conv(rng, cfg.base_channels + cfg.in_channels, cfg.out_channels, 3, 1, 1)

    def _decoder_in(self, j: int) -> int:
        d = self.cfg.depth
        return self.cfg.channels(d) if j == 1 else 2 * self.cfg.channels(d - j + 1)

    def stage_sizes(self) -> list[int]:
        s = self.cfg.input_size
        return [s // 2**i for i in range(1, self.cfg.depth + 1)]

    def forward(self, composite: Tensor, mask: np.ndarray, trace: Optional[list] = None) -> Tensor:
        """Harmonize ``composite`` (N, 3, S, S) in [-1, 1] under ``mask`` (N, 1, S, S).

        Only the foreground is predicted; background pixels are copied from the
        input. ``trace`` collects ``(slot, features, mask)`` after every
        normalization layer when given.
        """
        cfg = self.cfg
        s = cfg.input_size
        if composite.shape[2:] != (s, s):
            raise T.ShapeError(f"generator expects {s}x{s} input, got {composite.shape[2]}x{composite.shape[3]}")
        mask = np.asarray(mask, dtype=composite.dtype)
        if mask.shape != (composite.shape[0], 1, s, s):
            raise T.ShapeError(f"mask shape {mask.shape} does not match composite {composite.shape}")
        d = cfg.depth
        masks = {s: mask}
        for size in self.stage_sizes():
            masks[size] = T.resize_mask(mask, size, size)

        x_in = T.concat_channels(composite, T.Tensor(mask))
        h = x_in
        skips = []
        for i in range(d):
            h = self.down[i](h)
            m = masks[h.shape[2]]
            h = self.down_norm[i](h, m)
            if trace is not None:
                trace.append((i + 1, h.data.copy(), m))
            h = T.leaky_relu(h, 0.2)
            skips.append(h)

        for j in range(1, d + 1):
            if j > 1:
                h = T.concat_channels(skips[d - j], h)
            if j in self.attn_stages:
                h = self.attn[self.attn_stages.index(j)](h)
            h = self.up[j - 1](h)
            m = masks[h.shape[2]]
            h = self.up_norm[j - 1](h, m)
            if trace is not None:
                trace.append((d + j, h.data.copy(), m))
            h = T.relu(h)

        out = T.tanh(self.head(T.concat_channels(h, x_in)))
        fg = np.broadcast_to(mask.astype(bool), out.shape)
        return T.where(fg, out, composite)


def build_generator(cfg: GeneratorConfig, seed: int = 0) -> Generator:
    return Generator(cfg, np.random.default_rng(seed))


def generator_forward(G: Generator, composite: Tensor, mask: np.ndarray) -> Tensor:
    return G(composite, mask)


# --------------------------------------------------------------------------
# spectral normalization
# --------------------------------------------------------------------------


def _l2normalize(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    return v / (np.linalg.norm(v) + eps)


def power_iteration(w_mat: np.ndarray, u: np.ndarray, n_iter: int = 1) -> tuple[np.ndarray, np.ndarray, float]:
    """Refine the left singular estimate ``u``; returns (u, v, sigma)."""
    v = _l2normalize(w_mat.T @ u)
    for _ in range(n_iter):
        v = _l2normalize(w_mat.T @ u)
        u = _l2normalize(w_mat @ v)
    return u, v, float(u @ w_mat @ v)


def spectral_normalize(weight: np.ndarray, u: Optional[np.ndarray] = None, n_iter: int = 20,
                       rng: Optional[np.random.Generator] = None, eps: float = 1e-12):
    """Array-level helper: (normalized weight, sigma estimate, u)."""
    mat = weight.reshape(weight.shape[0], -1)
    if u is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        u = _l2normalize(rng.standard_normal(mat.shape[0]))
    u, v, sigma = power_iteration(mat, u, n_iter)
    return weight / max(sigma, eps), sigma, u


class SNConv(Module):
    """Convolution whose weight is divided by a running estimate of its largest
    singular value. The estimate ``u`` takes one power-iteration step per
    training-mode forward and is frozen in eval mode."""

    _buffer_names = ("u",)

    def __init__(self, rng, c_in, c_out, k, stride=1, padding=0, eps: float = 1e-12):
        self.weight = Parameter(_normal(rng, (c_out, c_in, k, k)))
        self.bias = Parameter(np.zeros((1, c_out, 1, 1), T.DEFAULT_DTYPE))
        self.u = _l2normalize(rng.standard_normal(c_out)).astype(T.DEFAULT_DTYPE)
        self.stride, self.padding, self.eps = stride, padding, eps

    def _uv(self, update: bool):
        w = self.weight.data.reshape(self.weight.shape[0], -1)
        u = self.u.astype(w.dtype)
        if update:
            u, v, _ = power_iteration(w, u, 1)
            self.u = u.astype(self.u.dtype)
        else:
            v = _l2normalize(w.T @ u)
        return u, v

    def sigma(self) -> float:
        u, v = self._uv(update=False)
        return float(u @ self.weight.data.reshape(len(u), -1) @ v)

    def effective_weight(self) -> Tensor:
        u, v = self._uv(update=self.training)
        uv = np.outer(u, v).reshape(self.weight.shape).astype(self.weight.dtype)
        # sigma = u^T W v with u, v treated as constants
        sigma = (self.weight * uv).sum()
        if float(sigma.data) < self.eps:
            return self.weight * (1.0 / self.eps)
        return self.weight / sigma

    def forward(self, x):
        return T.conv2d(x, self.effective_weight(), self.bias, self.stride, self.padding)


class Discriminator(Module):
    """Patch critic: stride-2 spectrally normalized convs, score map averaged per sample."""

    def __init__(self, cfg: Optional[DiscriminatorConfig] = None, rng: Optional[np.random.Generator] = None):
        cfg = cfg or DiscriminatorConfig()
        rng = rng if rng is not None else np.random.default_rng(1)
        self.cfg = cfg
        widths = [cfg.in_channels] + [cfg.base_channels * 2**i for i in range(cfg.layers - 1)] + [1]
        self.convs = [SNConv(rng, widths[i], widths[i + 1], 4, 2, 1) for i in range(cfg.layers)]

    def forward(self, image: Tensor) -> Tensor:
        h = image
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = T.leaky_relu(h, 0.2)
        return h.mean(axis=(2, 3), keepdims=True)  # (N, 1, 1, 1)


def build_discriminator(cfg: Optional[DiscriminatorConfig] = None, seed: int = 1) -> Discriminator:
    return Discriminator(cfg, np.random.default_rng(seed))


# --------------------------------------------------------------------------
# partial convolution and domain verification
# --------------------------------------------------------------------------


def mask_window_sum(mask: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    n, _, h, w = mask.shape
    ho, wo = T.conv_output_size(h, k, stride, padding), T.conv_output_size(w, k, stride, padding)
    return T.im2col(mask, k, stride, padding).sum(axis=1).reshape(n, 1, ho, wo)


def partial_conv(x: Tensor, mask: np.ndarray, weight: Tensor, bias: Optional[Tensor] = None,
                 stride: int = 1, padding: int = 0) -> tuple[Tensor, np.ndarray]:
    """Convolution over visible pixels only, re-scaled by window coverage.

    ``mask`` is (N, 1, H, W). Windows with no visible pixel output zero; the
    returned mask marks windows that saw at least one visible pixel.
    """
    k = weight.shape[2]
    msum = mask_window_sum(mask.astype(x.dtype), k, stride, padding)
    valid = msum > 0
    ratio = np.where(valid, (k * k) / np.maximum(msum, 1), 0).astype(x.dtype)
    visible = T.where(np.broadcast_to(mask.astype(bool), x.shape), x, 0.0)
    out = T.conv2d(visible, weight, None, stride, padding) * ratio
    if bias is not None:
        out = out + bias
    out = T.where(np.broadcast_to(valid, out.shape), out, 0.0)
    return out, valid.astype(x.dtype)


class PartialConv(SNConv):
    def forward(self, x, mask):
        return partial_conv(x, mask, self.effective_weight(), self.bias, self.stride, self.padding)


class DomainEncoder(Module):
    """Partial-conv stages, masked average pooling, linear projection to the embedding."""

    def __init__(self, cfg: Optional[DomainEncoderConfig] = None, rng: Optional[np.random.Generator] = None):
        cfg = cfg or DomainEncoderConfig()
        cfg.validate()
        rng = rng if rng is not None else np.random.default_rng(2)
        self.cfg = cfg
        widths = [cfg.in_channels] + [cfg.base_channels * 2**i for i in range(cfg.stages)]
        self.stages = [PartialConv(rng, widths[i], widths[i + 1], 3, 2, 1) for i in range(cfg.stages)]
        self.proj = SNConv(rng, widths[-1], cfg.embedding, 1)

    def forward(self, image: Tensor, mask: np.ndarray) -> Tensor:
        h, m = image, np.asarray(mask, dtype=image.dtype)
        for stage in self.stages:
            h, m = stage(h, m)
            h = T.leaky_relu(h, 0.2)
        count = np.maximum(m.sum(axis=(2, 3), keepdims=True), 1).astype(h.dtype)
        pooled = T.where(np.broadcast_to(m.astype(bool), h.shape), h, 0.0).sum(axis=(2, 3), keepdims=True) / count
        return self.proj(pooled)  # (N, E, 1, 1)


class DomainDiscriminator(Module):
    """Score = inner product of foreground and background embeddings."""

    def __init__(self, cfg: Optional[DomainEncoderConfig] = None, rng: Optional[np.random.Generator] = None):
        self.encoder = DomainEncoder(cfg, rng)

    def embeddings(self, image: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        mask = np.asarray(mask, dtype=image.dtype)
        fg = np.broadcast_to(mask.astype(bool), image.shape)
        l_f = self.encoder(T.where(fg, image, 0.0), mask)
        l_b = self.encoder(T.where(fg, 0.0, image), 1.0 - mask)
        return l_f, l_b

    def forward(self, image: Tensor, mask: np.ndarray) -> Tensor:
        l_f, l_b = self.embeddings(image, mask)
        return (l_f * l_b).sum(axis=1, keepdims=True)  # (N, 1, 1, 1)


def build_domain_discriminator(cfg: Optional[DomainEncoderConfig] = None, seed: int = 2) -> DomainDiscriminator:
    return DomainDiscriminator(cfg, np.random.default_rng(seed))


def domain_verify(D_v: DomainDiscriminator, image: Tensor, mask: np.ndarray) -> Tensor:
    return D_v(image, mask)


# --------------------------------------------------------------------------
# generator checkpoints
# --------------------------------------------------------------------------


def save_generator(path, G: Generator) -> None:
    header = {"kind": "generator", "generator": dataclasses.asdict(G.cfg)}
    save_with_header(path, header, module_state(G))


def load_generator(path) -> Generator:
    header, tensors = load_with_header(path)
    if header.get("kind") != "generator":
        raise CheckpointError(f"{path}: not a generator checkpoint")
    cfg = GeneratorConfig(**header["generator"])
    G = Generator(cfg)
    load_module_state(G, tensors)
    return G


def harmonize_arrays(G: Generator, composite: np.ndarray, mask: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Inference helper: eval mode, no tape, original training flag restored afterwards."""
    was_training = G.training
    G.eval()
    outs = []
    try:
        with T.no_grad():
            for i in range(0, len(composite), batch_size):
                c = T.Tensor(np.asarray(composite[i : i + batch_size], dtype=T.DEFAULT_DTYPE))
                outs.append(G(c, np.asarray(mask[i : i + batch_size], dtype=T.DEFAULT_DTYPE)).data)
    finally:
        G.train(was_training)
    return np.concatenate(outs, axis=0)
