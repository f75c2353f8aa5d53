"""Masked region statistics and the normalization layers compared for harmonization.

Masks are constant ``(N, 1, H, W)`` arrays with foreground = 1; they never carry
gradients. Statistics are per sample and per channel unless stated otherwise.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Module, Parameter, Tensor

DEFAULT_EPS = 1e-5
DEFAULT_MIN_PIXELS = 2


class DegenerateRegion(ValueError):
    """A masked region has no pixels, so its statistics are undefined."""


class NormKind(str, enum.Enum):
    NONE = "None"
    IN = "IN"
    BN = "BN"
    RN = "RN"
    RAIN = "RAIN"


@dataclass
class RegionStats:
    mean: Tensor  # (N, C, 1, 1)
    std: Tensor  # (N, C, 1, 1)
    pixel_count: np.ndarray  # (N,) integer


def _check_mask(feat: Tensor, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 4 or mask.shape[1] != 1:
        raise T.ShapeError(f"mask must have shape (N, 1, H, W), got {mask.shape}")
    if mask.shape[0] != feat.shape[0] or mask.shape[2:] != feat.shape[2:]:
        raise T.ShapeError(f"mask {mask.shape} does not align with features {feat.shape}")
    return mask.astype(feat.dtype, copy=False)


def _region_stats(feat: Tensor, mask: np.ndarray, count: np.ndarray, eps: float, literal: bool):
    # count is clipped to >= 1 by callers that tolerate empty regions
    n = count.reshape(-1, 1, 1, 1).astype(feat.dtype)
    mean = (feat * mask).sum(axis=(2, 3), keepdims=True) / n
    if literal:
        # residual of the masked product at every site, as the formula is printed
        resid = feat * mask - mean
    else:
        resid = T.where(mask.astype(bool), feat - mean, 0.0)
    var = T.square(resid).sum(axis=(2, 3), keepdims=True) / n
    return mean, T.sqrt(var + eps)


def masked_channel_stats(
    feat: Tensor, mask: np.ndarray, eps: float = DEFAULT_EPS, literal: bool = False
) -> RegionStats:
    """Per-sample, per-channel mean and std over the pixels where ``mask == 1``.

    ``literal=True`` sums the squared residual of the masked product over every
    site, so each unmasked site adds ``mean**2`` before division by the masked
    pixel count.
    """
    mask = _check_mask(feat, mask)
    count = mask.sum(axis=(1, 2, 3)).round().astype(np.int64)
    if (count == 0).any():
        raise DegenerateRegion(f"empty region in samples {np.flatnonzero(count == 0).tolist()}")
    mean, std = _region_stats(feat, mask, count, eps, literal)
    return RegionStats(mean, std, count)


def instance_norm(
    feat: Tensor,
    eps: float = DEFAULT_EPS,
    scale: Optional[Tensor] = None,
    shift: Optional[Tensor] = None,
) -> Tensor:
    mean = feat.mean(axis=(2, 3), keepdims=True)
    centered = feat - mean
    var = T.square(centered).mean(axis=(2, 3), keepdims=True)
    out = centered / T.sqrt(var + eps)
    return _affine(out, scale, shift)


def _affine(out: Tensor, scale, shift) -> Tensor:
    if scale is not None:
        out = out * scale
    if shift is not None:
        out = out + shift
    return out


def needs_fallback(mask: np.ndarray, min_pixels: int = DEFAULT_MIN_PIXELS) -> np.ndarray:
    """Per-sample flag: either region has fewer than ``min_pixels`` pixels (or none)."""
    fg = mask.sum(axis=(1, 2, 3))
    bg = mask[0].size - fg
    limit = max(min_pixels, 1)
    return (fg < limit) | (bg < limit)


def rain_fallback(feat: Tensor, mask: np.ndarray, eps: float = DEFAULT_EPS,
                  min_pixels: int = DEFAULT_MIN_PIXELS) -> Tensor:
    """Degenerate-region path: plain instance normalization, no affine."""
    return instance_norm(feat, eps)


def rain_forward(
    feat: Tensor,
    mask: np.ndarray,
    eps: float = DEFAULT_EPS,
    min_pixels: int = DEFAULT_MIN_PIXELS,
    literal_variance: bool = False,
    literal_roles: bool = False,
) -> Tensor:
    """Region-aware adaptive instance normalization.

    Foreground activations are whitened with their own masked statistics and
    re-coloured with the background's: ``bg_std * (F - fg_mean) / fg_std + bg_mean``.
    Background sites are returned untouched. Samples whose foreground or
    background is smaller than ``min_pixels`` fall back to instance norm.

    ``literal_roles`` swaps the roles (scale by the background mean, shift by
    the background std).
    """
    mask = _check_mask(feat, mask)
    fallback = needs_fallback(mask, min_pixels)
    if fallback.all():
        return rain_fallback(feat, mask, eps, min_pixels)

    fg_count = mask.sum(axis=(1, 2, 3)).round().astype(np.int64)
    bg_count = mask[0].size - fg_count
    inv = 1.0 - mask
    fg_mean, fg_std = _region_stats(feat, mask, np.maximum(fg_count, 1), eps, literal_variance)
    bg_mean, bg_std = _region_stats(feat, inv, np.maximum(bg_count, 1), eps, literal_variance)
    scale, shift = (bg_mean, bg_std) if literal_roles else (bg_std, bg_mean)
    fg_out = (feat - fg_mean) / fg_std * scale + shift
    out = T.where(np.broadcast_to(mask.astype(bool), feat.shape), fg_out, feat)
    if fallback.any():
        sel = np.broadcast_to(fallback.reshape(-1, 1, 1, 1), feat.shape)
        out = T.where(sel, instance_norm(feat, eps), out)
    return out


def batch_norm(
    feat: Tensor,
    eps: float = DEFAULT_EPS,
    scale: Optional[Tensor] = None,
    shift: Optional[Tensor] = None,
    running_mean: Optional[np.ndarray] = None,
    running_var: Optional[np.ndarray] = None,
    momentum: float = 0.1,
    training: bool = True,
) -> Tensor:
    """Per-channel normalization over batch and space.

    In training mode the running buffers (shape ``(1, C, 1, 1)``) are updated
    in place as ``(1 - momentum) * running + momentum * batch_stat`` using the
    biased batch variance. Eval mode normalizes with the running buffers.
    """
    if training:
        mean = feat.mean(axis=(0, 2, 3), keepdims=True)
        centered = feat - mean
        var = T.square(centered).mean(axis=(0, 2, 3), keepdims=True)
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean.data
        if running_var is not None:
            running_var *= 1.0 - momentum
            running_var += momentum * var.data
        out = centered / T.sqrt(var + eps)
    else:
        rm = np.zeros((1, feat.shape[1], 1, 1), feat.dtype) if running_mean is None else running_mean
        rv = np.ones((1, feat.shape[1], 1, 1), feat.dtype) if running_var is None else running_var
        out = (feat - rm.astype(feat.dtype)) / np.sqrt(rv + eps).astype(feat.dtype)
    return _affine(out, scale, shift)


def region_norm_rn(
    feat: Tensor,
    mask: np.ndarray,
    eps: float = DEFAULT_EPS,
    scale: Optional[Tensor] = None,
    shift: Optional[Tensor] = None,
) -> Tensor:
    """Region normalization: foreground and background each normalized with
    their own batch statistics (pooled over samples and space, per channel).

    A region that is empty across the whole batch uses the global batch
    statistics instead.
    """
    mask = _check_mask(feat, mask)
    cond = np.broadcast_to(mask.astype(bool), feat.shape)
    parts = []
    for region in (mask, 1.0 - mask):
        count = region.sum()
        if count == 0:
            mean = feat.mean(axis=(0, 2, 3), keepdims=True)
            var = T.square(feat - mean).mean(axis=(0, 2, 3), keepdims=True)
        else:
            inv_n = 1.0 / float(count)
            mean = (feat * region).sum(axis=(0, 2, 3), keepdims=True) * inv_n
            resid = T.where(np.broadcast_to(region.astype(bool), feat.shape), feat - mean, 0.0)
            var = T.square(resid).sum(axis=(0, 2, 3), keepdims=True) * inv_n
        parts.append((feat - mean) / T.sqrt(var + eps))
    out = T.where(cond, parts[0], parts[1])
    return _affine(out, scale, shift)


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------


class _AffineNorm(Module):
    def __init__(self, channels: int, affine: bool = True, eps: float = DEFAULT_EPS):
        self.eps = eps
        self.channels = channels
        if affine:
            self.scale = Parameter(np.ones((1, channels, 1, 1), T.DEFAULT_DTYPE))
            self.shift = Parameter(np.zeros((1, channels, 1, 1), T.DEFAULT_DTYPE))
        else:
            self.scale = self.shift = None


class Identity(Module):
    kind = NormKind.NONE

    def forward(self, feat, mask=None):
        return feat


class InstanceNorm(_AffineNorm):
    kind = NormKind.IN

    def forward(self, feat, mask=None):
        return instance_norm(feat, self.eps, self.scale, self.shift)


class BatchNorm(_AffineNorm):
    kind = NormKind.BN
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, affine: bool = True, eps: float = DEFAULT_EPS, momentum: float = 0.1):
        super().__init__(channels, affine, eps)
        self.momentum = momentum
        self.running_mean = np.zeros((1, channels, 1, 1), T.DEFAULT_DTYPE)
        self.running_var = np.ones((1, channels, 1, 1), T.DEFAULT_DTYPE)

    def forward(self, feat, mask=None):
        return batch_norm(feat, self.eps, self.scale, self.shift, self.running_mean,
                          self.running_var, self.momentum, self.training)


class RegionNorm(_AffineNorm):
    kind = NormKind.RN

    def forward(self, feat, mask):
        return region_norm_rn(feat, mask, self.eps, self.scale, self.shift)


class RAIN(Module):
    """No learnable affine: scale and shift come from the background statistics."""

    kind = NormKind.RAIN

    def __init__(self, channels: int, eps: float = DEFAULT_EPS, min_pixels: int = DEFAULT_MIN_PIXELS,
                 literal_variance: bool = False, literal_roles: bool = False):
        self.channels = channels
        self.eps = eps
        self.min_pixels = min_pixels
        self.literal_variance = literal_variance
        self.literal_roles = literal_roles

    def forward(self, feat, mask):
        return rain_forward(feat, mask, self.eps, self.min_pixels, self.literal_variance, self.literal_roles)


def make_norm(kind: NormKind | str, channels: int, eps: float = DEFAULT_EPS,
              min_pixels: int = DEFAULT_MIN_PIXELS, literal_variance: bool = False,
              literal_roles: bool = False) -> Module:
    kind = NormKind(kind)
    if kind is NormKind.NONE:
        return Identity()
    if kind is NormKind.IN:
        return InstanceNorm(channels, eps=eps)
    if kind is NormKind.BN:
        return BatchNorm(channels, eps=eps)
    if kind is NormKind.RN:
        return RegionNorm(channels, eps=eps)
    return RAIN(channels, eps, min_pixels, literal_variance, literal_roles)


# --------------------------------------------------------------------------
# debug dump
# --------------------------------------------------------------------------

STATS_HEADER = ("layer", "channel", "fg_mean", "fg_std", "bg_mean", "bg_std")


def region_stats_rows(layer: int, feat: np.ndarray, mask: np.ndarray, eps: float = DEFAULT_EPS) -> list[tuple]:
    """Batch-averaged per-channel region statistics of one feature map.

    Regions that are empty in a sample are skipped for that sample; a channel
    with no valid sample reports NaN.
    """
    rows = []
    m = mask.astype(bool)
    for c in range(feat.shape[1]):
        vals = {k: [] for k in STATS_HEADER[2:]}
        for s in range(feat.shape[0]):
            for region, tag in ((m[s, 0], "fg"), (~m[s, 0], "bg")):
                x = feat[s, c][region]
                if x.size:
                    vals[f"{tag}_mean"].append(float(x.mean()))
                    vals[f"{tag}_std"].append(float(np.sqrt(x.var() + eps)))
        rows.append((layer, c) + tuple(float(np.mean(v)) if v else float("nan") for v in vals.values()))
    return rows


def write_stats_csv(path, trace: Sequence[tuple[int, np.ndarray, np.ndarray]]) -> None:
    """``trace`` holds ``(layer_index, features, mask)`` per normalization slot."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STATS_HEADER)
        for layer, feat, mask in trace:
            for row in region_stats_rows(layer, feat, mask):
                w.writerow([row[0], row[1]] + [f"{v:.6f}" for v in row[2:]])
