"""Harmonization metrics on the 8-bit scale, with foreground-ratio buckets.

Every metric takes channel-first arrays already on [0, 255]; ``evaluate``
handles conversion from the model's [-1, 1] outputs (rounded to 8 bits, so
reported numbers match the PNGs a user would save).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import CompositeSample, to_uint8

MAX_VALUE = 255.0
PSNR_CAP = 100.0
LUMA = (0.299, 0.587, 0.114)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = (0.01 * MAX_VALUE) ** 2
C2 = (0.03 * MAX_VALUE) ** 2

BUCKETS = (("0-5%", 0.0, 0.05), ("5-15%", 0.05, 0.15), ("15-30%", 0.15, 0.30), ("30-100%", 0.30, 1.0))
IMAGE_HEADER = ("id", "fg_ratio", "mse", "fmse", "psnr", "fl1", "ssim")
METRIC_NAMES = ("mse", "fmse", "psnr", "fl1", "ssim")


def _pair(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _fg(a: np.ndarray, mask) -> tuple[np.ndarray, int]:
    m = np.asarray(mask).reshape(a.shape[-2:]).astype(bool)
    count = int(m.sum())
    if count == 0:
        raise ValueError("empty foreground mask")
    return np.broadcast_to(m, a.shape), count * (a.shape[0] if a.ndim == 3 else 1)


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def fmse(a, b, mask) -> float:
    a, b = _pair(a, b)
    sel, n = _fg(a, mask)
    return float(np.sum(np.where(sel, (a - b) ** 2, 0.0)) / n)


def fl1(a, b, mask) -> float:
    a, b = _pair(a, b)
    sel, n = _fg(a, mask)
    return float(np.sum(np.where(sel, np.abs(a - b), 0.0)) / n)


def psnr_from_mse(err: float) -> float:
    if err <= 0:
        return PSNR_CAP
    return min(10.0 * math.log10(MAX_VALUE**2 / err), PSNR_CAP)


def psnr(a, b) -> float:
    return psnr_from_mse(mse(a, b))


def luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return np.tensordot(np.asarray(LUMA), img, axes=(0, 0))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable weighted window sums over fully contained windows
    rows = sliding_window_view(img, len(g), axis=1) @ g
    return sliding_window_view(rows, len(g), axis=0) @ g


def ssim(a, b) -> float:
    a, b = _pair(a, b)
    x, y = luminance(a), luminance(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    g = gaussian_window()
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + C1) * (2 * sxy + C2)
    den = (mx * mx + my * my + C1) * (sxx + syy + C2)
    return float(np.mean(num / den))


def bucket_of(ratio: float) -> str:
    for name, lo, hi in BUCKETS:
        if lo <= ratio < hi or (hi == 1.0 and ratio == 1.0):
            return name
    raise ValueError(f"foreground ratio {ratio} outside [0, 1]")


@dataclass
class ImageMetrics:
    id: str
    fg_ratio: float
    mse: float
    fmse: float
    psnr: float
    fl1: float
    ssim: float

    def row(self) -> list[str]:
        return [self.id] + [f"{getattr(self, k):.6f}" for k in IMAGE_HEADER[1:]]


def image_metrics(output8: np.ndarray, target8: np.ndarray, mask: np.ndarray, sample_id: str = "") -> ImageMetrics:
    err = mse(output8, target8)
    return ImageMetrics(
        id=sample_id,
        fg_ratio=float(np.asarray(mask).mean()),
        mse=err,
        fmse=fmse(output8, target8, mask),
        psnr=psnr_from_mse(err),
        fl1=fl1(output8, target8, mask),
        ssim=ssim(output8, target8),
    )


@dataclass
class MetricsReport:
    rows: list[ImageMetrics] = field(default_factory=list)

    def bucket_rows(self) -> dict[str, list[ImageMetrics]]:
        out: dict[str, list[ImageMetrics]] = {name: [] for name, _, _ in BUCKETS}
        for r in self.rows:
            out[bucket_of(r.fg_ratio)].append(r)
        return out

    @staticmethod
    def _mean(rows: Sequence[ImageMetrics]) -> dict[str, float]:
        if not rows:
            return {k: float("nan") for k in METRIC_NAMES}
        return {k: float(np.mean([getattr(r, k) for r in rows])) for k in METRIC_NAMES}

    def aggregates(self) -> dict[str, dict[str, float]]:
        table = {name: self._mean(rows) for name, rows in self.bucket_rows().items()}
        table["average"] = self._mean(self.rows)
        for name, rows in self.bucket_rows().items():
            table[name]["count"] = len(rows)
        table["average"]["count"] = len(self.rows)
        return table

    def mean(self, metric: str) -> float:
        return self._mean(self.rows)[metric]

    def write_images_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(IMAGE_HEADER)
            w.writerows(r.row() for r in self.rows)

    def write_buckets_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("bucket", "count") + METRIC_NAMES)
            for name, agg in self.aggregates().items():
                w.writerow([name, agg["count"]] + [f"{agg[k]:.6f}" for k in METRIC_NAMES])

    def format_table(self) -> str:
        lines = [f"{'bucket':<9}{'n':>5}" + "".join(f"{k:>11}" for k in METRIC_NAMES)]
        for name, agg in self.aggregates().items():
            lines.append(f"{name:<9}{agg['count']:>5}" + "".join(f"{agg[k]:>11.4f}" for k in METRIC_NAMES))
        return "\n".join(lines)


Harmonizer = Callable[[np.ndarray, np.ndarray], np.ndarray]


def identity_harmonizer(composite: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return composite


def evaluate(model, samples: Sequence[CompositeSample], batch_size: int = 16) -> MetricsReport:
    """Harmonize every sample and score it against its ground truth.

    ``model`` is a Generator (switched to eval mode for the call) or any
    callable mapping batched (composite, mask) arrays to outputs in [-1, 1].
    """
    from .model import Generator, harmonize_arrays

    if isinstance(model, Generator):
        fn = lambda c, m: harmonize_arrays(model, c, m, batch_size)  # noqa: E731
    else:
        fn = model
    report = MetricsReport()
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        comp = np.stack([s.composite for s in chunk])
        mask = np.stack([s.mask for s in chunk])
        out = np.asarray(fn(comp, mask))
        for s, o in zip(chunk, out):
            report.rows.append(
                image_metrics(to_uint8(o).astype(np.float64), to_uint8(s.target).astype(np.float64), s.mask, s.id)
            )
    return report
