"""Composites, the procedural harmonization dataset and PNG I/O.

Arrays are channel-first. Images live in [-1, 1] inside the package and in
uint8 [0, 255] on disk; masks are {0, 1} float arrays with one channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------


def _check_binary(mask: np.ndarray) -> None:
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be binary (values 0 and 1 only)")


def compose(fg: np.ndarray, bg: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Paste ``fg`` over ``bg`` where ``mask`` is 1: M*fg + (1-M)*bg, as a select."""
    fg, bg, mask = np.asarray(fg), np.asarray(bg), np.asarray(mask)
    if fg.shape != bg.shape:
        raise ValueError(f"foreground {fg.shape} and background {bg.shape} differ in shape")
    if mask.shape[-2:] != fg.shape[-2:]:
        raise ValueError(f"mask {mask.shape} does not cover image {fg.shape}")
    _check_binary(mask)
    return np.where(np.broadcast_to(mask.astype(bool), fg.shape), fg, bg)


# ---------------------------------------------------------------------------
# appearance jitter
# ---------------------------------------------------------------------------


def _mobius(x, gain):
    # bijection of (0, 1) onto itself; gain > 1 brightens
    return x * gain / (1.0 + x * (gain - 1.0))


def _s_curve(x, c):
    xc = x**c
    return xc / (xc + (1.0 - x) ** c)


@dataclass(frozen=True)
class JitterParams:
    brightness: float = 1.0
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    contrast: float = 1.0
    gamma: float = 1.0

    def apply(self, img: np.ndarray) -> np.ndarray:
        """Transform a (3, H, W) image in [0, 1]. Every stage is a bijection of (0, 1)."""
        out = np.clip(img.astype(np.float64), 1e-6, 1 - 1e-6)
        out = _mobius(out, self.brightness)
        out = _mobius(out, np.asarray(self.color).reshape(3, 1, 1))
        out = _s_curve(out, self.contrast)
        return out**self.gamma

    def invert(self, img: np.ndarray) -> np.ndarray:
        out = np.clip(img.astype(np.float64), 1e-12, 1 - 1e-12) ** (1.0 / self.gamma)
        out = _s_curve(out, 1.0 / self.contrast)
        out = _mobius(out, 1.0 / np.asarray(self.color).reshape(3, 1, 1))
        return _mobius(out, 1.0 / self.brightness)

    @property
    def is_identity(self) -> bool:
        return self == JitterParams()


@dataclass(frozen=True)
class JitterSpec:
    """Ranges (lo, hi) for each foreground appearance factor, sampled log-uniformly."""

    brightness: tuple[float, float] = (0.5, 2.0)
    color: tuple[float, float] = (0.75, 1.33)
    contrast: tuple[float, float] = (0.7, 1.4)
    gamma: tuple[float, float] = (0.7, 1.4)

    @staticmethod
    def identity() -> "JitterSpec":
        return JitterSpec((1, 1), (1, 1), (1, 1), (1, 1))

    def sample(self, rng: np.random.Generator) -> JitterParams:
        def draw(lo_hi, size=None):
            lo, hi = lo_hi
            if lo <= 0 or hi < lo:
                raise ValueError(f"jitter range {lo_hi} must satisfy 0 < lo <= hi")
            return np.exp(rng.uniform(math.log(lo), math.log(hi), size))

        return JitterParams(
            brightness=float(draw(self.brightness)),
            color=tuple(float(c) for c in draw(self.color, 3)),
            contrast=float(draw(self.contrast)),
            gamma=float(draw(self.gamma)),
        )


# ---------------------------------------------------------------------------
# samples and synthesis
# ---------------------------------------------------------------------------


@dataclass
class CompositeSample:
    composite: np.ndarray  # (3, H, W) in [-1, 1]
    mask: np.ndarray  # (1, H, W) in {0, 1}
    target: np.ndarray  # (3, H, W) in [-1, 1]
    id: str = ""
    jitter: JitterParams = field(default_factory=JitterParams)

    @property
    def foreground_ratio(self) -> float:
        return float(self.mask.mean())


def to_unit(u8: np.ndarray) -> np.ndarray:
    return (u8.astype(np.float32) / 127.5 - 1.0).astype(np.float32)


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round((np.asarray(x, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def _content(rng: np.random.Generator, size: int) -> np.ndarray:
    """Procedural scene in [0, 1]: colored gradient, random shapes, fine texture."""
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    c0, c1 = rng.uniform(0.15, 0.85, (2, 3, 1, 1))
    angle = rng.uniform(0, 2 * np.pi)
    t = 0.5 + 0.5 * (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)) * 1.4
    img = c0 + (c1 - c0) * np.clip(t, 0, 1)[None]
    for _ in range(rng.integers(3, 8)):
        color = rng.uniform(0.05, 0.95, (3, 1, 1))
        cy, cx = rng.uniform(0, 1, 2)
        if rng.random() < 0.5:
            r = rng.uniform(0.05, 0.25)
            shape = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        else:
            hy, hx = rng.uniform(0.05, 0.25, 2)
            shape = (np.abs(yy - cy) < hy) & (np.abs(xx - cx) < hx)
        img = np.where(shape[None], 0.3 * img + 0.7 * color, img)
    img = img + rng.normal(0, 0.03, img.shape)
    return np.clip(img, 0.02, 0.98)


def _ellipse(yy, xx, cy, cx, a, b, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def random_mask(rng: np.random.Generator, size: int, low: float = 0.01, high: float = 0.5) -> np.ndarray:
    """Connected blob: a main ellipse with up to two overlapping lobes.

    The target area is log-uniform in [low, high] of the image so that small
    and large foregrounds are both common.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    target = math.exp(rng.uniform(math.log(low), math.log(high))) * size * size
    for _ in range(20):
        aspect = rng.uniform(0.5, 2.0)
        lobes = rng.integers(0, 3)
        area = target / (1 + 0.3 * lobes)
        a = math.sqrt(area * aspect / math.pi)
        b = area / (math.pi * a)
        cy, cx = rng.uniform(0.3, 0.7, 2) * size
        theta = rng.uniform(0, np.pi)
        m = _ellipse(yy, xx, cy, cx, a, b, theta)
        for _ in range(lobes):
            # lobe centered on the main ellipse boundary keeps the blob connected
            phi = rng.uniform(0, 2 * np.pi)
            ly = cy + b * math.sin(phi) * 0.8
            lx = cx + a * math.cos(phi) * 0.8
            r = math.sqrt(0.3 * area / math.pi)
            m |= _ellipse(yy, xx, ly, lx, r, r * rng.uniform(0.6, 1.0), rng.uniform(0, np.pi))
        ratio = m.mean()
        if 2 <= m.sum() and ratio < 1 and not (~m).sum() < 2:
            return m.astype(np.float32)[None]
    raise RuntimeError("failed to draw a valid mask")


def make_sample(rng: np.random.Generator, size: int, jitter: JitterSpec, sample_id: str = "") -> CompositeSample:
    """Ground truth shares one illumination; the composite re-lights the foreground only."""
    scene = _content(rng, size)
    illumination = JitterSpec(brightness=(0.6, 1.6), color=(0.8, 1.25), contrast=(0.8, 1.25), gamma=(0.8, 1.25))
    gt01 = illumination.sample(rng).apply(scene)
    mask = random_mask(rng, size)
    params = jitter.sample(rng)
    fg01 = gt01 if params.is_identity else params.apply(gt01)
    gt8 = np.round(gt01 * 255).astype(np.uint8)
    fg8 = np.round(fg01 * 255).astype(np.uint8)
    comp8 = compose(fg8, gt8, mask)
    return CompositeSample(to_unit(comp8), mask, to_unit(gt8), sample_id, params)


def synth_dataset(n: int, size: int = 64, seed: int = 0, jitter: JitterSpec | None = None,
                  prefix: str = "s") -> list[CompositeSample]:
    if n < 1:
        raise ValueError("n must be >= 1")
    jitter = jitter if jitter is not None else JitterSpec()
    # one child stream per sample: any subset is reproducible on its own
    streams = np.random.SeedSequence(seed).spawn(n)
    return [make_sample(np.random.default_rng(s), size, jitter, f"{prefix}{i:05d}") for i, s in enumerate(streams)]


def synth_splits(train: int, test: int, size: int = 64, seed: int = 0, jitter: JitterSpec | None = None):
    """Disjoint train/test sets drawn from independent streams of one seed."""
    return (synth_dataset(train, size, seed * 2 + 0, jitter, "train"),
            synth_dataset(test, size, seed * 2 + 1, jitter, "test"))


def stack(samples: Sequence[CompositeSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not samples:
        raise ValueError("empty sample list")
    return (np.stack([s.composite for s in samples]), np.stack([s.mask for s in samples]),
            np.stack([s.target for s in samples]))


# ---------------------------------------------------------------------------
# image files
# ---------------------------------------------------------------------------

_EIGHT_BIT_MODES = {"L", "RGB", "RGBA", "P", "1", "LA"}


def _open(path) -> Image.Image:
    img = Image.open(path)
    if img.mode not in _EIGHT_BIT_MODES:
        raise ValueError(f"{path}: unsupported image mode {img.mode!r} (8-bit images only)")
    return img


def load_image(path) -> np.ndarray:
    """8-bit RGB file -> (3, H, W) float32 in [-1, 1]."""
    img = _open(path).convert("RGB")
    return to_unit(np.asarray(img).transpose(2, 0, 1))


def save_image(path, image: np.ndarray) -> None:
    arr = to_uint8(image)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"save_image expects (3, H, W), got {arr.shape}")
    Image.fromarray(arr.transpose(1, 2, 0), "RGB").save(path)


def load_mask(path) -> np.ndarray:
    """Grayscale file -> (1, H, W) float32; values above 127 are foreground."""
    img = _open(path).convert("L")
    return (np.asarray(img) > 127).astype(np.float32)[None]


def save_mask(path, mask: np.ndarray) -> None:
    m = (np.asarray(mask).reshape(mask.shape[-2:]) > 0.5).astype(np.uint8) * 255
    Image.fromarray(m, "L").save(path)


def save_dataset_dir(samples: Iterable[CompositeSample], root) -> Path:
    """Write ``composite/``, ``mask/`` and ``gt/`` folders of matching PNG names."""
    root = Path(root)
    for sub in ("composite", "mask", "gt"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for s in samples:
        save_image(root / "composite" / f"{s.id}.png", s.composite)
        save_mask(root / "mask" / f"{s.id}.png", s.mask)
        save_image(root / "gt" / f"{s.id}.png", s.target)
    return root


def load_dataset_dir(root) -> list[CompositeSample]:
    root = Path(root)
    names = sorted(p.name for p in (root / "composite").glob("*.png")) if (root / "composite").is_dir() else []
    samples = []
    for name in names:
        comp = load_image(root / "composite" / name)
        mask = load_mask(root / "mask" / name)
        gt = load_image(root / "gt" / name)
        if comp.shape != gt.shape or mask.shape[1:] != comp.shape[1:]:
            raise ValueError(f"{name}: composite, mask and gt sizes differ")
        samples.append(CompositeSample(comp, mask, gt, Path(name).stem))
    return samples
