"""Alternating optimisation of the generator against both discriminators."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError, load_with_header, restore, save_with_header
from .config import RunConfig
from .data import CompositeSample, stack
from .losses import adv_loss_d, adv_loss_g, rec_loss, ver_loss_d, ver_loss_g
from .metrics import evaluate
from .model import DomainDiscriminator, Discriminator, Generator

log = logging.getLogger(__name__)

HISTORY_HEADER = ("epoch", "rec", "adv_g", "adv_d", "ver_g", "ver_d", "val_psnr")
LOSS_TERMS = HISTORY_HEADER[1:6]


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class StepReport:
    rec: float = 0.0
    adv_g: float = 0.0
    adv_d: float = 0.0
    ver_g: float = 0.0
    ver_d: float = 0.0

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in LOSS_TERMS)


@dataclass
class Optimizers:
    G: T.Adam
    D: T.Adam
    D_v: T.Adam


@dataclass
class Models:
    G: Generator
    D: Discriminator
    D_v: DomainDiscriminator

    def all(self):
        return (("G", self.G), ("D", self.D), ("D_v", self.D_v))


def build_models(cfg: RunConfig) -> Models:
    seed = cfg.train.seed
    # independent init streams per network, all from the run seed
    G = Generator(cfg.generator, np.random.default_rng([seed, 0]))
    D = Discriminator(cfg.discriminator, np.random.default_rng([seed, 1]))
    D_v = DomainDiscriminator(cfg.domain, np.random.default_rng([seed, 2]))
    return Models(G, D, D_v)


def build_optimizers(models: Models, cfg: RunConfig) -> Optimizers:
    t = cfg.train
    make = lambda m: T.Adam(m.parameters(), t.lr, t.beta1, t.beta2, t.adam_eps)  # noqa: E731
    return Optimizers(make(models.G), make(models.D), make(models.D_v))


def _term(name: str, fn: Callable[[], T.Tensor]) -> T.Tensor:
    try:
        value = fn()
    except FloatingPointError as exc:
        raise NonFiniteLoss(f"non-finite values while computing {name}: {exc}") from exc
    if not np.isfinite(value.data).all():
        raise NonFiniteLoss(f"loss term {name} is non-finite ({value.item()})")
    return value


def train_step(batch, models: Models, cfg: RunConfig, opt: Optimizers) -> StepReport:
    """One discriminator update followed by one generator update.

    ``batch`` is a (composite, mask, target) triple of stacked arrays or a
    sequence of CompositeSample.
    """
    if not isinstance(batch, tuple):
        batch = stack(batch)
    comp, mask, target = (np.asarray(a, dtype=T.DEFAULT_DTYPE) for a in batch)
    w, t = cfg.loss, cfg.train
    use_adv = t.adversarial and w.lambda1 > 0
    use_ver = t.verification and w.lambda2 > 0
    G, D, D_v = models.G, models.D, models.D_v
    report = StepReport()

    fake = _term("generator output", lambda: G(T.Tensor(comp), mask))

    # phase 1: discriminators, generator output detached
    d_total = None
    if use_adv:
        adv_d = _term("adv_d", lambda: adv_loss_d(D, target, fake))
        report.adv_d = adv_d.item()
        d_total = adv_d * w.lambda1
    if use_ver:
        ver_d = _term("ver_d", lambda: ver_loss_d(D_v, target, fake, mask))
        report.ver_d = ver_d.item()
        d_total = ver_d * w.lambda2 if d_total is None else d_total + ver_d * w.lambda2
    if d_total is not None:
        d_total.backward()
        if use_adv:
            opt.D.step()
        if use_ver:
            opt.D_v.step()

    # phase 2: generator
    rec = _term("rec", lambda: rec_loss(fake, target))
    report.rec = rec.item()
    g_total = rec * w.lambda3
    if use_adv:
        adv_g = _term("adv_g", lambda: adv_loss_g(D, fake))
        report.adv_g = adv_g.item()
        g_total = g_total + adv_g * w.lambda1
    if use_ver:
        ver_g = _term("ver_g", lambda: ver_loss_g(D_v, fake, mask))
        report.ver_g = ver_g.item()
        g_total = g_total + ver_g * w.lambda2
    g_total.backward()
    opt.G.step()
    # discriminator grads from the generator pass are discarded
    opt.D.zero_grad()
    opt.D_v.zero_grad()
    return report


# ---------------------------------------------------------------------------
# training state on disk
# ---------------------------------------------------------------------------


def _state(models: Models) -> dict[str, np.ndarray]:
    out = {}
    for tag, module in models.all():
        for name, p in module.named_parameters():
            out[f"{tag}.param.{name}"] = p.data
            out[f"{tag}.adam_m.{name}"] = p.m
            out[f"{tag}.adam_v.{name}"] = p.v
            out[f"{tag}.adam_step.{name}"] = np.array([p.step], np.float32)
        for name, b in module.named_buffers():
            out[f"{tag}.buffer.{name}"] = b
    return out


def save_training_state(path, models: Models, cfg: RunConfig, epoch: int) -> None:
    header = {"kind": "training", "epoch": epoch, "config": cfg.to_dict()}
    save_with_header(path, header, _state(models))


def load_training_state(path) -> tuple[Models, RunConfig, int]:
    header, tensors = load_with_header(path)
    if header.get("kind") != "training":
        raise CheckpointError(f"{path}: not a training checkpoint")
    cfg = RunConfig.from_dict(header["config"])
    models = build_models(cfg)
    for tag, module in models.all():
        for name, p in module.named_parameters():
            def get(kind, shape):
                key = f"{tag}.{kind}.{name}"
                if key not in tensors:
                    raise CheckpointError(f"missing tensor {key}")
                return restore(tensors[key], shape, key)

            p.data = get("param", p.shape).astype(p.dtype)
            p.m = get("adam_m", p.shape).astype(p.dtype)
            p.v = get("adam_v", p.shape).astype(p.dtype)
            p.step = int(get("adam_step", (1,))[0])
        for name, b in module.named_buffers():
            key = f"{tag}.buffer.{name}"
            if key not in tensors:
                raise CheckpointError(f"missing tensor {key}")
            module.set_buffer(name, restore(tensors[key], b.shape, key))
    return models, cfg, int(header["epoch"])


# ---------------------------------------------------------------------------
# epoch loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    models: Models
    config: RunConfig
    history: list[dict] = field(default_factory=list)


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Shuffle for ``epoch``: a pure function of (seed, epoch), so resuming needs no RNG state."""
    return np.random.default_rng([seed, 1000 + epoch]).permutation(n)


def write_history(path, history: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_HEADER)
        for row in history:
            w.writerow([row["epoch"]] + [f"{row[k]:.6f}" for k in HISTORY_HEADER[1:]])


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


def _resume_key(cfg: RunConfig) -> dict:
    # the epoch budget may grow between runs; everything else must match
    d = cfg.to_dict()
    d["train"] = {k: v for k, v in d["train"].items() if k not in ("epochs", "checkpoint_every")}
    return d


def train(
    train_set: Sequence[CompositeSample],
    cfg: RunConfig,
    val_set: Optional[Sequence[CompositeSample]] = None,
    out_dir=None,
    resume=None,
    epochs: Optional[int] = None,
) -> TrainResult:
    """Run the epoch loop; ``epochs`` overrides the configured count (used to stop early).

    When ``out_dir`` is given the history CSV and checkpoints
    (``last.ckpt``, ``epoch_XXX.ckpt``) are written there.
    """
    cfg.validate()
    n = len(train_set)
    if n == 0:
        raise ValueError("training set is empty")
    if n < cfg.train.batch_size:
        raise ValueError(f"training set has {n} samples, fewer than batch_size {cfg.train.batch_size}")
    history: list[dict] = []
    start = 1
    if resume is not None:
        models, saved_cfg, done = load_training_state(resume)
        if _resume_key(saved_cfg) != _resume_key(cfg):
            raise ValueError("resume checkpoint was written with a different configuration")
        start = done + 1
        hist_path = Path(resume).parent / "history.csv"
        if hist_path.exists():
            history = [r for r in read_history(hist_path) if r["epoch"] <= done]
    else:
        models = build_models(cfg)
    opt = build_optimizers(models, cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    comp, mask, target = stack(train_set)
    bs = cfg.train.batch_size
    last = epochs if epochs is not None else cfg.train.epochs
    for epoch in range(start, last + 1):
        t0 = time.perf_counter()
        models.G.train(), models.D.train(), models.D_v.train()
        order = epoch_order(cfg.train.seed, epoch, n)
        sums = np.zeros(len(LOSS_TERMS))
        steps = 0
        for i in range(0, n, bs):
            idx = order[i : i + bs]
            rep = train_step((comp[idx], mask[idx], target[idx]), models, cfg, opt)
            sums += rep.as_tuple()
            steps += 1
        row = {"epoch": epoch, **dict(zip(LOSS_TERMS, (sums / steps).tolist()))}
        row["val_psnr"] = evaluate(models.G, val_set).mean("psnr") if val_set else float("nan")
        history.append(row)
        log.info("epoch %d  %s  (%.1fs)", epoch,
                 " ".join(f"{k}={row[k]:.4f}" for k in HISTORY_HEADER[1:]), time.perf_counter() - t0)
        if out is not None:
            write_history(out / "history.csv", history)
            save_training_state(out / "last.ckpt", models, cfg, epoch)
            if cfg.train.checkpoint_every and epoch % cfg.train.checkpoint_every == 0:
                save_training_state(out / f"epoch_{epoch:03d}.ckpt", models, cfg, epoch)
    return TrainResult(models, cfg, history)


def generator_from_training_state(path) -> Generator:
    models, _, _ = load_training_state(path)
    return models.G


__all__ = [
    "HISTORY_HEADER", "NonFiniteLoss", "StepReport", "Models", "Optimizers", "TrainResult",
    "build_models", "build_optimizers", "train_step", "train", "save_training_state",
    "load_training_state", "write_history", "read_history", "epoch_order", "generator_from_training_state",
]
