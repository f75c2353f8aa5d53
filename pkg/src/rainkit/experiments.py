"""Desk-scale experiments shared by the scripts and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

from .config import RunConfig, preset
from .data import JitterSpec, synth_splits
from .metrics import MetricsReport, evaluate, identity_harmonizer
from .train import TrainResult, train

ORDERING_PLANS = ("RAIN-Decoder", "IN", "BN", "RN", "None")
MIN_GAP = 0.2


def desk_config(plan: str = "RAIN-Decoder", seed: int = 0) -> RunConfig:
    cfg = preset("desk")
    cfg.generator.norm_plan = plan
    cfg.train.seed = seed
    cfg.data.seed = seed
    return cfg


@dataclass
class DeskRun:
    result: TrainResult
    composite: MetricsReport
    harmonized: MetricsReport

    @property
    def psnr_gain(self) -> float:
        return self.harmonized.mean("psnr") - self.composite.mean("psnr")

    @property
    def fmse_ratio(self) -> float:
        return self.harmonized.mean("fmse") / self.composite.mean("fmse")


def desk_run(cfg: RunConfig, out_dir: Optional[Path] = None) -> DeskRun:
    """Train on the synthetic split of ``cfg.data`` and score the test half."""
    d = cfg.data
    train_set, test_set = synth_splits(d.train_size, d.test_size, cfg.generator.input_size, d.seed,
                                      jitter=JitterSpec())
    res = train(train_set, cfg, test_set, out_dir=out_dir)
    return DeskRun(res, evaluate(identity_harmonizer, test_set), evaluate(res.models.G, test_set))


@dataclass
class OrderingCheck:
    seed: int
    finals: Mapping[str, float]

    def gaps(self) -> dict[str, float]:
        f = self.finals
        return {
            "RAIN-Decoder > max(IN,BN)": f["RAIN-Decoder"] - max(f["IN"], f["BN"]),
            "min(IN,BN) > RN": min(f["IN"], f["BN"]) - f["RN"],
            "RN >= None": f["RN"] - f["None"],
        }

    def holds(self, gap: float = MIN_GAP) -> bool:
        return all(g >= gap for g in self.gaps().values())


def ordering_checks(results: Mapping[tuple[str, int], list[dict]]) -> list[OrderingCheck]:
    """Group final validation PSNRs of an ablation by seed."""
    seeds = sorted({s for _, s in results})
    return [OrderingCheck(s, {p: results[(p, s)][-1]["val_psnr"] for p in ORDERING_PLANS}) for s in seeds]


__all__ = ["ORDERING_PLANS", "MIN_GAP", "desk_config", "DeskRun", "desk_run", "OrderingCheck", "ordering_checks"]
