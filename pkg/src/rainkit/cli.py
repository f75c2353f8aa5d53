"""``rainkit`` command line: synth, compose, train, harmonize, eval, ablate, gradcheck.

Exit status: 0 success, 2 usage or configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path


EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("rainkit")


class UsageError(Exception):
    """Bad flags, unknown plan, malformed config or incompatible checkpoint."""


def _thread_limit():
    raw = os.environ.get("RAINKIT_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"RAINKIT_THREADS must be an integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(n, 1))


def _run_config(args):
    from .config import load_config, preset
    from .plans import PLAN_NAMES

    cfg = load_config(args.config, args.scale) if getattr(args, "config", None) else preset(args.scale)
    if getattr(args, "plan", None):
        cfg.generator.norm_plan = args.plan
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
        cfg.data.seed = args.seed
    if getattr(args, "epochs", None):
        cfg.train.epochs = args.epochs
    if getattr(args, "no_adv", False):
        cfg.train.adversarial = False
    if getattr(args, "no_ver", False):
        cfg.train.verification = False
    if cfg.generator.norm_plan not in PLAN_NAMES:
        raise UsageError(f"unknown norm plan {cfg.generator.norm_plan!r}; valid plans: {', '.join(PLAN_NAMES)}")
    cfg.validate()
    return cfg


def _datasets(cfg, args):
    from .data import load_dataset_dir, synth_splits

    if getattr(args, "data", None):
        train_set = load_dataset_dir(args.data)
        val_set = load_dataset_dir(args.val) if args.val else []
        if not train_set:
            raise UsageError(f"no samples found under {args.data}/composite")
        return train_set, val_set
    return synth_splits(cfg.data.train_size, cfg.data.test_size, cfg.generator.input_size, cfg.data.seed)


def _load_generator(path):
    from .checkpoint import load_with_header
    from .model import load_generator
    from .train import generator_from_training_state

    header, _ = load_with_header(path)
    if header.get("kind") == "training":
        return generator_from_training_state(path)
    return load_generator(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .data import JitterSpec, save_dataset_dir, synth_dataset

    jitter = JitterSpec.identity() if args.identity else JitterSpec()
    samples = synth_dataset(args.n, args.size, args.seed, jitter)
    save_dataset_dir(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def cmd_compose(args) -> int:
    from .data import compose, load_image, load_mask, save_image

    fg, bg, mask = load_image(args.fg), load_image(args.bg), load_mask(args.mask)
    if fg.shape != bg.shape or mask.shape[1:] != fg.shape[1:]:
        raise UsageError(f"size mismatch: fg {fg.shape[1:]}, bg {bg.shape[1:]}, mask {mask.shape[1:]}")
    save_image(args.out, compose(fg, bg, mask))
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import dump_config
    from .model import save_generator
    from .train import train

    cfg = _run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg))
    train_set, val_set = _datasets(cfg, args)
    result = train(train_set, cfg, val_set, out_dir=out, resume=args.resume)
    save_generator(out / "generator.ckpt", result.models.G)
    last = result.history[-1] if result.history else None
    if last:
        print(f"finished epoch {last['epoch']}: val_psnr={last['val_psnr']:.4f}")
    return EXIT_OK


def cmd_harmonize(args) -> int:
    from .data import load_image, load_mask, save_image
    from .model import harmonize_arrays

    G = _load_generator(args.model)
    comp, mask = load_image(args.composite), load_mask(args.mask)
    s = G.cfg.input_size
    if comp.shape[1:] != (s, s) or mask.shape[1:] != (s, s):
        raise UsageError(f"model expects {s}x{s} inputs, got composite {comp.shape[1:]} and mask {mask.shape[1:]}")
    out = harmonize_arrays(G, comp[None], mask[None])[0]
    save_image(args.out, out)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import load_dataset_dir
    from .metrics import evaluate, identity_harmonizer

    samples = load_dataset_dir(args.dataset)
    if not samples:
        raise UsageError(f"empty dataset: no PNGs under {args.dataset}/composite")
    model = identity_harmonizer if args.model == "identity" else _load_generator(args.model)
    report = evaluate(model, samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_images_csv(out / "per_image.csv")
    report.write_buckets_csv(out / "buckets.csv")
    print(report.format_table())
    return EXIT_OK


def run_ablation(plans, cfg, epochs, out: Path | None = None, seeds=(None,)):
    """Train every plan on the same data and budget. Returns {(plan, seed): history}."""
    import copy

    from .data import synth_splits
    from .train import train

    results = {}
    for seed in seeds:
        base = copy.deepcopy(cfg)
        if seed is not None:
            base.train.seed = seed
            base.data.seed = seed
        train_set, val_set = synth_splits(base.data.train_size, base.data.test_size,
                                          base.generator.input_size, base.data.seed)
        for plan in plans:
            run_cfg = copy.deepcopy(base)
            run_cfg.generator.norm_plan = plan
            run_cfg.train.epochs = epochs
            run_dir = out / f"{plan}_seed{run_cfg.train.seed}" if out is not None else None
            log.info("ablation: plan %s seed %d", plan, run_cfg.train.seed)
            results[(plan, run_cfg.train.seed)] = train(train_set, run_cfg, val_set, out_dir=run_dir).history
    return results


def cmd_ablate(args) -> int:
    from .plans import PLAN_NAMES

    plans = [p.strip() for p in args.plans.split(",") if p.strip()]
    bad = [p for p in plans if p not in PLAN_NAMES]
    if bad:
        raise UsageError(f"unknown norm plan(s) {', '.join(bad)}; valid plans: {', '.join(PLAN_NAMES)}")
    cfg = _run_config(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.train.seed]
    budget = args.budget or cfg.train.epochs
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_ablation(plans, cfg, budget, out, seeds)
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("plan", "seed", "epoch", "val_psnr"))
        for (plan, seed), hist in results.items():
            for row in hist:
                w.writerow((plan, seed, row["epoch"], f"{row['val_psnr']:.6f}"))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("plan", "seed", "final_val_psnr"))
        for (plan, seed), hist in results.items():
            w.writerow((plan, seed, f"{hist[-1]['val_psnr']:.6f}"))
    print(f"{'plan':<16}{'seed':>6}{'val_psnr':>12}")
    for (plan, seed), hist in results.items():
        print(f"{plan:<16}{seed:>6}{hist[-1]['val_psnr']:>12.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run

    results = run(args.module, args.seed or 0)
    if not results:
        raise UsageError(f"no gradient checks registered for module {args.module!r}")
    for r in results:
        print(f"{r.name:<26}{r.group:<13}{r.max_rel_error:.3e}  {'ok' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} under {TOLERANCE:g}")
    return EXIT_OK if not failed else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rainkit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp, plan=True):
        sp.add_argument("--config", help="INI file with [generator] [train] ... sections")
        sp.add_argument("--scale", choices=("desk", "paper"), default="desk")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--no-adv", action="store_true", help="drop the adversarial terms")
        sp.add_argument("--no-ver", action="store_true", help="drop the domain verification terms")
        if plan:
            sp.add_argument("--plan", help="normalization plan name, e.g. RAIN-Decoder")

    sp = sub.add_parser("synth", help="write a procedural dataset (composite/ mask/ gt/)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--identity", action="store_true", help="no foreground jitter")
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("compose", help="paste a masked foreground onto a background")
    for flag in ("--fg", "--bg", "--mask", "--out"):
        sp.add_argument(flag, required=True)
    sp.set_defaults(fn=cmd_compose)

    sp = sub.add_parser("train", help="train a generator")
    run_flags(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--data", help="dataset directory (default: synthesize from the config)")
    sp.add_argument("--val", help="validation dataset directory")
    sp.add_argument("--resume", help="training checkpoint to continue from")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("harmonize", help="harmonize one composite")
    for flag in ("--model", "--composite", "--mask", "--out"):
        sp.add_argument(flag, required=True)
    sp.set_defaults(fn=cmd_harmonize)

    sp = sub.add_parser("eval", help="score a model on a dataset directory")
    sp.add_argument("--model", required=True, help="checkpoint path, or 'identity' for raw composites")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("ablate", help="compare normalization plans under one budget")
    run_flags(sp, plan=False)
    sp.add_argument("--plans", default="RAIN-Decoder,IN,BN,RN,None")
    sp.add_argument("--budget", type=int, help="epochs per plan")
    sp.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    sp.add_argument("--module", default="all", choices=("all", "tensor", "region_norm", "model", "losses"))
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    from .checkpoint import CheckpointError
    from .plans import UnknownPlan

    try:
        with _thread_limit():
            return args.fn(args)
    except (UsageError, UnknownPlan, CheckpointError, FileNotFoundError) as exc:
        print(f"rainkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # configuration problems surface as ValueError from validate()/load_config()
        print(f"rainkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"rainkit {args.command}: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
