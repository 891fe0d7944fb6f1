"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import UnidentifiedImageError

from . import tensor as T
from .evaluate import erf_probe, inpaint_metrics
from .experiments import ExperimentConfig, ModelCache, experiment_resolution_transfer, experiment_wide_masks, held_out
from .ffc import FfcConfig, FfcLayer
from .imageio import from_uint8, read_pgm, read_png, write_pgm, write_png
from .maskgen import POLICIES, sample_training_mask
from .networks import generator_forward, stack_input
from .nn import Conv2d, Module
from .training import (
    CheckpointError,
    TrainConfig,
    Trainer,
    TrainingError,
    checkpoint_dir,
    config_from_flat,
    config_to_text,
    flatten_config,
    load_config,
    save_checkpoint,
    trainer_from_checkpoint,
)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("lamalite")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- train


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    """One --key flag per TrainConfig field (nested keys keep their dots)."""
    for key, default in flatten_config(TrainConfig()).items():
        p.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg:{key}", metavar="VALUE", help=f"default {default}")


def _config_from_args(args) -> TrainConfig:
    flat = flatten_config(load_config(args.config)) if args.config else {}
    for name, value in vars(args).items():
        if name.startswith("cfg:") and value is not None:
            flat[name[4:]] = value
    return config_from_flat(flat)


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = checkpoint_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_to_text(cfg))
    tr = Trainer(cfg)
    tr.run(cfg.iterations, log_path=out / "train_log.csv", checkpoint_dir=out)
    save_checkpoint(tr, out / "final.ckpt")
    print(f"trained {tr.step} iterations; checkpoint {out / 'final.ckpt'}")
    return EXIT_OK


# ---------------------------------------------------------------- inpaint / eval


def _load_pair(image: str, mask: str) -> tuple:
    x = from_uint8(read_png(image))
    m = read_pgm(mask).astype(np.float64)
    if m.shape != x.shape[1:]:
        raise UsageError(f"mask {m.shape} and image {x.shape[1:]} differ in size")
    return x[None], m[None, None]


def cmd_inpaint(args) -> int:
    tr = trainer_from_checkpoint(args.ckpt)
    x, m = _load_pair(args.image, args.mask)
    s = tr.cfg.generator.stride_product
    if x.shape[2] % s or x.shape[3] % s:
        raise UsageError(f"image size {x.shape[2:]} not divisible by {s}")
    out = tr.inpaint(x, m)[0]
    # known pixels are copied as the original 8-bit values, so they round-trip exactly
    raw = read_png(args.image)
    result = np.where(m[0] > 0, raw, np.clip(np.round(out * 255), 0, 255).astype(np.uint8))
    write_png(args.out, result.astype(np.uint8))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    tr = trainer_from_checkpoint(args.ckpt)
    if args.image:
        if not args.mask:
            raise UsageError("--image needs --mask")
        x, m = _load_pair(args.image, args.mask)
        sets = {x.shape[-1]: (x, m)}
    else:
        sizes = args.sizes or [tr.cfg.image_size]
        ecfg = ExperimentConfig(train=tr.cfg, eval_count=args.count, eval_seed=args.seed)
        sets = {s: held_out(ecfg, s) for s in sizes}
    rows = []
    for size, (x, m) in sorted(sets.items()):
        rep = inpaint_metrics(x, tr.inpaint(x, m), m)
        rows.append(dict(size=size, l1=rep.l1, l2=rep.l2, psnr=rep.psnr, n_missing=rep.n_missing))
        print(f"size {size}: L1 {rep.l1:.6f}  L2 {rep.l2:.6f}  PSNR {rep.psnr:.2f} dB")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


# ---------------------------------------------------------------- maskgen


def cmd_maskgen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    stats = []
    for i in range(args.count):
        m = sample_training_mask(rng, args.size, args.size, args.policy)
        write_pgm(out / f"mask_{i:05d}.pgm", m.data)
        stats.append(dict(index=i, kind=m.kind, coverage=m.coverage, mean_width=m.mean_width))
    with open(out / "masks.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["index", "kind", "coverage", "mean_width"])
        w.writeheader()
        for r in stats:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    cov_hist, cov_edges = np.histogram([r["coverage"] for r in stats], bins=10, range=(0.0, 1.0))
    top = max([r["mean_width"] for r in stats] + [1.0])
    width_hist, width_edges = np.histogram([r["mean_width"] for r in stats], bins=10, range=(0.0, top))
    with open(out / "histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "bin_lo", "bin_hi", "count"])
        for name, hist, edges in (("coverage", cov_hist, cov_edges), ("mean_width", width_hist, width_edges)):
            for c, lo, hi in zip(hist, edges[:-1], edges[1:]):
                w.writerow([name, f"{lo:.6f}", f"{hi:.6f}", int(c)])
    print(f"wrote {args.count} masks to {out}; mean coverage {np.mean([r['coverage'] for r in stats]):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- erf

DEMOS = ("conv3x3", "ffc")


def _demo_model(name: str, rng):
    if name == "conv3x3":
        return Conv2d(3, 1, 3, rng, padding="zero")
    layer = FfcLayer(FfcConfig(4, 4), rng).eval()
    lift = Conv2d(3, 4, 1, rng, bias=False)
    return lambda x: layer(lift(x))


class _Unmasked(Module):
    """Generator logits with an all-known mask, so the probe sees only image channels."""

    def __init__(self, gen, size: int):
        self.gen = gen
        self.mask = np.ones((1, 1, size, size))

    def forward(self, x):
        return generator_forward(stack_input(x, self.mask), self.gen, logits=True)


def cmd_erf(args) -> int:
    rng = np.random.default_rng(args.seed)
    size = args.size
    if args.ckpt:
        model = _Unmasked(trainer_from_checkpoint(args.ckpt).gen, size)
    else:
        model = _demo_model(args.demo, rng)
    pos = tuple(args.position) if args.position else (size // 2, size // 2)
    res = erf_probe(model, rng.random((1, 3, size, size)), pos)
    if args.out:
        peak = res.sensitivity.max()
        img = res.sensitivity / peak if peak > 0 else res.sensitivity
        write_png(args.out, np.repeat(img[None], 3, axis=0))
    print(f"footprint {res.footprint} pixels ({res.fraction:.4f} of {size}x{size}) at {pos}")
    return EXIT_OK


# ---------------------------------------------------------------- experiment


def cmd_experiment(args) -> int:
    overrides = any(k.startswith("cfg:") and v is not None for k, v in vars(args).items())
    base = _config_from_args(args) if args.config or overrides else ExperimentConfig().train
    cfg = ExperimentConfig(
        train=base,
        seeds=tuple(args.seeds),
        eval_count=args.eval_count,
        eval_sizes=tuple(args.sizes),
        budget_seconds=args.budget,
    )
    out = Path(args.out)
    cache = ModelCache(Path(args.cache) if args.cache else out / "models")
    status = EXIT_OK
    if args.study in ("wide-masks", "all"):
        rep = experiment_wide_masks(cfg, cache, out)
        for r in rep.rows:
            print(f"seed {r['seed']} {r['model']:8s} params {r['params']:8d} L1 {r['l1']:.5f} (copy-input {r['baseline_l1']:.5f})")
        print(f"fourier wins {rep.wins}/{rep.seeds_run}" + (" [PARTIAL]" if rep.partial else ""))
    if args.study in ("resolution-transfer", "all"):
        rep = experiment_resolution_transfer(cfg, cache, out)
        for (seed, model), ratio in sorted(rep.ratios.items()):
            print(f"seed {seed} {model:8s} L1({max(cfg.eval_sizes)})/L1({cfg.train.image_size}) = {ratio:.4f}")
        print(f"fourier smaller degradation {rep.wins}/{rep.seeds_run}" + (" [PARTIAL]" if rep.partial else ""))
        for e in rep.errors:
            print(f"error: {e}", file=sys.stderr)
        if rep.errors:
            status = EXIT_NUMERIC
    return status


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lamalite", description="Fourier-convolution inpainting at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    t = sub.add_parser("train", help="train from a key=value config file")
    t.add_argument("--config", help="key = value file; flags below override it")
    t.add_argument("--out", default="runs/train", help="output directory (env LAMALITE_CHECKPOINT_DIR overrides)")
    _add_config_flags(t)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("inpaint", help="fill the holes of one image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True, help="8-bit RGB PNG")
    i.add_argument("--mask", required=True, help="PGM, 255 known / 0 missing")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_inpaint)

    m = sub.add_parser("maskgen", help="sample a mask dataset")
    m.add_argument("--policy", choices=POLICIES, default="large")
    m.add_argument("--count", type=int, default=100)
    m.add_argument("--size", type=int, default=64)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", default="masks")
    m.set_defaults(func=cmd_maskgen)

    e = sub.add_parser("erf", help="input-gradient footprint of one output pixel")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--demo", choices=DEMOS)
    src.add_argument("--ckpt")
    e.add_argument("--size", type=int, default=32)
    e.add_argument("--position", type=int, nargs=2, metavar=("ROW", "COL"))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="sensitivity map PNG")
    e.set_defaults(func=cmd_erf)

    v = sub.add_parser("eval", help="in-hole L1/L2/PSNR of a checkpoint")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--image")
    v.add_argument("--mask")
    v.add_argument("--sizes", type=int, nargs="+")
    v.add_argument("--count", type=int, default=16)
    v.add_argument("--seed", type=int, default=999)
    v.add_argument("--csv")
    v.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="fourier vs regular comparisons")
    x.add_argument("study", choices=("wide-masks", "resolution-transfer", "all"))
    x.add_argument("--out", default="runs/experiment")
    x.add_argument("--cache", help="checkpoint cache directory (default OUT/models)")
    x.add_argument("--seeds", type=int, nargs="+", default=list(ExperimentConfig().seeds))
    x.add_argument("--eval-count", type=int, default=ExperimentConfig().eval_count)
    x.add_argument("--sizes", type=int, nargs="+", default=list(ExperimentConfig().eval_sizes))
    x.add_argument("--budget", type=float, default=0.0, help="seconds; 0 means unlimited")
    x.add_argument("--config")
    _add_config_flags(x)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CheckpointError, UnidentifiedImageError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (T.NonFiniteError, TrainingError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
