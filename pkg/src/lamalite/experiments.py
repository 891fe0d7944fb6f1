"""Desk-scale comparisons of Fourier vs regular-conv generators.

Both studies share one set of trained model pairs (one pair per seed):
``experiment_wide_masks`` scores in-hole L1 on held-out wide masks at the
training resolution, ``experiment_resolution_transfer`` re-evaluates the
same models at larger sizes.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .evaluate import EvalReport, inpaint_metrics
from .imageio import write_png
from .maskgen import sample_test_mask
from .networks import GeneratorConfig
from .textures import synth_dataset
from .training import TrainConfig, Trainer, flatten_config, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

MODELS = ("fourier", "regular")


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig = TrainConfig(iterations=600)
    seeds: tuple = (0, 1, 2, 3, 4)
    eval_count: int = 32
    eval_seed: int = 999
    eval_sizes: tuple = (32, 64, 96)
    eval_batch: int = 8
    budget_seconds: float = 0.0  # 0 disables the budget
    n_images: int = 4  # rows in each side-by-side result image


def matched_regular(gen: GeneratorConfig) -> GeneratorConfig:
    """Regular-conv generator whose trunk width brings its size closest to ``gen``'s."""
    target = dataclasses.replace(gen, ffc=True).parameter_count()
    best = None
    top = 2 * gen.widths[-1]
    for width in range(1, top + 1):
        cand = dataclasses.replace(gen, ffc=False, trunk_width=width)
        gap = abs(cand.parameter_count() - target)
        if best is None or gap < best[0]:
            best = (gap, cand)
    return best[1]


def pair_configs(cfg: ExperimentConfig, seed: int) -> dict:
    base = dataclasses.replace(cfg.train, seed=seed, data_seed=1000 + seed)
    fourier = dataclasses.replace(base, generator=dataclasses.replace(base.generator, ffc=True))
    regular = dataclasses.replace(base, generator=matched_regular(fourier.generator))
    return {"fourier": fourier, "regular": regular}


class ModelCache:
    """Trains each (seed, model) once; optionally persists checkpoints in ``root``."""

    def __init__(self, root: Optional[Path] = None):
        self.root = Path(root) if root is not None else None
        self._mem: dict = {}
        self.train_seconds = 0.0

    def _path(self, cfg: TrainConfig) -> Optional[Path]:
        if self.root is None:
            return None
        text = "\n".join(f"{k}={v}" for k, v in sorted(flatten_config(cfg).items()))
        return self.root / f"model-{hashlib.sha256(text.encode()).hexdigest()[:16]}.ckpt"

    def get(self, cfg: TrainConfig) -> Trainer:
        key = tuple(sorted(flatten_config(cfg).items()))
        if key in self._mem:
            return self._mem[key]
        tr = Trainer(cfg)
        path = self._path(cfg)
        if path is not None and path.exists():
            load_checkpoint(tr, path)
            if tr.step != cfg.iterations or flatten_config(tr.cfg) != flatten_config(cfg):
                tr = Trainer(cfg)
        if tr.step != cfg.iterations:
            t0 = time.perf_counter()
            tr.run(cfg.iterations)
            self.train_seconds += time.perf_counter() - t0
            if path is not None:
                save_checkpoint(tr, path)
        self._mem[key] = tr
        return tr


def held_out(cfg: ExperimentConfig, size: int) -> tuple:
    """Held-out textures and wide masks at ``size``; identical for every model and seed."""
    rng = np.random.default_rng([cfg.eval_seed, size])
    x, _ = synth_dataset(rng, cfg.train.texture, cfg.eval_count, size, cfg.train.generator.stride_product)
    m = np.stack([sample_test_mask(rng, size, size, "wide").data for _ in range(cfg.eval_count)])
    return x, m[:, None].astype(np.float64)


def predict(tr: Trainer, x: np.ndarray, m: np.ndarray, batch: int) -> np.ndarray:
    return np.concatenate([tr.inpaint(x[i : i + batch], m[i : i + batch]) for i in range(0, len(x), batch)])


def _side_by_side(x, m, outputs: dict, n: int) -> np.ndarray:
    """Rows of [masked input | model outputs... | ground truth] with 2 px white gutters."""
    cols = [x * m] + list(outputs.values()) + [x]
    rows = []
    for i in range(min(n, len(x))):
        tiles = []
        for c in cols:
            tiles += [c[i], np.ones((3, x.shape[2], 2))]
        rows += [np.concatenate(tiles[:-1], axis=2), np.ones((3, 2, sum(t.shape[2] for t in tiles[:-1])))]
    return np.concatenate(rows[:-1], axis=1)


@dataclass
class WideMaskReport:
    rows: list  # dicts: seed, model, params, l1, baseline_l1
    wins: int
    seeds_run: int
    partial: bool
    images: list = field(default_factory=list)

    FIELDS = ("seed", "model", "params", "l1", "l2", "psnr", "baseline_l1")

    def l1(self, seed: int, model: str) -> float:
        return next(r["l1"] for r in self.rows if r["seed"] == seed and r["model"] == model)


@dataclass
class TransferReport:
    rows: list  # dicts: seed, model, size, l1
    ratios: dict  # (seed, model) -> L1(max size) / L1(train size)
    wins: int
    seeds_run: int
    partial: bool
    errors: list = field(default_factory=list)

    FIELDS = ("seed", "model", "size", "l1", "l2", "psnr", "n_missing")


def _write_csv(path: Path, fields, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _over_budget(cfg: ExperimentConfig, start: float) -> bool:
    return bool(cfg.budget_seconds) and time.perf_counter() - start > cfg.budget_seconds


def experiment_wide_masks(cfg: ExperimentConfig, cache: Optional[ModelCache] = None, out_dir=None) -> WideMaskReport:
    cache = cache or ModelCache()
    size = cfg.train.image_size
    x, m = held_out(cfg, size)
    baseline = inpaint_metrics(x, x * m, m).l1
    rows, images, wins, done, partial = [], [], 0, 0, False
    start = time.perf_counter()
    for seed in cfg.seeds:
        if _over_budget(cfg, start):
            partial = True
            log.warning("budget exhausted after %d seeds; report is partial", done)
            break
        outs, l1 = {}, {}
        for name, tcfg in pair_configs(cfg, seed).items():
            tr = cache.get(tcfg)
            outs[name] = predict(tr, x, m, cfg.eval_batch)
            rep = inpaint_metrics(x, outs[name], m)
            l1[name] = rep.l1
            rows.append(
                dict(seed=seed, model=name, params=tr.gen.num_parameters(), l1=rep.l1, l2=rep.l2, psnr=rep.psnr, baseline_l1=baseline)
            )
        wins += l1["fourier"] < l1["regular"]
        done += 1
        grid = _side_by_side(x, m, outs, cfg.n_images)
        images.append(grid)
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            write_png(Path(out_dir) / f"wide_seed{seed}.png", grid)
        log.info("seed %d: fourier %.4f regular %.4f", seed, l1["fourier"], l1["regular"])
    report = WideMaskReport(rows, wins, done, partial or done < len(cfg.seeds), images)
    if out_dir is not None:
        _write_csv(Path(out_dir) / "wide_masks.csv", WideMaskReport.FIELDS, rows)
    return report


def experiment_resolution_transfer(cfg: ExperimentConfig, cache: Optional[ModelCache] = None, out_dir=None) -> TransferReport:
    cache = cache or ModelCache()
    stride = cfg.train.generator.stride_product
    bad = [s for s in cfg.eval_sizes if s % stride]
    if bad:
        raise ValueError(f"evaluation sizes {bad} not divisible by the stride product {stride}")
    sets = {s: held_out(cfg, s) for s in cfg.eval_sizes}
    lo, hi = cfg.train.image_size, max(cfg.eval_sizes)
    if lo not in sets:
        sets[lo] = held_out(cfg, lo)
    rows, ratios, errors, wins, done, partial = [], {}, [], 0, 0, False
    start = time.perf_counter()
    for seed in cfg.seeds:
        if _over_budget(cfg, start):
            partial = True
            break
        per: dict = {}
        for name, tcfg in pair_configs(cfg, seed).items():
            tr = cache.get(tcfg)
            for s in sorted(sets):
                x, m = sets[s]
                try:
                    out = predict(tr, x, m, cfg.eval_batch)
                except Exception as exc:  # recorded, the fully-convolutional contract is under test
                    errors.append(f"seed {seed} {name} size {s}: {exc}")
                    continue
                rep = inpaint_metrics(x, out, m)
                per[(name, s)] = rep
                rows.append(dict(seed=seed, model=name, size=s, l1=rep.l1, l2=rep.l2, psnr=rep.psnr, n_missing=rep.n_missing))
            if (name, lo) in per and (name, hi) in per:
                ratios[(seed, name)] = per[(name, hi)].l1 / per[(name, lo)].l1
        if (seed, "fourier") in ratios and (seed, "regular") in ratios:
            wins += ratios[(seed, "fourier")] < ratios[(seed, "regular")]
        done += 1
        log.info("seed %d ratios: %s", seed, {k[1]: round(v, 4) for k, v in ratios.items() if k[0] == seed})
    report = TransferReport(rows, ratios, wins, done, partial or done < len(cfg.seeds), errors)
    if out_dir is not None:
        _write_csv(Path(out_dir) / "resolution_transfer.csv", TransferReport.FIELDS, rows)
        ratio_rows = [dict(seed=k[0], model=k[1], ratio=v) for k, v in sorted(ratios.items())]
        _write_csv(Path(out_dir) / "degradation_ratio.csv", ("seed", "model", "ratio"), ratio_rows)
    return report


def per_resolution(report: TransferReport, seed: int, model: str) -> EvalReport:
    """The transfer rows for one model folded into an EvalReport (train-size metrics on top)."""
    rows = sorted((r for r in report.rows if r["seed"] == seed and r["model"] == model), key=lambda r: r["size"])
    first = rows[0]
    return EvalReport(first["l1"], first["l2"], first["psnr"], first["n_missing"], {r["size"]: r["l1"] for r in rows})
