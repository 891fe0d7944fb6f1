"""Adam, the alternating D/G training loop, configs and checkpoints."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .evaluate import composite
from .losses import (
    LossReport,
    LossWeights,
    discriminator_loss,
    fake_cells,
    feature_matching_loss,
    frozen,
    generator_loss,
    hrf_perceptual_loss,
    r1_penalty,
    total_loss,
)
from .maskgen import BoxMaskParams, WideMaskParams, sample_training_mask
from .networks import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    HrfExtractor,
    HrfExtractorConfig,
    stack_input,
)
from .tensor import Tensor
from .textures import TextureSpec, synth_dataset

log = logging.getLogger(__name__)

CHECKPOINT_ENV = "LAMALITE_CHECKPOINT_DIR"


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: list, grads: list, state: AdamState) -> None:
    """Bias-corrected Adam update of (name, Tensor) pairs, in order with ``grads``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for (name, p), g in zip(params, grads):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise T.NonFiniteError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    for (name, p), g in zip(params, grads):
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------- config


@dataclass
class TrainConfig:
    generator: GeneratorConfig = GeneratorConfig(base_width=8, n_residual=6)
    discriminator: DiscriminatorConfig = DiscriminatorConfig(n_layers=3, base_width=16)
    hrf: HrfExtractorConfig = HrfExtractorConfig()
    weights: LossWeights = LossWeights()
    texture: TextureSpec = TextureSpec()
    wide_masks: WideMaskParams = WideMaskParams()
    box_masks: BoxMaskParams = BoxMaskParams()
    mask_policy: str = "large"
    image_size: int = 32
    batch_size: int = 4
    iterations: int = 2000
    lr_g: float = 1e-3
    lr_d: float = 1e-4
    seed: int = 0
    data_seed: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.image_size % self.generator.stride_product:
            raise ValueError(f"image size {self.image_size} not divisible by {self.generator.stride_product}")


def _to_text(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_to_text(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse(text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        if text.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return text.lower() in ("true", "1")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        parts = [p for p in text.split(",") if p.strip()]
        kinds = [type(v) for v in like] or [float]
        return tuple(_parse(p, kinds[min(i, len(kinds) - 1)]()) for i, p in enumerate(parts))
    if like is None:
        return None if text.lower() == "none" else int(text)
    return text


def flatten_config(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for k, v in flatten_config(value).items():
                out[f"{f.name}.{k}"] = v
        else:
            out[f.name] = _to_text(value)
    return out


def _build(cls, flat: dict, prefix: str = ""):
    base = cls()
    kwargs = {}
    for f in dataclasses.fields(cls):
        value = getattr(base, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(value):
            kwargs[f.name] = _build(type(value), flat, key + ".")
        elif key in flat:
            like = value
            if value is None and f.type in ("Optional[int]",):
                like = None
            kwargs[f.name] = _parse(flat[key], like)
    return cls(**kwargs)


def config_from_flat(flat: dict) -> TrainConfig:
    known = set(flatten_config(TrainConfig()))
    unknown = set(flat) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return _build(TrainConfig, flat)


def config_to_text(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in flatten_config(cfg).items())


def config_from_text(text: str) -> TrainConfig:
    flat = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        flat[k.strip()] = v.strip()
    return config_from_flat(flat)


def load_config(path) -> TrainConfig:
    return config_from_text(Path(path).read_text())


# ---------------------------------------------------------------- training


def sample_batch(cfg: TrainConfig, step: int, size: Optional[int] = None) -> tuple:
    """Deterministic (images B x 3 x S x S, masks B x 1 x S x S) for a step index."""
    size = size or cfg.image_size
    rng = np.random.default_rng([cfg.data_seed, step])
    x, _ = synth_dataset(rng, cfg.texture, cfg.batch_size, size, cfg.generator.stride_product)
    masks = [
        sample_training_mask(rng, size, size, cfg.mask_policy, wide=cfg.wide_masks, box=cfg.box_masks).data
        for _ in range(cfg.batch_size)
    ]
    return x, np.stack(masks)[:, None].astype(np.float64)


class Trainer:
    """Owns the networks, optimizer states and step counter of one run."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.gen = Generator(cfg.generator, rng)
        self.disc = Discriminator(cfg.discriminator, rng)
        self.hrf = HrfExtractor(cfg.hrf)
        self.opt_g = AdamState(cfg.lr_g)
        self.opt_d = AdamState(cfg.lr_d)
        self.step = 0
        self.last_composite: Optional[np.ndarray] = None

    def inpaint(self, x: np.ndarray, m: np.ndarray) -> np.ndarray:
        """Eval-mode prediction, composited onto the known pixels."""
        self.gen.eval()
        try:
            with T.no_grad():
                x_hat = self.gen(stack_input(Tensor(x), m)).data
        finally:
            self.gen.train()
        return composite(x, x_hat, m)

    def train_iteration(self, x: np.ndarray, m: np.ndarray) -> LossReport:
        """One discriminator update, then one generator update, on the same batch."""
        w = self.cfg.weights
        x_t = Tensor(x)
        x_hat = self.gen(stack_input(x_t, m))

        d_params = list(self.disc.named_parameters())
        real_logits = self.disc(x_t)
        fake_logits = self.disc(T.stop_gradient(x_hat))
        fake = fake_cells(m, self.disc.geometry, fake_logits.shape[-2:])
        l_d = discriminator_loss(real_logits, fake_logits, fake)
        r1 = r1_penalty(self.disc, x_t)
        if w.kappa or w.gamma:
            loss_d = T.add(T.mul(l_d, w.kappa), T.mul(r1, w.gamma))
            grads = T.grad(loss_d, [p for _, p in d_params])
            adam_step(d_params, [g.data for g in grads], self.opt_d)

        g_params = list(self.gen.named_parameters())
        with frozen(self.disc):
            l_g = generator_loss(self.disc(x_hat))
        discpl = feature_matching_loss(x_t, x_hat, self.disc)
        hrfpl = hrf_perceptual_loss(x_t, x_hat, self.hrf)
        loss_g = T.add(T.add(T.mul(l_g, w.kappa), T.mul(hrfpl, w.alpha)), T.mul(discpl, w.beta))
        grads = T.grad(loss_g, [p for _, p in g_params])
        adam_step(g_params, [g.data for g in grads], self.opt_g)

        self.step += 1
        self.last_composite = composite(x, x_hat.data, m)
        return total_loss(l_g.item(), l_d.item(), hrfpl.item(), discpl.item(), r1.item(), w)

    def run(self, iterations: Optional[int] = None, log_path=None, checkpoint_dir=None) -> list:
        n = self.cfg.iterations if iterations is None else iterations
        reports = []
        writer = fh = None
        if log_path is not None:
            fh = open(log_path, "a" if self.step else "w", newline="")
            writer = csv.DictWriter(fh, fieldnames=LossReport.CSV_FIELDS)
            if not self.step:
                writer.writeheader()
        try:
            for _ in range(n):
                x, m = sample_batch(self.cfg, self.step)
                try:
                    report = self.train_iteration(x, m)
                except T.NonFiniteError as exc:
                    raise TrainingError(f"step {self.step}: {exc}") from exc
                reports.append(report)
                if writer is not None:
                    writer.writerow({k: _to_text(v) for k, v in report.row(self.step).items()})
                every = self.cfg.checkpoint_every
                if checkpoint_dir is not None and every and self.step % every == 0:
                    save_checkpoint(self, Path(checkpoint_dir) / f"step{self.step:07d}.ckpt")
                if self.step % 100 == 0:
                    log.info("step %d total_g %.4f total_d %.4f", self.step, report.total_g, report.total_d)
        finally:
            if fh is not None:
                fh.close()
        return reports


def checkpoint_dir(default) -> Path:
    return Path(os.environ.get(CHECKPOINT_ENV, default))


# ---------------------------------------------------------------- checkpoints

MAGIC = b"LAMALITE"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(RuntimeError):
    pass


def _state_arrays(tr: Trainer) -> dict:
    arrays = {}
    for tag, mod in (("gen", tr.gen), ("disc", tr.disc)):
        for name, p in mod.named_parameters():
            arrays[f"{tag}/param/{name}"] = p.data
        for name, st, attr in mod.named_buffers():
            arrays[f"{tag}/buffer/{name}"] = getattr(st, attr)
    for tag, opt in (("opt_g", tr.opt_g), ("opt_d", tr.opt_d)):
        for name in sorted(opt.m):
            arrays[f"{tag}/m/{name}"] = opt.m[name]
            arrays[f"{tag}/v/{name}"] = opt.v[name]
    return arrays


def save_checkpoint(tr: Trainer, path) -> None:
    arrays = _state_arrays(tr)
    table, offset = [], 0
    for name, arr in arrays.items():
        n = int(np.asarray(arr).size)
        table.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        offset += n * 8
    header = {
        "config": flatten_config(tr.cfg),
        "step": tr.step,
        "adam": {tag: {"step": o.step, "lr": o.lr} for tag, o in (("opt_g", tr.opt_g), ("opt_d", tr.opt_d))},
        "payload_bytes": offset,
        "tensors": table,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_checkpoint(path) -> tuple:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {VERSION})")
    start = _PREFIX.size + hlen
    if len(raw) < start:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(raw[_PREFIX.size : start].decode())
        table = header["tensors"]
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupted checkpoint header: {exc}") from exc
    if len(raw) - start != header.get("payload_bytes"):
        raise CheckpointError("checkpoint payload truncated or padded")
    arrays = {}
    try:
        for entry in table:
            shape = tuple(int(d) for d in entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            lo = start + int(entry["offset"])
            if lo < start or lo + 8 * n > len(raw):
                raise CheckpointError(f"tensor {entry['name']} lies outside the payload")
            arrays[str(entry["name"])] = np.frombuffer(raw, dtype="<f8", count=n, offset=lo).reshape(shape).astype(np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupted tensor table: {exc}") from exc
    return header, arrays


def load_checkpoint(tr: Trainer, path) -> None:
    """Restore parameters, BN statistics and optimizer moments; all-or-nothing."""
    header, arrays = _read_checkpoint(path)
    expected = _state_arrays(tr)
    required = {k for k in expected if "/m/" not in k and "/v/" not in k}
    missing = required - set(arrays)
    if missing:
        raise CheckpointError(f"checkpoint lacks {sorted(missing)[:3]}...")
    for name in required:
        if np.shape(expected[name]) != arrays[name].shape:
            raise CheckpointError(f"shape mismatch for {name}")
    owners = {"opt_g": "gen", "opt_d": "disc"}
    for name, arr in arrays.items():
        if name in required:
            continue
        tag, kind, pname = (name.split("/", 2) + ["", ""])[:3]
        param = f"{owners.get(tag)}/param/{pname}"
        if kind not in ("m", "v") or param not in expected or np.shape(expected[param]) != arr.shape:
            raise CheckpointError(f"unexpected tensor {name} in checkpoint")
    try:
        adam = {tag: (int(header["adam"][tag]["step"]), float(header["adam"][tag]["lr"])) for tag in owners}
        step = int(header["step"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupted checkpoint header: {exc}") from exc
    # validated: now assign
    for tag, mod in (("gen", tr.gen), ("disc", tr.disc)):
        for name, p in mod.named_parameters():
            p.data = arrays[f"{tag}/param/{name}"]
        for name, st, attr in mod.named_buffers():
            setattr(st, attr, arrays[f"{tag}/buffer/{name}"])
    for tag, opt in (("opt_g", tr.opt_g), ("opt_d", tr.opt_d)):
        opt.m = {k.split("/", 2)[2]: v for k, v in arrays.items() if k.startswith(f"{tag}/m/")}
        opt.v = {k.split("/", 2)[2]: v for k, v in arrays.items() if k.startswith(f"{tag}/v/")}
        opt.step, opt.lr = adam[tag]
    tr.step = step


def trainer_from_checkpoint(path) -> Trainer:
    header, _ = _read_checkpoint(path)
    tr = Trainer(config_from_flat(header["config"]))
    load_checkpoint(tr, path)
    return tr
