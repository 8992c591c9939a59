"""Adam training of the joint loss, step-decay schedule and binary checkpoints."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import sample_patch
from .model import TSAN, ModelConfig, joint_loss_terms
from .nn import Parameter
from .tensor import Tensor, backward, no_grad

logger = logging.getLogger(__name__)

MAGIC = b"TSANCKPT"
FORMAT_VERSION = 1
LOG_FIELDS = ("iter", "epoch", "lr", "loss", "loss_sr1", "loss_sr2")


class CheckpointError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    batch: int = 16
    lr0: float = 1e-4
    halve_every: int = 200
    epochs: int = 1000
    iters_per_epoch: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    patch: int = 48
    augment: bool = True
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch < 1 or self.patch < 1 or self.iters_per_epoch < 1 or self.halve_every < 1:
            raise ValueError("batch, patch, iters_per_epoch and halve_every must be positive")
        if not (self.lr0 > 0 and self.eps > 0 and 0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("learning rate, eps and betas must be positive (betas below 1)")

    @property
    def total_iters(self) -> int:
        return self.epochs * self.iters_per_epoch

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def lr_at(epoch: int, lr0: float = 1e-4, halve_every: int = 200) -> float:
    return lr0 * 0.5 ** (epoch // halve_every)


def adam_step(params, t: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """Bias-corrected Adam update in place; gradients are cleared afterwards.

    Parameters without a gradient (not reachable from the loss) are skipped.
    """
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p in params:
        g = p.grad
        if g is None:
            continue
        dt = p.data.dtype.type
        p.m *= dt(beta1)
        p.m += dt(1.0 - beta1) * g
        p.v *= dt(beta2)
        p.v += dt(1.0 - beta2) * (g * g)
        p.data -= dt(lr / bc1) * p.m / (np.sqrt(p.v / dt(bc2)) + dt(eps))
        p.grad = None


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    model_config: dict
    train_config: dict
    tensors: dict[str, np.ndarray]
    moments: dict[str, np.ndarray] = field(default_factory=dict)
    iteration: int = 0
    rng_state: dict | None = None
    rgb_mean: tuple[float, float, float] | None = None
    version: int = FORMAT_VERSION

    @property
    def epoch(self) -> int:
        return self.iteration // TrainConfig.from_dict(self.train_config).iters_per_epoch

    def build_model(self) -> TSAN:
        model = TSAN(ModelConfig.from_dict(self.model_config))
        restore_model(model, self)
        return model


def _pack_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically so an interrupted save never clobbers the previous file."""
    header = {
        "model_config": ckpt.model_config,
        "train_config": ckpt.train_config,
        "iteration": ckpt.iteration,
        "epoch": ckpt.epoch if ckpt.train_config else 0,
        "rng_state": ckpt.rng_state,
        "rgb_mean": list(ckpt.rgb_mean) if ckpt.rgb_mean is not None else None,
        "n_tensors": len(ckpt.tensors),
        "n_moments": len(ckpt.moments),
    }
    hdr = json.dumps(header).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    buf.write(struct.pack("<I", len(hdr)))
    buf.write(hdr)
    for name, arr in ckpt.tensors.items():
        _pack_tensor(buf, name, arr)
    for name, arr in ckpt.moments.items():
        _pack_tensor(buf, name, arr)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def tensor(self) -> tuple[str, np.ndarray]:
        name = self.take(self.u32()).decode("utf-8")
        rank = self.u32()
        if rank > 4:
            raise CheckpointError(f"{self.path}: tensor {name!r} has rank {rank}")
        shape = struct.unpack(f"<{rank}I", self.take(4 * rank))
        count = math.prod(shape)
        arr = np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)
        return name, arr


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no such checkpoint") from None
    r = _Reader(blob, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    tensors = dict(r.tensor() for _ in range(header["n_tensors"]))
    moments = dict(r.tensor() for _ in range(header["n_moments"]))
    if r.pos != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after last record")
    mean = header.get("rgb_mean")
    return Checkpoint(
        header["model_config"], header["train_config"], tensors, moments,
        header["iteration"], header.get("rng_state"), tuple(mean) if mean else None, version,
    )


def snapshot(model: TSAN, train_cfg: TrainConfig | None = None, iteration: int = 0, rng=None, rgb_mean=None) -> Checkpoint:
    moments = {}
    for name, p in model.named_parameters():
        moments[f"adam.m.{name}"] = p.m.copy()
        moments[f"adam.v.{name}"] = p.v.copy()
    return Checkpoint(
        model.cfg.to_dict(),
        asdict(train_cfg) if train_cfg is not None else {},
        model.state_dict(),
        moments,
        iteration,
        rng.bit_generator.state if rng is not None else None,
        tuple(rgb_mean) if rgb_mean is not None else tuple(model.cfg.rgb_mean),
    )


def restore_model(model: TSAN, ckpt: Checkpoint) -> None:
    if ModelConfig.from_dict(ckpt.model_config) != model.cfg:
        raise CheckpointError("checkpoint model config does not match the model")
    try:
        model.load_state_dict(ckpt.tensors)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(str(exc)) from None
    for name, p in model.named_parameters():
        m = ckpt.moments.get(f"adam.m.{name}")
        v = ckpt.moments.get(f"adam.v.{name}")
        p.m = m.copy() if m is not None else np.zeros_like(p.data)
        p.v = v.copy() if v is not None else np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def to_nchw(images: list[np.ndarray], mean) -> Tensor:
    arr = np.stack(images).astype(np.float32) - np.asarray(mean, dtype=np.float32)
    return Tensor(arr.transpose(0, 3, 1, 2))


def from_nchw(t: Tensor, mean) -> np.ndarray:
    return t.data.transpose(0, 2, 3, 1) + np.asarray(mean, dtype=np.float32)


class Trainer:
    """Owns the model, the sampling RNG and the iteration counter.

    ``pairs`` are (lr, hr) uint8 HWC arrays. An epoch is ``iters_per_epoch``
    iterations; the learning rate follows :func:`lr_at` of the epoch.
    """

    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig, pairs, rgb_mean=None, resume: Checkpoint | None = None):
        self.model_cfg = model_cfg
        self.cfg = train_cfg
        self.rgb_mean = tuple(rgb_mean) if rgb_mean is not None else model_cfg.rgb_mean
        self.pairs = []
        for i, (lr, hr) in enumerate(pairs):
            if min(lr.shape[:2]) < train_cfg.patch:
                logger.warning("pair %d: LR %s smaller than patch %d, skipped", i, lr.shape[:2], train_cfg.patch)
                continue
            self.pairs.append((lr, hr))
        if not self.pairs:
            raise ValueError("no training pair is large enough for the patch size")
        self.model = TSAN(model_cfg, seed=train_cfg.seed)
        self.rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 1]))
        self.iteration = 0
        if resume is not None:
            restore_model(self.model, resume)
            self.iteration = resume.iteration
            if resume.rng_state is not None:
                self.rng.bit_generator.state = resume.rng_state
            if resume.rgb_mean is not None:
                self.rgb_mean = tuple(resume.rgb_mean)
        self.log: list[dict] = []

    @property
    def epoch(self) -> int:
        return self.iteration // self.cfg.iters_per_epoch

    def sample_batch(self) -> tuple[Tensor, Tensor]:
        lrs, hrs = [], []
        for _ in range(self.cfg.batch):
            pair = self.pairs[int(self.rng.integers(len(self.pairs)))]
            p = sample_patch(pair, self.rng, self.cfg.augment, self.cfg.patch, self.model_cfg.scale)
            lrs.append(p.lr)
            hrs.append(p.hr)
        return to_nchw(lrs, self.rgb_mean), to_nchw(hrs, self.rgb_mean)

    def step(self) -> dict:
        epoch = self.epoch
        lr = lr_at(epoch, self.cfg.lr0, self.cfg.halve_every)
        x, gt = self.sample_batch()
        out = self.model(x)
        total, l1, l2 = joint_loss_terms(out, gt, self.model_cfg.w1, self.model_cfg.w2)
        if not np.isfinite(total.item()):
            raise NonFiniteLossError(f"non-finite loss at iteration {self.iteration + 1}")
        backward(total)
        adam_step(self.model.parameters(), self.iteration + 1, lr, self.cfg.beta1, self.cfg.beta2, self.cfg.eps)
        self.iteration += 1
        row = {"iter": self.iteration, "epoch": epoch, "lr": lr, "loss": total.item(),
               "loss_sr1": l1.item(), "loss_sr2": l2.item()}
        self.log.append(row)
        return row

    def checkpoint(self) -> Checkpoint:
        return snapshot(self.model, self.cfg, self.iteration, self.rng, self.rgb_mean)

    def run(self, iters: int, ckpt_path=None, log_every: int = 50) -> Checkpoint:
        """Train ``iters`` more iterations; on a non-finite loss the last saved checkpoint is kept."""
        for _ in range(iters):
            row = self.step()
            if log_every and row["iter"] % log_every == 0:
                logger.info("iter %d epoch %d lr %.3g loss %.4f", row["iter"], row["epoch"], row["lr"], row["loss"])
            if ckpt_path is not None and self.cfg.checkpoint_every and row["iter"] % self.cfg.checkpoint_every == 0:
                save_checkpoint(self.checkpoint(), ckpt_path)
        ckpt = self.checkpoint()
        if ckpt_path is not None:
            save_checkpoint(ckpt, ckpt_path)
        return ckpt


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, manifest, iters: int | None = None,
          ckpt_path=None, log_path=None, resume: Checkpoint | None = None):
    """Run training from a manifest; returns (checkpoint, log rows)."""
    pairs = manifest.load_pairs()
    if manifest.scale != model_cfg.scale:
        raise ValueError(f"manifest scale {manifest.scale} != model scale {model_cfg.scale}")
    trainer = Trainer(model_cfg, train_cfg, pairs, manifest.rgb_mean, resume=resume)
    n = train_cfg.total_iters - trainer.iteration if iters is None else iters
    try:
        ckpt = trainer.run(n, ckpt_path)
    finally:
        if log_path is not None:
            write_log(trainer.log, log_path)
    return ckpt, trainer.log


def write_log(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([r["iter"], r["epoch"], repr(r["lr"]), repr(r["loss"]), repr(r["loss_sr1"]), repr(r["loss_sr2"])])


def smoothed(values, window: int = 25) -> np.ndarray:
    """Trailing moving average (shorter window at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def super_resolve(model: TSAN, lr_img: np.ndarray, rgb_mean=None) -> tuple[np.ndarray, np.ndarray]:
    """Upscale one uint8 (H, W, 3) image; returns float (sr1, sr2) in 0-255 range."""
    mean = model.cfg.rgb_mean if rgb_mean is None else rgb_mean
    with no_grad():
        out = model(to_nchw([lr_img], mean))
    return from_nchw(out.sr1, mean)[0], from_nchw(out.sr2, mean)[0]
