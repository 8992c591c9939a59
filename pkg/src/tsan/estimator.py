"""scikit-learn style wrapper: fit on (LR, HR) image lists, predict SR images."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import to_uint8
from .metrics import psnr, rgb_to_y
from .model import TSAN, build_variant
from .trainer import Trainer, TrainConfig, super_resolve


def check_image(img, name: str = "image") -> np.ndarray:
    """Validate an (H, W, 3) 0-255 image and return it as uint8."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name}: expected (H, W, 3), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name}: empty image")
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.number) or not np.all(np.isfinite(arr)):
            raise ValueError(f"{name}: values must be finite numbers")
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError(f"{name}: values outside 0-255")
        arr = to_uint8(arr)
    return arr


def check_image_list(X, name: str = "X") -> list[np.ndarray]:
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = [X]
    images = [check_image(x, f"{name}[{i}]") for i, x in enumerate(X)]
    if not images:
        raise ValueError(f"{name}: no images")
    return images


def check_pairs(X, y, scale: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    lrs, hrs = check_image_list(X, "X"), check_image_list(y, "y")
    if len(lrs) != len(hrs):
        raise ValueError(f"got {len(lrs)} LR images but {len(hrs)} HR images")
    for i, (lr, hr) in enumerate(zip(lrs, hrs)):
        if hr.shape[0] < scale * lr.shape[0] or hr.shape[1] < scale * lr.shape[1]:
            raise ValueError(f"pair {i}: HR {hr.shape[:2]} smaller than x{scale} of LR {lr.shape[:2]}")
    return lrs, hrs


class TSANSuperResolver(BaseEstimator):
    """Train a TSAN variant on image pairs and upscale new images.

    ``X`` is a list of uint8 LR images, ``y`` the matching HR images.
    ``rgb_mean=None`` uses the pixel mean of ``y``.
    """

    def __init__(self, variant="default", scale=2, iters=1000, batch=16, patch=48, lr0=1e-4,
                 halve_every=200, iters_per_epoch=1000, augment=True, rgb_mean=None, seed=0):
        self.variant = variant
        self.scale = scale
        self.iters = iters
        self.batch = batch
        self.patch = patch
        self.lr0 = lr0
        self.halve_every = halve_every
        self.iters_per_epoch = iters_per_epoch
        self.augment = augment
        self.rgb_mean = rgb_mean
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(batch=self.batch, lr0=self.lr0, halve_every=self.halve_every,
                           iters_per_epoch=self.iters_per_epoch, seed=self.seed,
                           patch=self.patch, augment=self.augment)

    def fit(self, X, y):
        lrs, hrs = check_pairs(X, y, self.scale)
        if self.iters < 0:
            raise ValueError("iters must be >= 0")
        mean = self.rgb_mean
        if mean is None:
            mean = np.concatenate([h.reshape(-1, 3) for h in hrs]).mean(axis=0)
        cfg = build_variant(self.variant, self.scale, rgb_mean=tuple(float(v) for v in mean))
        trainer = Trainer(cfg, self._train_config(), list(zip(lrs, hrs)))
        self.checkpoint_ = trainer.run(self.iters)
        self.model_: TSAN = trainer.model
        self.loss_curve_ = [r["loss"] for r in trainer.log]
        self.n_iter_ = trainer.iteration
        return self

    def predict(self, X, stage: str = "sr2") -> list[np.ndarray]:
        """Upscaled uint8 images; ``stage="sr1"`` returns the coarse output."""
        check_is_fitted(self, "model_")
        if stage not in ("sr1", "sr2"):
            raise ValueError("stage must be 'sr1' or 'sr2'")
        out = []
        for img in check_image_list(X):
            sr1, sr2 = super_resolve(self.model_, img)
            out.append(to_uint8(sr2 if stage == "sr2" else sr1))
        return out

    def score(self, X, y, stage: str = "sr2") -> float:
        """Mean Y-channel PSNR (dB) with a border of ``scale`` pixels shaved."""
        preds = self.predict(X, stage)
        hrs = check_image_list(y, "y")
        vals = []
        for sr, hr in zip(preds, hrs):
            h, w = sr.shape[:2]
            vals.append(psnr(rgb_to_y(sr), rgb_to_y(hr[:h, :w]), self.scale))
        return float(np.mean(vals))
