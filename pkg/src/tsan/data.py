"""PNG I/O, bicubic degradation, dataset manifests and training patch sampling."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

logger = logging.getLogger(__name__)

_EXPANDABLE_MODES = {"RGB", "RGBA", "L", "LA", "P", "PA"}


class ImageIOError(OSError):
    pass


def read_png(path) -> np.ndarray:
    """Load an 8-bit PNG as an (H, W, 3) uint8 array.

    Alpha is dropped; grayscale and palette images are expanded to RGB.
    Other modes (16-bit, float, 1-bit) are rejected.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ImageIOError(f"{path}: not a PNG stream ({im.format})")
            if im.mode not in _EXPANDABLE_MODES:
                raise ImageIOError(f"{path}: unsupported PNG mode/bit depth {im.mode!r}")
            im.load()
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except FileNotFoundError:
        raise ImageIOError(f"{path}: no such file") from None
    except (UnidentifiedImageError, SyntaxError, OSError) as exc:
        if isinstance(exc, ImageIOError):
            raise
        raise ImageIOError(f"{path}: malformed image ({exc})") from None


def write_png(img: np.ndarray, path) -> None:
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {arr.shape}")
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(arr, "RGB").save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write ({exc})") from None


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# bicubic resampling
# ---------------------------------------------------------------------------


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def resize_weights(in_size: int, out_size: int) -> np.ndarray:
    """(out_size, in_size) interpolation matrix along one axis.

    Half-pixel aligned centers; the kernel is widened by 1/scale when
    shrinking; out-of-range taps are clamped to the edge pixel; rows are
    normalised to sum to one.
    """
    scale = out_size / in_size
    stretch = min(scale, 1.0)
    support = 2.0 / stretch
    centers = (np.arange(out_size) + 0.5) / scale - 0.5
    first = np.floor(centers - support).astype(int) + 1
    taps = int(math.ceil(2 * support)) + 1
    idx = first[:, None] + np.arange(taps)[None, :]
    w = cubic((idx - centers[:, None]) * stretch)
    w /= w.sum(axis=1, keepdims=True)
    mat = np.zeros((out_size, in_size))
    np.add.at(mat, (np.repeat(np.arange(out_size), taps), np.clip(idx, 0, in_size - 1).ravel()), w.ravel())
    return mat


def bicubic_resize(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Separable a=-0.5 bicubic resize of an (H, W) or (H, W, C) float image."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if min(h, w, out_w, out_h) < 1:
        raise ValueError("extents must be >= 1")
    if (h, w) == (out_h, out_w):
        return img.copy()
    wy = resize_weights(h, out_h)
    wx = resize_weights(w, out_w)
    out = np.tensordot(wy, img, axes=(1, 0))
    out = np.tensordot(wx, out, axes=(1, 1))  # (out_w, out_h, ...)
    return np.swapaxes(out, 0, 1)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


@dataclass
class DatasetManifest:
    scale: int
    pairs: list[dict]
    rgb_mean: tuple[float, float, float]
    notes: str = ""
    root: Path = field(default=Path("."), compare=False)

    def paths(self) -> list[tuple[Path, Path]]:
        return [(self.root / p["hr"], self.root / p["lr"]) for p in self.pairs]

    def to_json(self) -> str:
        return json.dumps(
            {"scale": self.scale, "rgb_mean": list(self.rgb_mean), "pairs": self.pairs, "notes": self.notes},
            indent=2,
        )

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        self.root = path.parent

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ImageIOError(f"{path}: no such manifest") from None
        except json.JSONDecodeError as exc:
            raise ImageIOError(f"{path}: invalid manifest JSON ({exc})") from None
        try:
            return cls(int(raw["scale"]), list(raw["pairs"]), tuple(raw["rgb_mean"]), raw.get("notes", ""), path.parent)
        except (KeyError, TypeError) as exc:
            raise ImageIOError(f"{path}: manifest missing field {exc}") from None

    def load_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(read_png(lr), read_png(hr)) for hr, lr in self.paths()]


def crop_to_multiple(img: np.ndarray, scale: int) -> np.ndarray:
    """Center-crop so both extents are multiples of ``scale``."""
    h, w = img.shape[:2]
    hh, ww = h - h % scale, w - w % scale
    top, left = (h - hh) // 2, (w - ww) // 2
    return img[top : top + hh, left : left + ww]


def degrade(hr: np.ndarray, scale: int) -> np.ndarray:
    h, w = hr.shape[:2]
    return to_uint8(bicubic_resize(hr.astype(np.float64), w // scale, h // scale))


def make_dataset(hr_dir, scale: int, out_dir) -> DatasetManifest:
    """Build an LR/HR training set from a folder of HR PNGs and write manifest.json."""
    hr_dir, out_dir = Path(hr_dir), Path(out_dir)
    if not hr_dir.is_dir():
        raise ImageIOError(f"{hr_dir}: not a directory")
    sources = sorted(p for p in hr_dir.iterdir() if p.suffix.lower() == ".png")
    if not sources:
        raise ImageIOError(f"{hr_dir}: no PNG files")
    try:
        (out_dir / "hr").mkdir(parents=True, exist_ok=True)
        (out_dir / f"lr_x{scale}").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ImageIOError(f"{out_dir}: cannot create ({exc})") from None

    pairs = []
    total = np.zeros(3)
    count = 0
    for src in sources:
        hr = crop_to_multiple(read_png(src), scale)
        if min(hr.shape[:2]) < scale:
            logger.warning("skipping %s: smaller than the scale factor", src)
            continue
        lr = degrade(hr, scale)
        hr_rel = Path("hr") / src.name
        lr_rel = Path(f"lr_x{scale}") / src.name
        write_png(hr, out_dir / hr_rel)
        write_png(lr, out_dir / lr_rel)
        pairs.append({"hr": hr_rel.as_posix(), "lr": lr_rel.as_posix()})
        total += hr.reshape(-1, 3).sum(axis=0)
        count += hr.shape[0] * hr.shape[1]
    if not pairs:
        raise ImageIOError(f"{hr_dir}: no usable images")
    mean = tuple(round(float(v), 4) for v in total / count)
    manifest = DatasetManifest(
        scale, pairs, mean, notes=f"bicubic a=-0.5 antialiased x{scale}; HR center-cropped to multiples of {scale}"
    )
    manifest.save(out_dir / "manifest.json")
    return manifest


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------


def dihedral(img: np.ndarray, k: int) -> np.ndarray:
    """k in 0..7: rotate by 90*(k % 4) degrees, then mirror left-right if k >= 4."""
    out = np.rot90(img, k % 4, axes=(0, 1))
    if k >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


@dataclass
class PatchPair:
    lr: np.ndarray
    hr: np.ndarray
    transform: int = 0


def sample_patch(pair, rng: np.random.Generator, augment: bool = True, patch: int = 48, scale: int | None = None) -> PatchPair:
    """Random aligned LR/HR crop, optionally with one of the eight dihedral transforms."""
    lr, hr = pair
    h, w = lr.shape[:2]
    r = scale if scale is not None else hr.shape[0] // h
    if h < patch or w < patch:
        raise ValueError(f"LR image {w}x{h} smaller than patch {patch}")
    if hr.shape[0] < r * h or hr.shape[1] < r * w:
        raise ValueError("HR image does not cover the scaled LR extent")
    y = int(rng.integers(0, h - patch + 1))
    x = int(rng.integers(0, w - patch + 1))
    lp = lr[y : y + patch, x : x + patch]
    hp = hr[r * y : r * (y + patch), r * x : r * (x + patch)]
    k = int(rng.integers(0, 8)) if augment else 0
    return PatchPair(dihedral(lp, k), dihedral(hp, k), k)


def synthetic_image(height: int, width: int, rng: np.random.Generator, shapes: int = 24) -> np.ndarray:
    """Smooth colour gradient overlaid with hard-edged discs, boxes and stripes, as uint8 RGB.

    The sharp edges keep the bicubic baseline well below its ceiling.
    """
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.empty((height, width, 3))
    for ch in range(3):
        a, b, c = rng.uniform(-1, 1, 3)
        img[..., ch] = 128 + 60 * a * xx / width + 60 * b * yy / height + 30 * c
    side = min(height, width)
    for _ in range(shapes):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        size = rng.uniform(0.04, 0.2) * side
        kind = rng.integers(3)
        if kind == 0:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < size**2
        elif kind == 1:
            mask = (np.abs(yy - cy) < size) & (np.abs(xx - cx) < rng.uniform(0.3, 1.0) * size)
        else:
            theta = rng.uniform(0, np.pi)
            proj = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
            period = rng.uniform(3, 8)
            mask = ((proj // period) % 2 == 0) & ((yy - cy) ** 2 + (xx - cx) ** 2 < (2 * size) ** 2)
        img[mask] = rng.uniform(20, 235, 3)
    return to_uint8(img)


def write_synthetic_corpus(out_dir, count: int = 3, height: int = 96, width: int = 96, seed: int = 0) -> list[Path]:
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    paths = []
    for i in range(count):
        path = out_dir / f"synthetic_{i:02d}.png"
        write_png(synthetic_image(height, width, rng), path)
        paths.append(path)
    return paths
