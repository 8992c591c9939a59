"""Y-channel PSNR / SSIM and evaluation reports."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

PSNR_CAP = 100.0


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 luma in studio swing, from 0-255 RGB."""
    img = np.asarray(img, dtype=np.float64)
    return 16.0 + (65.481 * img[..., 0] + 128.553 * img[..., 1] + 24.966 * img[..., 2]) / 255.0


def _shave(a: np.ndarray, border: int) -> np.ndarray:
    if border <= 0:
        return a
    return a[border:-border, border:-border]


def psnr(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"extent mismatch {a.shape} vs {b.shape}")
    if min(a.shape[:2]) <= 2 * shave:
        raise ValueError(f"image {a.shape[:2]} too small for shave {shave}")
    mse = np.mean((_shave(a, shave) - _shave(b, shave)) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(255.0**2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(a: np.ndarray, b: np.ndarray, shave: int = 0, data_range: float = 255.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03."""
    a = _shave(np.asarray(a, dtype=np.float64), shave)
    b = _shave(np.asarray(b, dtype=np.float64), shave)
    if a.shape != b.shape:
        raise ValueError(f"extent mismatch {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < 11:
        raise ValueError(f"image {a.shape[:2]} smaller than the 11x11 window after shaving")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a**2
    sbb = _filter_valid(b * b, g) - mu_b**2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    scale: int
    shave: int
    rows: list[tuple[str, float, float]] = field(default_factory=list)

    def add(self, name: str, sr: np.ndarray, hr: np.ndarray) -> tuple[float, float]:
        ya, yb = rgb_to_y(sr), rgb_to_y(hr)
        row = (name, psnr(ya, yb, self.shave), ssim(ya, yb, self.shave))
        self.rows.append(row)
        return row[1], row[2]

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows])) if self.rows else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("name,psnr,ssim\n")
        for name, p, s in self.rows:
            buf.write(f"{name},{p:.4f},{s:.6f}\n")
        buf.write(f"mean,{self.mean_psnr:.4f},{self.mean_ssim:.6f}\n")
        return buf.getvalue()


def format_reports(reports: dict[str, EvalReport]) -> str:
    """Side-by-side console table, one PSNR/SSIM column pair per method."""
    methods = list(reports)
    head = f"{'image':<24}" + "".join(f"{m + ' PSNR':>14}{m + ' SSIM':>12}" for m in methods)
    lines = [head, "-" * len(head)]
    names = [r[0] for r in next(iter(reports.values())).rows]
    for i, name in enumerate(names):
        cells = "".join(f"{reports[m].rows[i][1]:>14.4f}{reports[m].rows[i][2]:>12.4f}" for m in methods)
        lines.append(f"{name:<24}{cells}")
    lines.append("-" * len(head))
    lines.append(f"{'mean':<24}" + "".join(f"{reports[m].mean_psnr:>14.4f}{reports[m].mean_ssim:>12.4f}" for m in methods))
    return "\n".join(lines)
