"""Full-reference image quality measures on 8-bit images.

MSE and PSNR use 0-255 units. SSIM uses the usual 11x11 Gaussian window
(sigma 1.5, K1 = 0.01, K2 = 0.03), computed per channel and averaged.
The perceptual distance needs a feature provider; see :mod:`csgan.lpips`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
from scipy.ndimage import correlate1d

from .data import PairedDataset, from_model_range, to_model_range

ALL_METRICS = ("mse", "psnr", "ssim", "lpips")
PEAK = 255.0


class MetricError(ValueError):
    """A metric failed on a specific image."""


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 255.0

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd size")

    def kernel(self) -> np.ndarray:
        r = self.window // 2
        x = np.arange(-r, r + 1, dtype=np.float64)
        g = np.exp(-(x**2) / (2 * self.sigma**2))
        return g / g.sum()


def _as_array(img) -> np.ndarray:
    if isinstance(img, torch.Tensor):
        if img.dtype != torch.uint8:
            raise TypeError(f"metrics expect uint8 images, got {img.dtype}")
        img = img.numpy()
    return np.asarray(img, dtype=np.float64)


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def mse(a, b) -> float:
    a, b = _as_array(a), _as_array(b)
    _same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(m: float) -> float:
    if m < 0:
        raise ValueError(f"MSE must be non-negative, got {m}")
    if m == 0:
        return math.inf
    return 10.0 * math.log10(PEAK**2 / m)


def psnr(a, b) -> float:
    return psnr_from_mse(mse(a, b))


def _filter(x: np.ndarray, g: np.ndarray, r: int) -> np.ndarray:
    out = correlate1d(correlate1d(x, g, axis=0, mode="reflect"), g, axis=1, mode="reflect")
    return out[r:-r, r:-r] if r else out


def ssim(a, b, p: SsimParams = SsimParams()) -> float:
    """Mean SSIM over fully-contained windows and channels.

    Accepts (H, W) or channel-first (C, H, W) arrays.
    """
    a, b = _as_array(a), _as_array(b)
    _same_shape(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ValueError("ssim expects (H, W) or (C, H, W) images")
    if min(a.shape[1:]) < p.window:
        raise ValueError(f"image sides {a.shape[1:]} are smaller than the {p.window}px SSIM window")

    g, r = p.kernel(), p.window // 2
    c1 = (p.k1 * p.dynamic_range) ** 2
    c2 = (p.k2 * p.dynamic_range) ** 2
    scores = []
    for x, y in zip(a, b):
        mu_x, mu_y = _filter(x, g, r), _filter(y, g, r)
        sxx = _filter(x * x, g, r) - mu_x * mu_x
        syy = _filter(y * y, g, r) - mu_y * mu_y
        sxy = _filter(x * y, g, r) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


@dataclass
class MetricReport:
    method: str
    dataset: str
    metrics: tuple[str, ...]
    per_image: list[dict] = field(default_factory=list)

    @property
    def aggregate(self) -> dict[str, float]:
        if not self.per_image:
            raise ValueError("report has no images")
        return {m: float(np.mean([row[m] for row in self.per_image])) for m in self.metrics}


def parse_metrics(spec: str | Iterable[str]) -> tuple[str, ...]:
    names = [s.strip().lower() for s in (spec.split(",") if isinstance(spec, str) else spec) if s.strip()]
    unknown = [n for n in names if n not in ALL_METRICS]
    if unknown or not names:
        raise ValueError(f"unknown metrics {unknown}; choose from {', '.join(ALL_METRICS)}")
    return tuple(m for m in ALL_METRICS if m in names)


def image_metrics(fake: torch.Tensor, real: torch.Tensor, metrics: Sequence[str], lpips_provider=None) -> dict:
    row = {}
    if "mse" in metrics or "psnr" in metrics:
        m = mse(fake, real)
        if "mse" in metrics:
            row["mse"] = m
        if "psnr" in metrics:
            row["psnr"] = psnr_from_mse(m)
    if "ssim" in metrics:
        row["ssim"] = ssim(fake, real)
    if "lpips" in metrics and lpips_provider is not None:
        from .lpips import perceptual_distance

        row["lpips"] = perceptual_distance(to_model_range(fake), to_model_range(real), lpips_provider)
    return row


@torch.no_grad()
def evaluate_dataset(
    generator: torch.nn.Module,
    ds: PairedDataset,
    direction: str = "AtoB",
    metrics: Sequence[str] = ("mse", "psnr", "ssim"),
    method: str = "",
    lpips_provider=None,
) -> MetricReport:
    """Translate every test pair with ``generator`` and score it against the ground truth.

    ``generator`` must already be the network matching ``direction`` (G_AB for
    A to B). LPIPS is dropped from the report when no provider is given.
    """
    metrics = tuple(metrics)
    if "lpips" in metrics and lpips_provider is None:
        metrics = tuple(m for m in metrics if m != "lpips")
    generator.eval()
    dtype = next(generator.parameters()).dtype
    report = MetricReport(method=method, dataset=ds.name, metrics=metrics)
    for i, name in enumerate(ds.names()):
        a, b = ds.load_pair(i)
        src, target = (a, b) if direction == "AtoB" else (b, a)
        fake = from_model_range(generator(to_model_range(src)[None].to(dtype))[0].float())
        try:
            row = image_metrics(fake, target, metrics, lpips_provider)
        except (ValueError, TypeError) as exc:
            raise MetricError(f"{name}: {exc}") from exc
        report.per_image.append({"image": name, **row})
    return report
