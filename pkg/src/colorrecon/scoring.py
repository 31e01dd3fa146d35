"""Per-pixel CIEDE2000 maps, image-level anomaly scores and baseline scorers."""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from colorrecon.colorspace import delta_e_2000_array, rgb_to_lab
from colorrecon.reconstruct import ReconstructionPair, image_digest, to_gray

METHODS = ("ciede2000", "hist", "l2", "ssim")
HIST_BINS = 8


@dataclass(frozen=True)
class AnomalyScore:
    image_id: str
    method: str
    value: float

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown scoring method {self.method!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite {self.method} score for {self.image_id}")


def _check_pair(pair: ReconstructionPair) -> None:
    if pair.original.shape != pair.reconstructed.shape:
        raise ValueError(
            f"dimension mismatch: {pair.original.shape} vs {pair.reconstructed.shape}"
        )


def diff_map(pair: ReconstructionPair, k: Sequence[float] = (1.0, 1.0, 1.0)) -> np.ndarray:
    """CIEDE2000 between original and reconstruction at every pixel, shape (H, W)."""
    _check_pair(pair)
    return delta_e_2000_array(rgb_to_lab(pair.original), rgb_to_lab(pair.reconstructed), k)


def ciede_score(dmap: np.ndarray, mask: np.ndarray | None = None,
                normalize: str = "sum", image_id: str = "") -> AnomalyScore:
    """Sum (or mean) of the map over pixels where ``mask`` is true (all if None)."""
    dmap = np.asarray(dmap, dtype=np.float64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != dmap.shape:
            raise ValueError(f"mask shape {mask.shape} does not match map shape {dmap.shape}")
        values = dmap[mask]
    else:
        values = dmap.ravel()
    if normalize == "sum":
        value = float(values.sum())
    elif normalize == "mean":
        if values.size == 0:
            raise ValueError("mean of a fully masked map is undefined")
        value = float(values.mean())
    else:
        raise ValueError(f"unknown normalization {normalize!r}")
    return AnomalyScore(image_id, "ciede2000", value)


def rgb_histogram(img: np.ndarray, bins: int = HIST_BINS) -> np.ndarray:
    """Unnormalised joint RGB counts, shape (bins, bins, bins)."""
    q = (np.asarray(img, dtype=np.uint8).reshape(-1, 3).astype(np.int64) * bins) // 256
    flat = (q[:, 0] * bins + q[:, 1]) * bins + q[:, 2]
    return np.bincount(flat, minlength=bins**3).reshape(bins, bins, bins)


@dataclass(frozen=True)
class HealthyHistogram:
    freqs: np.ndarray
    training_id: str = ""


def build_reference_histogram(healthy: Iterable[np.ndarray]) -> HealthyHistogram:
    """Pooled, normalised 8x8x8 RGB histogram over every pixel of every image."""
    total = np.zeros((HIST_BINS,) * 3, dtype=np.int64)
    digests = []
    for img in healthy:
        total += rgb_histogram(img)
        digests.append(image_digest(np.asarray(img, dtype=np.uint8)))
    if not digests:
        raise ValueError("reference histogram needs at least one image")
    tid = hashlib.sha256("".join(sorted(digests)).encode()).hexdigest()
    return HealthyHistogram(total / total.sum(), tid)


def hist_score(query: np.ndarray, ref: HealthyHistogram, image_id: str = "") -> AnomalyScore:
    """One minus histogram intersection with the healthy reference."""
    h = rgb_histogram(query)
    h = h / h.sum()
    value = 1.0 - float(np.minimum(h, ref.freqs).sum())
    return AnomalyScore(image_id, "hist", min(max(value, 0.0), 1.0))


def l2_score(pair: ReconstructionPair, image_id: str = "") -> AnomalyScore:
    """Mean squared error over all channels with values scaled to [0, 1]."""
    _check_pair(pair)
    d = (pair.original.astype(np.float64) - pair.reconstructed.astype(np.float64)) / 255.0
    return AnomalyScore(image_id, "l2", float(np.mean(d * d)))


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_RANGE = 255.0


def _gaussian_taps(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _valid_filter(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    pad = len(taps) // 2
    y = correlate1d(x, taps, axis=0, mode="reflect")
    y = correlate1d(y, taps, axis=1, mode="reflect")
    return y[pad:-pad, pad:-pad]


def ssim_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """SSIM at every position where the 11x11 Gaussian window fits inside the image."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape}")
    taps = _gaussian_taps()
    mx, my = _valid_filter(x, taps), _valid_filter(y, taps)
    vx = _valid_filter(x * x, taps) - mx * mx
    vy = _valid_filter(y * y, taps) - my * my
    cxy = _valid_filter(x * y, taps) - mx * my
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def ssim_score(pair: ReconstructionPair, image_id: str = "") -> AnomalyScore:
    """``1 - mean SSIM`` on the luma601 grayscale of both images, clipped to [0, 1]."""
    _check_pair(pair)
    s = float(ssim_map(to_gray(pair.original, "luma601"), to_gray(pair.reconstructed, "luma601")).mean())
    return AnomalyScore(image_id, "ssim", min(max(1.0 - s, 0.0), 1.0))


CSV_HEADER = ("image_id", "label", "method", "score")


def write_scores_csv(rows: Iterable[tuple[str, int, str, float]]) -> str:
    """Render ``(image_id, label, method, score)`` rows sorted by image id then method."""
    order = {m: i for i, m in enumerate(METHODS)}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for image_id, label, method, score in sorted(rows, key=lambda r: (r[0], order[r[2]])):
        if label not in (1, -1):
            raise ValueError(f"label must be 1 or -1, got {label!r}")
        writer.writerow((image_id, label, method, repr(float(score))))
    return buf.getvalue()


def read_scores_csv(text: str) -> list[tuple[str, int, str, float]]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != CSV_HEADER:
        raise ValueError(f"unexpected score CSV header {header!r}")
    rows = []
    for rec in reader:
        if not rec:
            continue
        image_id, label, method, score = rec
        rows.append((image_id, int(label), method, float(score)))
    return rows
