"""Grayscale-to-color reconstruction with a quantised feature lookup table.

Each pixel is described by three bin indices computed on the grayscale
image: its own intensity, and the mean and standard deviation of its 5x5
neighbourhood (edge-clamped). Training stores, per feature bin, the
coordinate-wise median (a*, b*) of every healthy pixel that fell into it.
Reconstruction keeps the query's lightness and looks up chroma; empty bins
borrow from the nearest populated bin in bin-index L1 distance.

Model file layout (little-endian)::

    offset  type       field
    0       4s         magic b"CLKM"
    4       u16        format version (1)
    6       u8         gray mode (0 = luma601, 1 = lab_l)
    7       u8         reserved, 0
    8       3 x u16    bins: intensity, local mean, local std
    14      f64        std_max (local-std value mapped to the top bin edge)
    22      i16        background threshold (-1 = background included)
    24      u16        n = byte length of the training-set id
    26      n bytes    training-set id, UTF-8
    26+n    u32        bin count (= product of the three bin sizes)
    30+n    records    per bin: u32 sample count, f64 a*, f64 b*

Bin ``(i, m, s)`` lives at record ``(i * n_mean + m) * n_std + s``.
Unpopulated bins have count 0 and zero chroma.
"""
from __future__ import annotations

import hashlib
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.ndimage import uniform_filter

from colorrecon.colorspace import lab_to_rgb, rgb_to_lab
from colorrecon.dataset import DISEASED, Manifest, load_image

MAGIC = b"CLKM"
MODEL_VERSION = 1
GRAY_MODES = ("luma601", "lab_l")
WINDOW = 5

_HEADER = struct.Struct("<4sHBB3HdhH")
_RECORD = np.dtype([("count", "<u4"), ("a", "<f8"), ("b", "<f8")])


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class BinConfig:
    intensity: int = 32
    mean: int = 16
    std: int = 8
    std_max: float = 64.0

    def __post_init__(self) -> None:
        for name in ("intensity", "mean", "std"):
            n = getattr(self, name)
            if not 1 <= n <= 0xFFFF:
                raise ValueError(f"bin count {name}={n} out of range")
        if not self.std_max > 0:
            raise ValueError("std_max must be positive")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.intensity, self.mean, self.std)

    @property
    def size(self) -> int:
        return self.intensity * self.mean * self.std


def to_gray(img: np.ndarray, mode: str = "lab_l") -> np.ndarray:
    """Grayscale intensity in [0, 255] as float64.

    ``luma601`` weights the 8-bit sRGB codes by 0.299/0.587/0.114;
    ``lab_l`` rescales CIELAB L* from [0, 100] to [0, 255].
    """
    if mode == "luma601":
        rgb = np.asarray(img, dtype=np.float64)
        return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114
    if mode == "lab_l":
        return rgb_to_lab(img)[..., 0] * 2.55
    raise ValueError(f"unknown gray mode {mode!r}; expected one of {GRAY_MODES}")


def _quantise(values: np.ndarray, n_bins: int, upper: float) -> np.ndarray:
    idx = np.floor(values * (n_bins / upper)).astype(np.int64)
    return np.clip(idx, 0, n_bins - 1)


def feature_bins(gray: np.ndarray, bins: BinConfig) -> np.ndarray:
    """Flat bin index per pixel, shape (H, W)."""
    mean = uniform_filter(gray, size=WINDOW, mode="nearest")
    sq_mean = uniform_filter(gray * gray, size=WINDOW, mode="nearest")
    std = np.sqrt(np.maximum(sq_mean - mean * mean, 0.0))
    i = _quantise(gray, bins.intensity, 256.0)
    m = _quantise(mean, bins.mean, 256.0)
    s = _quantise(std, bins.std, bins.std_max)
    return (i * bins.mean + m) * bins.std + s


def image_digest(img: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(img.shape, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(img, dtype=np.uint8).tobytes())
    return h.hexdigest()


class ChromaLookupModel:
    """Immutable per-bin median chroma table."""

    def __init__(
        self,
        bins: BinConfig,
        counts: np.ndarray,
        chroma: np.ndarray,
        gray_mode: str = "lab_l",
        background_threshold: int | None = None,
        training_id: str = "",
    ) -> None:
        if gray_mode not in GRAY_MODES:
            raise ValueError(f"unknown gray mode {gray_mode!r}")
        counts = np.asarray(counts, dtype=np.uint32)
        chroma = np.asarray(chroma, dtype=np.float64)
        if counts.shape != (bins.size,) or chroma.shape != (bins.size, 2):
            raise ModelError("bin table does not match the bin configuration")
        self.bins = bins
        self.counts = counts
        self.chroma = chroma
        self.gray_mode = gray_mode
        self.background_threshold = background_threshold
        self.training_id = training_id
        self.counts.setflags(write=False)
        self.chroma.setflags(write=False)

    @property
    def populated(self) -> np.ndarray:
        return np.flatnonzero(self.counts)

    @cached_property
    def fallback(self) -> np.ndarray:
        """For every bin, the index of the populated bin whose chroma it uses."""
        pop = self.populated
        if pop.size == 0:
            raise ModelError("model has no populated bins")
        all_idx = np.stack(np.unravel_index(np.arange(self.bins.size), self.bins.shape), axis=1)
        pop_idx = all_idx[pop]
        out = np.empty(self.bins.size, dtype=np.int64)
        for start in range(0, self.bins.size, 256):
            block = all_idx[start:start + 256]
            dist = np.abs(block[:, None, :] - pop_idx[None, :, :]).sum(axis=2)
            # first minimum wins; pop is ascending, i.e. lexicographic in (i, m, s)
            out[start:start + 256] = pop[np.argmin(dist, axis=1)]
        return out

    # -- serialization -----------------------------------------------------
    def to_bytes(self) -> bytes:
        tid = self.training_id.encode("utf-8")
        header = _HEADER.pack(
            MAGIC,
            MODEL_VERSION,
            GRAY_MODES.index(self.gray_mode),
            0,
            *self.bins.shape,
            self.bins.std_max,
            -1 if self.background_threshold is None else self.background_threshold,
            len(tid),
        )
        table = np.zeros(self.bins.size, dtype=_RECORD)
        table["count"] = self.counts
        table["a"] = self.chroma[:, 0]
        table["b"] = self.chroma[:, 1]
        return header + tid + struct.pack("<I", self.bins.size) + table.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ChromaLookupModel":
        if len(data) < _HEADER.size or data[:4] != MAGIC:
            raise ModelError("not a chroma lookup model (bad magic)")
        magic, version, mode, _, ni, nm, ns, std_max, bg, tid_len = _HEADER.unpack_from(data)
        if version != MODEL_VERSION:
            raise ModelError(f"unsupported model version {version}")
        if mode >= len(GRAY_MODES):
            raise ModelError(f"bad gray mode code {mode}")
        off = _HEADER.size
        tid = data[off:off + tid_len].decode("utf-8")
        off += tid_len
        (n_bins,) = struct.unpack_from("<I", data, off)
        off += 4
        bins = BinConfig(ni, nm, ns, std_max)
        if n_bins != bins.size or len(data) - off != n_bins * _RECORD.itemsize:
            raise ModelError("model bin table is truncated or inconsistent")
        table = np.frombuffer(data, dtype=_RECORD, offset=off)
        chroma = np.stack([table["a"], table["b"]], axis=1)
        return cls(bins, table["count"].copy(), chroma, GRAY_MODES[mode],
                   None if bg < 0 else bg, tid)

    def save(self, path: str | os.PathLike) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.tmp")
        tmp.write_bytes(self.to_bytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ChromaLookupModel":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise ModelError(f"cannot read model {path}: {exc}") from exc
        try:
            return cls.from_bytes(data)
        except ModelError as exc:
            raise ModelError(f"{path}: {exc}") from exc


def _partial(img: np.ndarray, bins: BinConfig, gray_mode: str,
             background_threshold: int | None) -> tuple[np.ndarray, np.ndarray, str]:
    """Bin indices and (a*, b*) of one training image, plus its digest."""
    lab = rgb_to_lab(img)
    gray = lab[..., 0] * 2.55 if gray_mode == "lab_l" else to_gray(img, gray_mode)
    idx = feature_bins(gray, bins).ravel()
    ab = lab[..., 1:].reshape(-1, 2)
    if background_threshold is not None:
        keep = (img.max(axis=-1) >= background_threshold).ravel()
        idx, ab = idx[keep], ab[keep]
    return idx, ab, image_digest(img)


def _bin_medians(idx: np.ndarray, values: np.ndarray, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(idx, minlength=n_bins)
    order = np.lexsort((values, idx))
    sorted_vals = values[order]
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pop = counts > 0
    lo = starts[pop] + (counts[pop] - 1) // 2
    hi = starts[pop] + counts[pop] // 2
    med = np.zeros(n_bins)
    med[pop] = 0.5 * (sorted_vals[lo] + sorted_vals[hi])
    return counts, med


def train_colorizer(
    healthy: Iterable[np.ndarray],
    bins: BinConfig = BinConfig(),
    gray_mode: str = "lab_l",
    background_threshold: int | None = None,
    jobs: int = 1,
) -> ChromaLookupModel:
    """Fit per-bin median chroma over a set of healthy images.

    ``background_threshold``: when set, pixels with max(R, G, B) below it are
    skipped. The result does not depend on image order.
    """
    if gray_mode not in GRAY_MODES:
        raise ValueError(f"unknown gray mode {gray_mode!r}")
    images = list(healthy)
    if not images:
        raise ModelError("training set is empty")

    def work(img: np.ndarray):
        return _partial(np.asarray(img, dtype=np.uint8), bins, gray_mode, background_threshold)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(work, images))
    else:
        parts = [work(img) for img in images]

    idx = np.concatenate([p[0] for p in parts])
    ab = np.concatenate([p[1] for p in parts])
    counts, med_a = _bin_medians(idx, ab[:, 0], bins.size)
    _, med_b = _bin_medians(idx, ab[:, 1], bins.size)
    if counts.max(initial=0) > 0xFFFFFFFF:
        raise ModelError("bin sample count overflows the model format")
    training_id = hashlib.sha256("".join(sorted(p[2] for p in parts)).encode()).hexdigest()
    return ChromaLookupModel(bins, counts, np.stack([med_a, med_b], axis=1),
                             gray_mode, background_threshold, training_id)


def train_from_manifest(manifest: Manifest, **kwargs) -> ChromaLookupModel:
    """Train on the manifest's train split, refusing any diseased entry."""
    entries = manifest.split("train")
    bad = [e.path for e in entries if e.label == DISEASED]
    if bad:
        raise ModelError(f"diseased images in training split: {bad[:3]}")
    return train_colorizer((load_image(manifest.resolve(e)) for e in entries), **kwargs)


@dataclass
class ReconstructionPair:
    original: np.ndarray
    reconstructed: np.ndarray
    source: str = "internal"

    def __post_init__(self) -> None:
        if self.original.shape != self.reconstructed.shape:
            raise ValueError(
                f"dimension mismatch: original {self.original.shape[:2]} vs "
                f"reconstruction {self.reconstructed.shape[:2]}"
            )


def reconstruct(model: ChromaLookupModel, query: np.ndarray,
                gray_mode: str | None = None) -> ReconstructionPair:
    """Recolor ``query`` from its grayscale form using ``model``.

    The output keeps the query's L*; ``gray_mode`` (default: the mode the
    model was trained with) only selects the features used for lookup.
    """
    gray_mode = gray_mode or model.gray_mode
    query = np.asarray(query, dtype=np.uint8)
    lightness = rgb_to_lab(query)[..., 0]
    gray = lightness * 2.55 if gray_mode == "lab_l" else to_gray(query, gray_mode)
    src = model.fallback[feature_bins(gray, model.bins)]
    lab = np.empty(query.shape, dtype=np.float64)
    lab[..., 0] = lightness
    lab[..., 1:] = model.chroma[src]
    return ReconstructionPair(query, lab_to_rgb(lab), "internal")


def load_external_pair(original_path: str | os.PathLike,
                       reconstructed_path: str | os.PathLike) -> ReconstructionPair:
    """Pair an original image with a reconstruction produced elsewhere (no resampling)."""
    original = load_image(original_path)
    recon = load_image(reconstructed_path)
    if original.shape != recon.shape:
        raise ValueError(
            f"dimension mismatch: {original_path} is {original.shape[1]}x{original.shape[0]}, "
            f"{reconstructed_path} is {recon.shape[1]}x{recon.shape[0]}"
        )
    return ReconstructionPair(original, recon, "external")

