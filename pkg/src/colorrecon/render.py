"""Heat-map rendering of CIEDE2000 difference maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_STOPS = (
    (0.0, (0, 0, 139)),      # dark blue
    (0.25, (0, 255, 255)),   # cyan
    (0.5, (0, 255, 0)),      # green
    (0.75, (255, 255, 0)),   # yellow
    (1.0, (255, 0, 0)),      # red
)


@dataclass(frozen=True)
class ColormapSpec:
    stops: tuple[tuple[float, tuple[int, int, int]], ...] = DEFAULT_STOPS
    lo: float = 0.0
    hi: float = 50.0
    mode: str = "fixed"  # or "per-image-max"

    def __post_init__(self) -> None:
        pos = [p for p, _ in self.stops]
        if len(pos) < 2 or pos[0] != 0.0 or pos[-1] != 1.0:
            raise ValueError("colormap stops must start at 0 and end at 1")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValueError("colormap stop positions must be strictly increasing")
        if self.mode not in ("fixed", "per-image-max"):
            raise ValueError(f"unknown colormap mode {self.mode!r}")
        if self.mode == "fixed" and not self.lo < self.hi:
            raise ValueError(f"colormap range needs lo < hi, got {self.lo}:{self.hi}")


def render_heatmap(dmap: np.ndarray, spec: ColormapSpec = ColormapSpec()) -> np.ndarray:
    """Map a (H, W) difference map to an (H, W, 3) uint8 image."""
    dmap = np.asarray(dmap, dtype=np.float64)
    if spec.mode == "fixed":
        lo, hi = spec.lo, spec.hi
    else:
        lo, hi = 0.0, float(dmap.max(initial=0.0))
    if hi > lo:
        t = (np.clip(dmap, lo, hi) - lo) / (hi - lo)
    else:
        t = np.zeros_like(dmap)
    pos = np.array([p for p, _ in spec.stops])
    colors = np.array([c for _, c in spec.stops], dtype=np.float64)
    out = np.stack([np.interp(t, pos, colors[:, ch]) for ch in range(3)], axis=-1)
    return np.floor(out + 0.5).astype(np.uint8)


def composite(original: np.ndarray, reconstruction: np.ndarray, heatmap: np.ndarray) -> np.ndarray:
    """Side-by-side ``original | reconstruction | heatmap``."""
    return np.concatenate([original, reconstruction, heatmap], axis=1)


def parse_colormap_range(text: str) -> ColormapSpec:
    """``"lo:hi"`` for a fixed clamp range, ``"auto"`` for per-image max."""
    if text == "auto":
        return ColormapSpec(mode="per-image-max")
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise ValueError(f"colormap range must be 'lo:hi' or 'auto', got {text!r}") from None
    return ColormapSpec(lo=lo, hi=hi)
