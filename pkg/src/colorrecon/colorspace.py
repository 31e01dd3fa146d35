"""sRGB <-> CIELAB conversion and the CIEDE2000 color difference.

Conversions assume 8-bit sRGB with the IEC 61966-2-1 transfer function,
a D65 white and the 2 degree observer. The white point is taken as the
row sums of the RGB->XYZ matrix so that every neutral gray lands exactly
on the a* = b* = 0 axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_RGB_TO_XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
WHITE_XYZ = _RGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0
_POW25_7 = 25.0**7


def _srgb_decode(v: np.ndarray) -> np.ndarray:
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def _srgb_encode(v: np.ndarray) -> np.ndarray:
    v = np.clip(v, 0.0, 1.0)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1.0 / 2.4) - 0.055)


# 8-bit code -> linear light; every uint8 input goes through this table.
_LINEAR_LUT = _srgb_decode(np.arange(256, dtype=np.float64) / 255.0)


def _f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3 * _DELTA**2) + 4.0 / 29.0)


def _f_inv(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA, t**3, 3 * _DELTA**2 * (t - 4.0 / 29.0))


def linear_to_lab(rgb_linear: np.ndarray) -> np.ndarray:
    xyz = rgb_linear @ (_RGB_TO_XYZ / WHITE_XYZ[:, None]).T
    fx, fy, fz = (_f(xyz[..., i]) for i in range(3))
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    """Convert an 8-bit sRGB array of shape (..., 3) to float64 CIELAB."""
    img = np.asarray(img)
    if img.shape[-1] != 3:
        raise ValueError(f"expected trailing RGB axis of length 3, got shape {img.shape}")
    if img.dtype == np.uint8:
        lin = _LINEAR_LUT[img]
    else:
        lin = _srgb_decode(np.asarray(img, dtype=np.float64) / 255.0)
    return linear_to_lab(lin)


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    """Convert CIELAB of shape (..., 3) to 8-bit sRGB.

    Out-of-gamut colors are clamped per channel; values are rounded half up.
    """
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_f_inv(fx), _f_inv(fy), _f_inv(fz)], axis=-1) * WHITE_XYZ
    encoded = _srgb_encode(xyz @ _XYZ_TO_RGB.T)
    return np.floor(encoded * 255.0 + 0.5).astype(np.uint8)


@dataclass(frozen=True)
class DeltaE2000Breakdown:
    dLp: float
    dCp: float
    dHp: float
    sL: float
    sC: float
    sH: float
    rT: float
    kL: float
    kC: float
    kH: float
    value: float

    def recombine(self) -> float:
        lt = self.dLp / (self.kL * self.sL)
        ct = self.dCp / (self.kC * self.sC)
        ht = self.dHp / (self.kH * self.sH)
        return math.sqrt(max(lt * lt + ct * ct + ht * ht + self.rT * ct * ht, 0.0))


def ciede2000_terms(
    lab1: np.ndarray, lab2: np.ndarray, k: Sequence[float] = (1.0, 1.0, 1.0)
) -> dict[str, np.ndarray]:
    """Vectorised CIEDE2000 with every intermediate exposed.

    ``lab1`` and ``lab2`` broadcast against each other with a trailing axis
    of length 3. Returns a dict keyed like :class:`DeltaE2000Breakdown`.
    Hue angles are in degrees internally; a zero-chroma sample gets hue 0
    and contributes no hue difference.
    """
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    kL, kC, kH = (float(v) for v in k)
    if min(kL, kC, kH) <= 0:
        raise ValueError(f"weighting factors must be positive, got {tuple(k)}")
    if not (np.isfinite(lab1).all() and np.isfinite(lab2).all()):
        raise ValueError("CIEDE2000 inputs must be finite")

    L1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    L2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    c_bar = 0.5 * (np.hypot(a1, b1) + np.hypot(a2, b2))
    c_bar7 = c_bar**7
    g = 0.5 * (1.0 - np.sqrt(c_bar7 / (c_bar7 + _POW25_7)))
    a1p = (1.0 + g) * a1
    a2p = (1.0 + g) * a2
    c1p = np.hypot(a1p, b1)
    c2p = np.hypot(a2p, b2)
    h1p = np.where(c1p == 0, 0.0, np.degrees(np.arctan2(b1, a1p)) % 360.0)
    h2p = np.where(c2p == 0, 0.0, np.degrees(np.arctan2(b2, a2p)) % 360.0)

    chroma_zero = (c1p * c2p) == 0
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, np.where(dh < -180.0, dh + 360.0, dh))
    dh = np.where(chroma_zero, 0.0, dh)

    dLp = L2 - L1
    dCp = c2p - c1p
    dHp = 2.0 * np.sqrt(c1p * c2p) * np.sin(np.radians(dh) / 2.0)

    l_bar = 0.5 * (L1 + L2)
    cp_bar = 0.5 * (c1p + c2p)
    h_sum = h1p + h2p
    h_bar = np.where(
        np.abs(h1p - h2p) <= 180.0,
        h_sum / 2.0,
        np.where(h_sum < 360.0, (h_sum + 360.0) / 2.0, (h_sum - 360.0) / 2.0),
    )
    h_bar = np.where(chroma_zero, h_sum, h_bar)

    t = (
        1.0
        - 0.17 * np.cos(np.radians(h_bar - 30.0))
        + 0.24 * np.cos(np.radians(2.0 * h_bar))
        + 0.32 * np.cos(np.radians(3.0 * h_bar + 6.0))
        - 0.20 * np.cos(np.radians(4.0 * h_bar - 63.0))
    )
    d_theta = 30.0 * np.exp(-(((h_bar - 275.0) / 25.0) ** 2))
    cp_bar7 = cp_bar**7
    r_c = 2.0 * np.sqrt(cp_bar7 / (cp_bar7 + _POW25_7))
    l50 = (l_bar - 50.0) ** 2
    sL = 1.0 + 0.015 * l50 / np.sqrt(20.0 + l50)
    sC = 1.0 + 0.045 * cp_bar
    sH = 1.0 + 0.015 * cp_bar * t
    rT = -np.sin(np.radians(2.0 * d_theta)) * r_c

    lt = dLp / (kL * sL)
    ct = dCp / (kC * sC)
    ht = dHp / (kH * sH)
    value = np.sqrt(np.maximum(lt * lt + ct * ct + ht * ht + rT * ct * ht, 0.0))
    return {
        "dLp": dLp, "dCp": dCp, "dHp": dHp,
        "sL": sL, "sC": sC, "sH": sH, "rT": rT,
        "kL": kL, "kC": kC, "kH": kH,
        "value": value,
    }


def delta_e_2000_array(
    lab1: np.ndarray, lab2: np.ndarray, k: Sequence[float] = (1.0, 1.0, 1.0)
) -> np.ndarray:
    return ciede2000_terms(lab1, lab2, k)["value"]


def delta_e_2000(
    p: Sequence[float], q: Sequence[float], k: Sequence[float] = (1.0, 1.0, 1.0)
) -> DeltaE2000Breakdown:
    """CIEDE2000 difference between two Lab triplets, with its intermediates.

    >>> round(delta_e_2000((50, 2.5, 0), (73, 25, -18)).value, 4)
    27.1492
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != (3,) or q.shape != (3,):
        raise ValueError("delta_e_2000 expects two Lab triplets")
    terms = ciede2000_terms(p, q, k)
    return DeltaE2000Breakdown(**{name: float(v) for name, v in terms.items()})
