"""Quantum-inspired neighbourhood transform used as the segmentation input.

Every pixel is compared with its 3x3 neighbourhood through the overlap of two
single-qubit states, one encoding the pairwise intensity difference and one the
neighbourhood mean, and the overlaps are passed through a multi-level sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qmseg.imaging import GrayImage

OFFSETS = tuple((p, q) for p in (-1, 0, 1) for q in (-1, 0, 1))


@dataclass(frozen=True)
class FilterConfig:
    mu: float = 0.4
    levels: int = 8
    percentile: float = 0.9
    normalize_output: bool = True

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if not 0 < self.percentile < 1:
            raise ValueError(f"percentile must lie in (0, 1), got {self.percentile}")


def _padded(img: GrayImage) -> np.ndarray:
    return np.pad(img.data, 1, mode="edge")


def _neighbor(padded: np.ndarray, p: int, q: int) -> np.ndarray:
    h, w = padded.shape[0] - 2, padded.shape[1] - 2
    return padded[1 + p : 1 + p + h, 1 + q : 1 + q + w]


def alpha_pq(img: GrayImage, i: int, j: int, p: int, q: int) -> float:
    """Relative intensity difference 1 - (I[i+p, j+q] - I[i, j]), clamped-edge neighbours."""
    ni = min(max(i + p, 0), img.height - 1)
    nj = min(max(j + q, 0), img.width - 1)
    return 1.0 - (img.data[ni, nj] - img.data[i, j])


def neighborhood_mean_map(img: GrayImage) -> np.ndarray:
    padded = _padded(img)
    return sum(_neighbor(padded, p, q) for p, q in OFFSETS) / 9.0


def neighborhood_sum(img: GrayImage, i: int, j: int) -> float:
    """3x3 neighbourhood mean at (i, j) with replicate padding; lies in [0, 1]."""
    padded = _padded(img)
    return float(padded[i : i + 3, j : j + 3].sum() / 9.0)


def overlap(alpha, s):
    """<phi(alpha)|omega(s)> for real single-qubit states cos(pi t/2)|0> + sin(pi t/2)|1>."""
    a = np.pi / 2 * np.asarray(alpha)
    b = np.pi / 2 * np.asarray(s)
    return np.cos(a) * np.cos(b) + np.sin(a) * np.sin(b)


def omega_levels(img: GrayImage, cfg: FilterConfig) -> np.ndarray:
    levels = cfg.levels
    if levels == 2:
        return np.array([0.0, 1.0])
    w2 = float(np.quantile(img.flat, cfg.percentile, method="linear"))
    if w2 <= 0.0 or w2 >= 1.0:
        return np.linspace(0.0, 1.0, levels)
    upper = w2 + np.arange(levels - 1) * (1.0 - w2) / (levels - 2)
    upper[-1] = 1.0
    return np.concatenate([[0.0], upper])


def lambda_for(s, omegas: np.ndarray):
    """Class-dependent lambda = s / (w[k+1] - w[k]) with w[k] <= s < w[k+1]."""
    s = np.asarray(s, dtype=np.float64)
    k = np.searchsorted(omegas, s, side="right") - 1
    k = np.clip(k, 0, len(omegas) - 2)
    lam = s / (omegas[k + 1] - omegas[k])
    return lam if lam.ndim else float(lam)


def multilevel_sigmoid(x, lam, mu, eta):
    return 1.0 / (lam + np.exp(-mu * (np.asarray(x) - eta)))


def filter_response(img: GrayImage, cfg: FilterConfig, omegas: np.ndarray | None = None) -> np.ndarray:
    """Unnormalized single-pass transform z (finite; strictly positive wherever lambda > 0)."""
    if omegas is None:
        omegas = omega_levels(img, cfg)
    padded = _padded(img)
    s = neighborhood_mean_map(img)
    lam = lambda_for(s, omegas)
    intensity = img.data
    z = np.zeros_like(intensity)
    for p, q in OFFSETS:
        alpha = 1.0 - (_neighbor(padded, p, q) - intensity)
        z += multilevel_sigmoid(intensity * overlap(alpha, s), lam, cfg.mu, s)
    return z


def apply_filter(img: GrayImage, cfg: FilterConfig | None = None) -> GrayImage | np.ndarray:
    """One pass of the transform, min-max rescaled to [0, 1] (constant responses map to 0).

    With ``normalize_output=False`` the raw response array is returned instead,
    since it is not confined to the unit interval.
    """
    cfg = cfg or FilterConfig()
    z = filter_response(img, cfg)
    if cfg.normalize_output:
        lo, hi = z.min(), z.max()
        z = np.zeros_like(z) if hi == lo else (z - lo) / (hi - lo)
        return GrayImage(z)
    return z
