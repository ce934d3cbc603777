"""Map-level primitives on float64 numpy arrays.

Tensors are plain ``numpy.ndarray`` objects (float64, row-major). A "map" is a
2D array ``[H, W]``. Every function here is pure and returns fresh arrays.
"""

import math

import numpy as np

from . import _kernels
from .errors import ContractError

DEGENERATE_EPS = 1e-12


def as_tensor(a, ndim=None, name="tensor"):
    """Convert to a contiguous float64 array, checking rank and finiteness."""
    t = np.ascontiguousarray(a, dtype=np.float64)
    if ndim is not None and t.ndim != ndim:
        raise ContractError(f"{name} must have rank {ndim}, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ContractError(f"{name} contains non-finite values")
    return t


def pearson(a, b):
    """Pearson correlation between two same-shape maps.

    Constant maps have no defined correlation; for those we return 1.0 when
    the two maps agree pointwise (within 1e-9) and 0.0 otherwise.
    """
    a = as_tensor(a, name="a")
    b = as_tensor(b, name="b")
    if a.shape != b.shape:
        raise ContractError(f"pearson: shape mismatch {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ContractError("pearson: need at least 2 elements")
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(np.mean(da * da))
    sb = math.sqrt(np.mean(db * db))
    if sa < DEGENERATE_EPS or sb < DEGENERATE_EPS:
        return 1.0 if float(np.max(np.abs(a - b))) < 1e-9 else 0.0
    r = float(np.mean(da * db)) / (sa * sb)
    return min(1.0, max(-1.0, r))


def normalize_max(m):
    """Scale a non-negative map so its maximum is 1.

    Returns ``(normalized, degenerate)``; an (almost) all-zero map is returned
    unchanged with ``degenerate=True``.
    """
    m = as_tensor(m, name="map")
    if m.size and m.min() < 0:
        raise ContractError("normalize_max: map has negative entries")
    peak = float(m.max()) if m.size else 0.0
    if peak < DEGENERATE_EPS:
        return m.copy(), True
    return m / peak, False


def bilinear_upsample(m, out_h, out_w):
    """Bilinear resize with half-pixel source centres and border clamping.

    Accepts a single map ``[H, W]`` or a stack ``[N, H, W]``.
    """
    m = as_tensor(m, name="map")
    if out_h < 1 or out_w < 1:
        raise ContractError(f"bilinear_upsample: bad output size {out_h}x{out_w}")
    if m.ndim not in (2, 3) or m.size == 0:
        raise ContractError(f"bilinear_upsample: expected non-empty [H,W] or [N,H,W], got {m.shape}")
    if m.ndim == 2:
        return _kernels.bilinear_resize(m[None], out_h, out_w)[0]
    return _kernels.bilinear_resize(m, out_h, out_w)


def gaussian_kernel1d(sigma):
    radius = int(math.ceil(3.0 * sigma))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(k * k) / (2.0 * sigma * sigma))
    return g / g.sum()


def gaussian_blur(img, sigma):
    """Separable Gaussian blur of a ``[C, H, W]`` image with edge replication."""
    img = as_tensor(img, ndim=3, name="image")
    if not sigma > 0:
        raise ContractError(f"gaussian_blur: sigma must be positive, got {sigma}")
    g = gaussian_kernel1d(sigma)
    r = (g.size - 1) // 2
    h, w = img.shape[1], img.shape[2]
    padded = np.pad(img, ((0, 0), (r, r), (r, r)), mode="edge")
    tmp = np.zeros((img.shape[0], h + 2 * r, w))
    for t in range(g.size):
        tmp += g[t] * padded[:, :, t : t + w]
    out = np.zeros_like(img)
    for t in range(g.size):
        out += g[t] * tmp[:, t : t + h, :]
    return out


def mean_l1(m):
    """Pixel-averaged L1 mass of a map with entries in [0, 1]."""
    m = as_tensor(m, name="map")
    if m.size == 0:
        raise ContractError("mean_l1: empty map")
    if m.min() < 0.0 or m.max() > 1.0:
        raise ContractError("mean_l1: entries must lie in [0, 1]")
    return float(np.abs(m).sum() / m.size)
