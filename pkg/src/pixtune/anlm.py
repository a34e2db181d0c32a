"""Approximate non-local means with per-pixel patch size and filtering strength.

For every reference pixel the ``N`` patches with the smallest squared distance
inside a ``(2R+1) x (2R+1)`` search window are kept (the pixel itself
included, ties broken by raster order of the offset).  Neighbor ``j`` gets the
weight::

    w_j = exp(-max(d2_j / (p0**2 * C) - 2 sigma**2, 0) / (p1 sigma)**2)

where ``C`` is the channel count of the guide, and the denoised patch is the
normalized combination ``sum_j w_j r_j / sum_j w_j``.  With patch accumulation
every denoised patch is added back into the image and each pixel is divided by
the number of patches that covered it.

Mirror padding supplies the patch and search overhang at the borders.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

AGGREGATIONS = ("patch-accumulate", "center-pixel")


@dataclass(frozen=True)
class AnlmConfig:
    sigma: float = 20.0 / 255.0
    n_neighbors: int = 16
    search_radius: int = 10
    aggregation: str = "patch-accumulate"

    def __post_init__(self):
        if self.n_neighbors < 1:
            raise ValueError("n_neighbors must be >= 1")
        if self.search_radius < 0:
            raise ValueError("search_radius must be >= 0")
        if (2 * self.search_radius + 1) ** 2 < self.n_neighbors:
            raise ValueError("search window holds fewer candidates than n_neighbors")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    def with_sigma(self, sigma: float) -> "AnlmConfig":
        return replace(self, sigma=float(sigma))


class PatchMatch(NamedTuple):
    offset: tuple  # (dx, dy)
    d2: float


def search_offsets(radius: int) -> np.ndarray:
    """(K, 2) array of (dy, dx) offsets in raster order."""
    d = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    return np.stack([dy.ravel(), dx.ravel()], axis=1)


def anlm_weight(d2, p0, p1, sigma, channels=1):
    """Patch weight for squared distance ``d2`` summed over the patch and channels."""
    d2 = np.asarray(d2, dtype=np.float64)
    per_sample = d2 / (np.asarray(p0, dtype=np.float64) ** 2 * channels)
    if sigma == 0:
        return np.where(per_sample <= 0.0, 1.0, 0.0)
    excess = np.maximum(per_sample - 2.0 * sigma ** 2, 0.0)
    return np.exp(-excess / (np.asarray(p1, dtype=np.float64) * sigma) ** 2)


def _as3d(img):
    img = np.asarray(img, dtype=np.float64)
    return img[..., None] if img.ndim == 2 else img


def _box_sum_axes12(a: np.ndarray, side: int) -> np.ndarray:
    # sliding sum of width `side` along axes 1 and 2 of a (n, h, w) stack
    c = np.cumsum(a, axis=1)
    c = np.concatenate([np.zeros_like(c[:, :1]), c], axis=1)
    c = c[:, side:] - c[:, :-side]
    c = np.cumsum(c, axis=2)
    c = np.concatenate([np.zeros_like(c[:, :, :1]), c], axis=2)
    return c[:, :, side:] - c[:, :, :-side]


def patch_distances(guide: np.ndarray, patch_radius: int, search_radius: int) -> np.ndarray:
    """Squared patch distances to every search offset: array (H, W, K)."""
    g = _as3d(guide)
    h, w, _ = g.shape
    r, big = patch_radius, search_radius
    pad = big + r
    gp = np.pad(g, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")
    ref = gp[big:big + h + 2 * r, big:big + w + 2 * r]
    side = 2 * big + 1
    out = np.empty((side, side, h, w))
    for iy, dy in enumerate(range(-big, big + 1)):
        rows = gp[big + dy:big + dy + h + 2 * r]
        cand = np.stack([rows[:, big + dx:big + dx + w + 2 * r] for dx in range(-big, big + 1)])
        diff = ((cand - ref[None]) ** 2).sum(axis=-1)
        out[iy] = _box_sum_axes12(diff, 2 * r + 1)
    return np.maximum(out.reshape(side * side, h, w).transpose(1, 2, 0), 0.0)


def rank_key(d2):
    return np.round(d2, 9)


def select_nearest(d2: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices (ascending) and distances of the n smallest entries along the last axis.

    Distances are ranked after rounding to a 1e-9 grid, so mathematically equal
    distances (mirror padding makes many at the borders) tie regardless of
    summation order; ties at the cut-off go to the lower index, i.e. raster order.
    """
    k = d2.shape[-1]
    if n >= k:
        idx = np.broadcast_to(np.arange(k), d2.shape).copy()
        return idx, d2.copy()
    key = rank_key(d2)
    kth = np.partition(key, n - 1, axis=-1)[..., n - 1:n]
    below = key < kth
    tied = key == kth
    need = n - below.sum(axis=-1, keepdims=True)
    chosen = below | (tied & (np.cumsum(tied, axis=-1) <= need))
    flat = chosen.reshape(-1, k)
    idx = np.nonzero(flat)[1].reshape(d2.shape[:-1] + (n,))
    return idx, np.take_along_axis(d2, idx, axis=-1)


class NeighborTable:
    """Lazily computed nearest-patch lists of one guide image, keyed by patch radius.

    Matches do not depend on the filtering strength, so training reuses one
    table per image across all objective evaluations.
    """

    def __init__(self, guide: np.ndarray, cfg: AnlmConfig):
        self.guide = _as3d(guide)
        self.cfg = cfg
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    @property
    def channels(self) -> int:
        return self.guide.shape[2]

    def get(self, radius: int) -> tuple[np.ndarray, np.ndarray]:
        radius = int(radius)
        if radius not in self._cache:
            d2 = patch_distances(self.guide, radius, self.cfg.search_radius)
            self._cache[radius] = select_nearest(d2, self.cfg.n_neighbors)
        return self._cache[radius]

    def gather(self, radii: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel neighbor indices and distances for a radius field."""
        h, w = radii.shape
        n = self.cfg.n_neighbors
        idx = np.empty((h, w, n), dtype=np.int64)
        d2 = np.empty((h, w, n))
        for r in np.unique(radii):
            mask = radii == r
            ri, rd = self.get(r)
            idx[mask] = ri[mask]
            d2[mask] = rd[mask]
        return idx, d2


def find_neighbors(img, center, patch: int, cfg: AnlmConfig) -> list[PatchMatch]:
    """The N best matches of the patch centered at ``center = (x, y)``.

    Sorted by distance, ties in raster order of the offset.  Computes the full
    distance table of the image; meant for inspection, not inner loops.
    """
    if patch % 2 == 0:
        raise ValueError("patch side must be odd")
    x, y = center
    d2 = patch_distances(img, patch // 2, cfg.search_radius)[y, x]
    offs = search_offsets(cfg.search_radius)
    order = np.lexsort((np.arange(d2.size), rank_key(d2)))[:cfg.n_neighbors]
    return [PatchMatch((int(offs[i, 1]), int(offs[i, 0])), float(d2[i])) for i in order]


def _field_arrays(field, shape):
    values = getattr(field, "values", field)
    values = np.asarray(values)
    if values.shape[:2] != shape or values.shape[-1] < 2:
        raise ValueError(f"parameter field of shape {values.shape} does not match image {shape}")
    return values[..., 0], values[..., 1]


def nlm_filter(values, guide, p0, p1, cfg: AnlmConfig, table: NeighborTable | None = None):
    """Filter ``values`` with matches and weights computed on ``guide``.

    ``p0`` (odd patch sides) and ``p1`` are per-pixel arrays of the image size.
    No clamping is applied, so arbitrary feature planes can be smoothed.
    """
    v = _as3d(values)
    squeeze = np.asarray(values).ndim == 2
    h, w, cv = v.shape
    p0 = np.broadcast_to(np.asarray(p0), (h, w)).astype(np.int64)
    p1 = np.broadcast_to(np.asarray(p1, dtype=np.float64), (h, w))
    if np.any(p0 < 1) or np.any(p0 % 2 == 0):
        raise ValueError("patch sizes must be odd and positive")
    if table is None:
        table = NeighborTable(guide, cfg)
    if table.guide.shape[:2] != (h, w):
        raise ValueError("guide and values differ in size")
    radii = p0 // 2
    idx, d2 = table.gather(radii)
    wgt = anlm_weight(d2, p0[..., None], p1[..., None], cfg.sigma, table.channels)
    wgt /= wgt.sum(axis=-1, keepdims=True)

    big = cfg.search_radius
    side = 2 * big + 1
    vp = np.pad(v, ((big, big), (big, big), (0, 0)), mode="reflect")
    offs = search_offsets(big)

    if cfg.aggregation == "center-pixel":
        yy, xx = np.mgrid[0:h, 0:w]
        rows = yy[..., None] + big + offs[idx, 0]
        cols = xx[..., None] + big + offs[idx, 1]
        picked = vp[rows, cols]  # (h, w, n, cv)
        out = np.einsum("hwn,hwnc->hwc", wgt, picked)
        return out[..., 0] if squeeze else out

    # patch-accumulate: spread each pixel's weights over its patch footprint
    # with 2-D difference arrays, one layer per search offset.
    yy, xx = np.mgrid[0:h, 0:w]
    y0 = np.maximum(yy - radii, 0)
    y1 = np.minimum(yy + radii, h - 1) + 1
    x0 = np.maximum(xx - radii, 0)
    x1 = np.minimum(xx + radii, w - 1) + 1
    stride = (h + 1) * (w + 1)
    layer = idx * stride
    corners = ((y0, x0, 1.0), (y0, x1, -1.0), (y1, x0, -1.0), (y1, x1, 1.0))
    pos = [cy * (w + 1) + cx for cy, cx, _ in corners]
    flat = np.concatenate([(layer + p[..., None]).ravel() for p in pos])
    signed = np.concatenate([(sign * wgt).ravel() for _, _, sign in corners])
    spread = np.bincount(flat, weights=signed, minlength=side * side * stride)
    spread = spread.reshape(side * side, h + 1, w + 1)
    np.cumsum(spread, axis=1, out=spread)
    np.cumsum(spread, axis=2, out=spread)
    count = np.bincount(np.concatenate([p.ravel() for p in pos]),
                        weights=np.repeat([c[2] for c in corners], h * w), minlength=stride)
    count = np.cumsum(np.cumsum(count.reshape(h + 1, w + 1), axis=0), axis=1)[:h, :w]

    num = np.zeros((h, w, cv))
    for k, (dy, dx) in enumerate(offs):
        layer_k = spread[k, :h, :w]
        if not layer_k.any():
            continue
        num += layer_k[..., None] * vp[big + dy:big + dy + h, big + dx:big + dx + w]
    out = num / count[..., None]
    return out[..., 0] if squeeze else out


def denoise(img, field, cfg: AnlmConfig, table: NeighborTable | None = None) -> np.ndarray:
    """ANLM with per-pixel (p0, p1) from ``field``; searches on ``img`` itself."""
    img = np.asarray(img, dtype=np.float64)
    p0, p1 = _field_arrays(field, img.shape[:2])
    out = nlm_filter(img, img, np.rint(p0).astype(np.int64), p1, cfg, table)
    return np.clip(out, 0.0, 1.0)


def denoise_global(img, p0: int, p1: float, cfg: AnlmConfig,
                   table: NeighborTable | None = None) -> np.ndarray:
    """ANLM with one patch size and strength for the whole image."""
    img = np.asarray(img, dtype=np.float64)
    field = np.empty(img.shape[:2] + (2,))
    field[..., 0] = p0
    field[..., 1] = p1
    return denoise(img, field, cfg, table)
