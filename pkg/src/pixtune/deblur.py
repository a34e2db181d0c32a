"""Poisson deblurring with a spatially varying, smoothed total-variation prior.

The observed image ``i`` (in [0, 1], scaled by ``photon_max`` photons) is
modelled as Poisson counts of ``H o``.  The estimate minimizes::

    C(o) = photon_max * sum(z - i + i ln(i / z))  +  s * sum_xy p0_xy sqrt(gx^2 + gy^2 + eps^2)

with ``z = H o``, forward differences ``gx, gy`` under mirror boundaries and
``s`` the TV scale (``photon_max`` by default, so both terms are in photons).
It is solved by projected steepest descent with backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imaging import check_kernel, gaussian_kernel

TV_UNITS = ("photons", "unit")


@dataclass(frozen=True)
class DeblurConfig:
    kernel: np.ndarray = field(default_factory=gaussian_kernel)
    photon_max: float = 1024.0
    iterations: int = 300
    step: float = 1.0
    tv_epsilon: float = 1e-4
    nonneg_floor: float = 1e-8
    max_halvings: int = 20
    step_growth: float = 1.0
    tv_units: str = "photons"

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        check_kernel(k)
        object.__setattr__(self, "kernel", k)
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.tv_epsilon > 0:
            raise ValueError("tv_epsilon must be > 0")
        if not self.photon_max > 0:
            raise ValueError("photon_max must be > 0")
        if not self.step > 0:
            raise ValueError("step must be > 0")
        if self.step_growth < 1:
            raise ValueError("step_growth must be >= 1")
        if self.tv_units not in TV_UNITS:
            raise ValueError(f"tv_units must be one of {TV_UNITS}")

    @property
    def tv_scale(self) -> float:
        return self.photon_max if self.tv_units == "photons" else 1.0

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.tolist(),
            "photon_max": self.photon_max,
            "iterations": self.iterations,
            "step": self.step,
            "tv_epsilon": self.tv_epsilon,
            "nonneg_floor": self.nonneg_floor,
            "max_halvings": self.max_halvings,
            "step_growth": self.step_growth,
            "tv_units": self.tv_units,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeblurConfig":
        d = dict(d)
        if "kernel" in d:
            d["kernel"] = np.asarray(d["kernel"], dtype=np.float64)
        return cls(**d)


@dataclass
class DeblurResult:
    image: np.ndarray  # final iterate clamped to [0, 1]
    estimate: np.ndarray  # final iterate before clamping (>= floor)
    costs: list  # cost after every accepted iterate, starting with C(o0)
    iterations: int
    stalled: bool = False  # backtracking ran out of halvings
    clamped_prediction: bool = False


# ---------------------------------------------------------------------------
# blur operator and its adjoint


def blur(o: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """H o: correlation with mirror boundaries."""
    return ndimage.correlate(o, kernel, mode="mirror")


def _fold_reflect(padded: np.ndarray, r: int) -> np.ndarray:
    # adjoint of np.pad(x, r, mode="reflect") for a 2-D array
    a = padded.copy()
    for axis in (0, 1):
        a = np.moveaxis(a, axis, 0)
        n = a.shape[0] - 2 * r
        core = a[r:r + n].copy()
        for j in range(1, r + 1):
            core[j] += a[r - j]
            core[n - 1 - j] += a[r + n - 1 + j]
        a = np.moveaxis(core, 0, axis)
    return a


def blur_adjoint(v: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """H^T v for :func:`blur`."""
    kh, kw = kernel.shape
    rh, rw = kh // 2, kw // 2
    if rh != rw:
        raise ValueError("kernel must be square")
    h, w = v.shape
    full = np.zeros((h + 2 * rh, w + 2 * rw))
    # scatter: padded[y + a, x + b] receives k[a, b] * v[y, x]
    for a in range(kh):
        for b in range(kw):
            if kernel[a, b] != 0.0:
                full[a:a + h, b:b + w] += kernel[a, b] * v
    return _fold_reflect(full, rh)


# ---------------------------------------------------------------------------
# data term


def kl_poisson(i: np.ndarray, z: np.ndarray, photon_max: float, floor: float = 1e-8) -> float:
    """photon_max * sum(z - i + i ln(i/z)); the i = 0 terms reduce to z."""
    i = np.asarray(i, dtype=np.float64)
    z = np.maximum(np.asarray(z, dtype=np.float64), floor)
    pos = i > 0
    log_term = np.zeros_like(i)
    log_term[pos] = i[pos] * np.log(i[pos] / z[pos])
    return float(photon_max * np.sum(z - i + log_term))


def kl_gradient(i: np.ndarray, o: np.ndarray, kernel: np.ndarray, photon_max: float,
                floor: float = 1e-8) -> np.ndarray:
    """Gradient of ``kl_poisson(i, H o)`` with respect to ``o``."""
    z = np.maximum(blur(o, kernel), floor)
    return photon_max * blur_adjoint(1.0 - i / z, kernel)


# ---------------------------------------------------------------------------
# smoothed total variation


def _forward_diff(o):
    gx = np.zeros_like(o)
    gy = np.zeros_like(o)
    gx[:, :-1] = o[:, 1:] - o[:, :-1]
    gy[:-1] = o[1:] - o[:-1]
    # mirror boundary: the sample past the edge equals its inner neighbor
    gx[:, -1] = o[:, -2] - o[:, -1]
    gy[-1] = o[-2] - o[-1]
    return gx, gy


def tv_pixel(o: np.ndarray, eps: float) -> np.ndarray:
    """Per-pixel smoothed gradient magnitude sqrt(gx^2 + gy^2 + eps^2)."""
    o = np.asarray(o, dtype=np.float64)
    if o.ndim != 2:
        raise ValueError("TV is defined for single-channel images")
    gx, gy = _forward_diff(o)
    return np.sqrt(gx * gx + gy * gy + eps * eps)


def tv_value(o: np.ndarray, eps: float, weights=None) -> float:
    mag = tv_pixel(o, eps)
    if weights is not None:
        mag = mag * weights
    return float(np.sum(mag))


def _diff_adjoint(a: np.ndarray, axis: int) -> np.ndarray:
    # transpose of the forward difference in _forward_diff along `axis`
    a = np.moveaxis(a, axis, -1)
    out = -a.copy()
    out[..., 1:] += a[..., :-1]
    out[..., -2] += a[..., -1]
    # the mirrored last entry is o[-2] - o[-1]: -a[-1] already applied to o[-1]
    return np.moveaxis(out, -1, axis)


def tv_gradient(o: np.ndarray, eps: float, weights=None) -> np.ndarray:
    """Exact gradient of ``tv_value(o, eps, weights)``."""
    o = np.asarray(o, dtype=np.float64)
    gx, gy = _forward_diff(o)
    mag = np.sqrt(gx * gx + gy * gy + eps * eps)
    scale = 1.0 / mag if weights is None else weights / mag
    return _diff_adjoint(gx * scale, 1) + _diff_adjoint(gy * scale, 0)


# ---------------------------------------------------------------------------
# objective and solver


def _field_plane(field, shape):
    v = np.asarray(getattr(field, "values", field), dtype=np.float64)
    if v.ndim == 3:
        v = v[..., 0]
    v = np.broadcast_to(v, shape)
    if np.any(v < 0):
        raise ValueError("regularization field must be non-negative")
    return v


def cost_value(i, o_hat, field, cfg: DeblurConfig) -> float:
    i = np.asarray(i, dtype=np.float64)
    o_hat = np.asarray(o_hat, dtype=np.float64)
    if i.shape != o_hat.shape:
        raise ValueError("observed and estimate differ in shape")
    p0 = _field_plane(field, i.shape)
    kl = kl_poisson(i, blur(o_hat, cfg.kernel), cfg.photon_max, cfg.nonneg_floor)
    return kl + cfg.tv_scale * tv_value(o_hat, cfg.tv_epsilon, p0)


def cost_gradient(i, o_hat, field, cfg: DeblurConfig) -> np.ndarray:
    p0 = _field_plane(field, np.shape(i))
    g = kl_gradient(i, o_hat, cfg.kernel, cfg.photon_max, cfg.nonneg_floor)
    return g + cfg.tv_scale * tv_gradient(o_hat, cfg.tv_epsilon, p0)


def solve(i, field, cfg: DeblurConfig | None = None) -> DeblurResult:
    """Projected steepest descent from o0 = i with backtracking halving.

    The step carried into the next iteration is the last accepted one times
    ``step_growth`` (no growth with ``step_growth = 1``).
    """
    cfg = cfg or DeblurConfig()
    i = np.asarray(i, dtype=np.float64)
    if i.ndim != 2:
        raise ValueError("deblurring works on single-channel images")
    p0 = _field_plane(field, i.shape)
    floor = cfg.nonneg_floor
    o = np.maximum(i, floor)
    clamped = bool(np.any(blur(o, cfg.kernel) < floor))
    cost = cost_value(i, o, p0, cfg)
    costs = [cost]
    step = cfg.step
    stalled = False
    it = 0
    for it in range(1, cfg.iterations + 1):
        g = cost_gradient(i, o, p0, cfg)
        if not np.any(g):
            it -= 1
            break
        for _ in range(cfg.max_halvings + 1):
            cand = np.maximum(o - step * g, floor)
            c = cost_value(i, cand, p0, cfg)
            if c < cost:
                break
            step *= 0.5
        else:
            stalled = True
            it -= 1
            break
        o, cost = cand, c
        costs.append(cost)
        step *= cfg.step_growth
    return DeblurResult(np.clip(o, 0.0, 1.0), o, costs, it, stalled, clamped)


def deblur(i, field, cfg: DeblurConfig | None = None) -> np.ndarray:
    return solve(i, field, cfg).image
