"""Per-pixel local descriptors and their assembly into feature maps.

Every window statistic uses mirror padding.  Entropies are Shannon entropies
in bits over ``bins`` equal-width bins (32 by default).  Gradient magnitudes
come from undivided central differences, ``x[i+1] - x[i-1]``, so they fall in
``[0, sqrt(2)]`` for [0, 1] images and fill the whole histogram range.

Bayer sources only use the sites of one color inside each window.  Gradients
on a Bayer channel difference same-color neighbors two pixels apart.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imaging import BayerMosaic, to_grayscale

KINDS = ("variance", "entropy", "gradient-entropy", "mean", "std", "mean-std-ratio")
SOURCES = ("luminance", "bayer-R", "bayer-G", "bayer-B")
DEFAULT_BINS = 32
RATIO_EPS = 1e-6
GRAD_MAX = float(np.sqrt(2.0))


@dataclass(frozen=True)
class Descriptor:
    kind: str
    window: int
    source: str = "luminance"
    bins: int = DEFAULT_BINS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown feature source {self.source!r}")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"feature window must be odd and >= 3, got {self.window}")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "window": self.window, "source": self.source, "bins": self.bins}


@dataclass(frozen=True)
class FeatureSpec:
    """Ordered descriptor list; slot 0 of every feature vector is the constant 1."""

    descriptors: tuple = ()

    @property
    def F(self) -> int:
        return 1 + len(self.descriptors)

    @property
    def needs_bayer(self) -> bool:
        return any(d.source != "luminance" for d in self.descriptors)

    def to_list(self) -> list:
        return [d.to_dict() for d in self.descriptors]

    @classmethod
    def from_list(cls, records) -> "FeatureSpec":
        return cls(tuple(Descriptor(**r) for r in records))


def anlm_feature_spec() -> FeatureSpec:
    """Variance 3/5, entropy 3/7, gradient entropy 3/7 on luminance (F = 7)."""
    return FeatureSpec((
        Descriptor("variance", 3), Descriptor("variance", 5),
        Descriptor("entropy", 3), Descriptor("entropy", 7),
        Descriptor("gradient-entropy", 3), Descriptor("gradient-entropy", 7),
    ))


def bayer_feature_spec(window: int = 7) -> FeatureSpec:
    """Variance, entropy and gradient entropy per Bayer color (F = 10)."""
    return FeatureSpec(tuple(
        Descriptor(kind, window, f"bayer-{c}")
        for c in "RGB"
        for kind in ("variance", "entropy", "gradient-entropy")
    ))


def tv_feature_spec() -> FeatureSpec:
    """Local mean, std and their ratio at 5x5 and 9x9 (F = 7)."""
    return FeatureSpec(tuple(
        Descriptor(kind, w) for w in (5, 9) for kind in ("mean", "std", "mean-std-ratio")
    ))


@dataclass
class FeatureMap:
    """(H, W, F) feature vectors; ``norm`` holds the (mean, std) pairs applied, if any."""

    values: np.ndarray
    norm: np.ndarray | None = None

    @property
    def F(self) -> int:
        return self.values.shape[-1]

    @property
    def shape(self):
        return self.values.shape[:2]

    def plane(self, i: int) -> np.ndarray:
        return self.values[..., i]


# ---------------------------------------------------------------------------
# window machinery


def box_sum(plane: np.ndarray, window: int) -> np.ndarray:
    """Sum over the ``window x window`` neighborhood of each pixel (mirror padded)."""
    half = window // 2
    p = np.pad(plane, half, mode="reflect")
    c = np.cumsum(p, axis=0)
    c = np.concatenate([np.zeros((1,) + c.shape[1:]), c], axis=0)
    c = c[window:] - c[:-window]
    c = np.cumsum(c, axis=1)
    c = np.concatenate([np.zeros((c.shape[0], 1) + c.shape[2:]), c], axis=1)
    return c[:, window:] - c[:, :-window]


def _entropy_from_counts(counts: np.ndarray, total: np.ndarray) -> np.ndarray:
    # counts: (bins, H, W)
    p = counts / np.maximum(total, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return np.maximum(-terms.sum(axis=0), 0.0)


def _bin_index(values: np.ndarray, bins: int, upper: float) -> np.ndarray:
    idx = np.floor(np.clip(values, 0.0, upper) / upper * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


def _windowed_entropy(values, window, bins, upper, mask=None):
    idx = _bin_index(values, bins, upper)
    weight = np.ones(values.shape) if mask is None else mask.astype(np.float64)
    total = box_sum(weight, window)
    counts = np.stack([box_sum((idx == b) * weight, window) for b in range(bins)])
    return _entropy_from_counts(counts, total)


def _gradient_magnitude(plane: np.ndarray, stride: int = 1) -> np.ndarray:
    p = np.pad(plane, stride, mode="reflect")
    h, w = plane.shape
    s = stride
    gx = p[s:s + h, 2 * s:2 * s + w] - p[s:s + h, 0:w]
    gy = p[2 * s:2 * s + h, s:s + w] - p[0:h, s:s + w]
    return np.minimum(np.sqrt(gx * gx + gy * gy), GRAD_MAX)


def _windowed_moments(plane, window, mask=None):
    weight = np.ones(plane.shape) if mask is None else mask.astype(np.float64)
    n = box_sum(weight, window)
    # Centering on a global offset keeps E[x^2] - E[x]^2 well conditioned.
    offset = plane[weight > 0].mean() if np.any(weight > 0) else 0.0
    x = (plane - offset) * weight
    s1 = box_sum(x, window)
    s2 = box_sum(x * (plane - offset), window)
    mean_c = s1 / n
    var = np.maximum(s2 / n - mean_c * mean_c, 0.0)
    return mean_c + offset, var


# ---------------------------------------------------------------------------
# public descriptors on a single plane


def local_variance(plane: np.ndarray, window: int) -> np.ndarray:
    """Population variance of each mirror-padded ``window x window`` neighborhood."""
    return _windowed_moments(np.asarray(plane, dtype=np.float64), window)[1]


def local_mean(plane: np.ndarray, window: int) -> np.ndarray:
    return _windowed_moments(np.asarray(plane, dtype=np.float64), window)[0]


def local_std(plane: np.ndarray, window: int) -> np.ndarray:
    return np.sqrt(local_variance(plane, window))


def mean_std_ratio(plane: np.ndarray, window: int) -> np.ndarray:
    mean, var = _windowed_moments(np.asarray(plane, dtype=np.float64), window)
    return np.sqrt(var) / (np.maximum(mean, 0.0) + RATIO_EPS)


def local_entropy(plane: np.ndarray, window: int, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Shannon entropy (bits) of the windowed intensity histogram on [0, 1]."""
    return _windowed_entropy(np.asarray(plane, dtype=np.float64), window, bins, 1.0)


def local_gradient_entropy(plane: np.ndarray, window: int, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Entropy of windowed central-difference gradient magnitudes on [0, sqrt(2)]."""
    mag = _gradient_magnitude(np.asarray(plane, dtype=np.float64))
    return _windowed_entropy(mag, window, bins, GRAD_MAX)


def _descriptor_plane(desc: Descriptor, plane: np.ndarray, mask=None) -> np.ndarray:
    w = desc.window
    if desc.kind == "entropy":
        return _windowed_entropy(plane, w, desc.bins, 1.0, mask)
    if desc.kind == "gradient-entropy":
        mag = _gradient_magnitude(plane, stride=1 if mask is None else 2)
        return _windowed_entropy(mag, w, desc.bins, GRAD_MAX, mask)
    mean, var = _windowed_moments(plane, w, mask)
    if desc.kind == "variance":
        return var
    if desc.kind == "mean":
        return mean
    if desc.kind == "std":
        return np.sqrt(var)
    return np.sqrt(var) / (np.maximum(mean, 0.0) + RATIO_EPS)


def build_feature_map(img, spec: FeatureSpec) -> FeatureMap:
    """Stack the descriptor planes of ``spec`` behind a constant-1 slot."""
    if isinstance(img, BayerMosaic):
        shape = img.shape
        masks = img.masks()
        samples = img.samples
        luminance = None
    else:
        img = np.asarray(img, dtype=np.float64)
        shape = img.shape[:2]
        luminance = to_grayscale(img)
    values = np.empty(shape + (spec.F,))
    values[..., 0] = 1.0
    for i, desc in enumerate(spec.descriptors, start=1):
        if desc.source == "luminance":
            if luminance is None:
                raise ValueError("luminance features need an RGB or gray image, not a mosaic")
            values[..., i] = _descriptor_plane(desc, luminance)
        else:
            if luminance is not None:
                raise ValueError(f"{desc.source} features need a BayerMosaic input")
            c = "RGB".index(desc.source[-1])
            values[..., i] = _descriptor_plane(desc, samples, masks[..., c])
    return FeatureMap(values)


def denoise_feature_map(fm: FeatureMap, guide: np.ndarray, sigma: float,
                        patch: int = 9, strength: float = 0.4, cfg=None) -> FeatureMap:
    """Smooth feature planes 1..F-1 by NLM whose matches and weights come from ``guide``.

    ``guide`` is the noisy image the features were computed from; ``sigma`` is its
    noise level in [0, 1] units.  Slot 0 is left untouched.
    """
    from .anlm import AnlmConfig, nlm_filter

    if fm.F == 1:
        return FeatureMap(fm.values.copy(), fm.norm)
    cfg = cfg or AnlmConfig(sigma=sigma)
    cfg = cfg.with_sigma(sigma)
    p0 = np.full(fm.shape, patch, dtype=np.int64)
    p1 = np.full(fm.shape, strength)
    smoothed = nlm_filter(fm.values[..., 1:], guide, p0, p1, cfg)
    values = np.concatenate([fm.values[..., :1], smoothed], axis=-1)
    return FeatureMap(values, fm.norm)
