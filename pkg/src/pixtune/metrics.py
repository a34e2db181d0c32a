"""Image quality metrics used as training costs (all higher-is-better).

SSIM follows Wang et al. 2004 with an 11x11 Gaussian window (sigma 1.5),
K1 = 0.01, K2 = 0.03 and unit dynamic range, averaged over the positions where
the window fits entirely inside the image.  Color images are scored per channel
and averaged.  MS-SSIM uses the five standard exponents, 2x2 mean pooling
between scales, and drops coarse scales that would be narrower than the window.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

PSNR_CAP = 99.0
MS_SSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
WINDOW = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03

METRICS = ("PSNR", "SSIM", "MS-SSIM")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """PSNR in dB for [0, 1] images, capped at 99 dB."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / err), PSNR_CAP))


def _gauss_taps(size=WINDOW, sigma=WINDOW_SIGMA):
    d = np.arange(size) - size // 2
    g = np.exp(-(d ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _valid_filter(x, taps):
    # separable correlation keeping only fully-contained windows
    half = taps.size // 2
    y = ndimage.correlate1d(x, taps, axis=0, mode="constant")
    y = ndimage.correlate1d(y, taps, axis=1, mode="constant")
    return y[half:x.shape[0] - half, half:x.shape[1] - half]


def _ssim_terms(a, b):
    """Per-position luminance and contrast-structure maps for one channel."""
    taps = _gauss_taps()
    c1 = K1 ** 2
    c2 = K2 ** 2
    mu_a = _valid_filter(a, taps)
    mu_b = _valid_filter(b, taps)
    # second moments around the window means, via a global shift for accuracy
    shift_a, shift_b = a.mean(), b.mean()
    a0, b0 = a - shift_a, b - shift_b
    m_a, m_b = mu_a - shift_a, mu_b - shift_b
    var_a = _valid_filter(a0 * a0, taps) - m_a * m_a
    var_b = _valid_filter(b0 * b0, taps) - m_b * m_b
    cov = _valid_filter(a0 * b0, taps) - m_a * m_b
    lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2.0 * cov + c2) / (var_a + var_b + c2)
    return lum, cs


def _channels(x):
    return [x] if x.ndim == 2 else [x[..., c] for c in range(x.shape[2])]


def ssim(a, b) -> float:
    a, b = _pair(a, b)
    if min(a.shape[:2]) < WINDOW:
        raise ValueError(f"SSIM needs images of at least {WINDOW}x{WINDOW}")
    scores = []
    for ca, cb in zip(_channels(a), _channels(b)):
        lum, cs = _ssim_terms(ca, cb)
        scores.append(np.mean(lum * cs))
    return float(np.mean(scores))


def ms_ssim_scales(shape) -> int:
    """Number of dyadic scales whose smallest side still fits the window."""
    m = min(shape[:2])
    scales = 0
    while scales < MS_SSIM_WEIGHTS.size and m >= WINDOW * 2 ** scales:
        scales += 1
    return scales


def _pool2(x):
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(a, b) -> float:
    """Multi-scale SSIM; negative contrast-structure terms are clipped at 0."""
    a, b = _pair(a, b)
    scales = ms_ssim_scales(a.shape)
    if scales == 0:
        raise ValueError(f"MS-SSIM needs images of at least {WINDOW}x{WINDOW}")
    weights = MS_SSIM_WEIGHTS[:scales] / MS_SSIM_WEIGHTS[:scales].sum()
    scores = []
    for ca, cb in zip(_channels(a), _channels(b)):
        value = 1.0
        for s in range(scales):
            lum, cs = _ssim_terms(ca, cb)
            term = np.mean(lum * cs) if s == scales - 1 else np.mean(cs)
            value *= max(term, 0.0) ** weights[s]
            ca, cb = _pool2(ca), _pool2(cb)
        scores.append(value)
    return float(np.mean(scores))


_METRIC_FUNCS = {"PSNR": psnr, "SSIM": ssim, "MS-SSIM": ms_ssim}


def metric_function(metric: str):
    try:
        return _METRIC_FUNCS[metric.upper()]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}") from None


def mean_cost(metric: str, pairs) -> float:
    """Arithmetic mean of ``metric`` over (processed, reference) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("mean_cost needs at least one pair")
    fn = metric_function(metric)
    return float(sum(fn(out, ref) for out, ref in pairs) / len(pairs))
