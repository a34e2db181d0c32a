"""Built-in Bayer demosaicers and per-pixel convex blending of their outputs.

Three reconstructions are provided:

``bilinear``
    per-channel linear interpolation of the missing sites.
``gradient-corrected``
    bilinear plus the fixed 5x5 cross-channel gradient corrections of
    Malvar, He & Cutler (2004).
``edge-directed``
    green interpolated along the axis with the smaller green difference,
    then the R-G and B-G differences interpolated bilinearly.

All of them return the measured CFA samples unchanged and clamp to [0, 1].
Other demosaicers can be added with :func:`register_demosaicer`; the CLI also
accepts their outputs as image files.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .imaging import BayerMosaic, save_image

K_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4.0
K_G = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4.0

# Malvar-He-Cutler taps, in units of 1/8
_MHC_G_AT_RB = np.array([
    [0, 0, -1, 0, 0],
    [0, 0, 2, 0, 0],
    [-1, 2, 4, 2, -1],
    [0, 0, 2, 0, 0],
    [0, 0, -1, 0, 0],
]) / 8.0
_MHC_ROW = np.array([  # other color at green, same-row neighbors carry it
    [0, 0, 0.5, 0, 0],
    [0, -1, 0, -1, 0],
    [-1, 4, 5, 4, -1],
    [0, -1, 0, -1, 0],
    [0, 0, 0.5, 0, 0],
]) / 8.0
_MHC_COL = _MHC_ROW.T.copy()
_MHC_DIAG = np.array([  # R at B and B at R
    [0, 0, -1.5, 0, 0],
    [0, 2, 0, 2, 0],
    [-1.5, 0, 6, 0, -1.5],
    [0, 2, 0, 2, 0],
    [0, 0, -1.5, 0, 0],
]) / 8.0

BLEND_EPS = 1e-12


def _corr(x, k):
    return ndimage.correlate(x, k, mode="mirror")


def _finish(m: BayerMosaic, out: np.ndarray) -> np.ndarray:
    masks = m.masks()
    out[masks] = np.repeat(m.samples[..., None], 3, axis=2)[masks]
    return np.clip(out, 0.0, 1.0)


def demosaic_bilinear(m: BayerMosaic) -> np.ndarray:
    masks = m.masks()
    out = np.empty(m.shape + (3,))
    for c in range(3):
        k = K_G if c == 1 else K_RB
        out[..., c] = _corr(m.samples * masks[..., c], k)
    return _finish(m, out)


def demosaic_gradient_corrected(m: BayerMosaic) -> np.ndarray:
    s = m.samples
    idx = m.channel_index()
    red_rows = np.any(idx == 0, axis=1)[:, None] & np.ones(s.shape, dtype=bool)
    green = idx == 1
    g_at_rb = _corr(s, _MHC_G_AT_RB)
    row = _corr(s, _MHC_ROW)
    col = _corr(s, _MHC_COL)
    diag = _corr(s, _MHC_DIAG)

    out = np.empty(s.shape + (3,))
    out[..., 1] = np.where(green, s, g_at_rb)
    # red: at green sites from the row or column taps, at blue sites diagonal
    out[..., 0] = np.where(green, np.where(red_rows, row, col), diag)
    out[..., 2] = np.where(green, np.where(red_rows, col, row), diag)
    return _finish(m, out)


def demosaic_edge_directed(m: BayerMosaic) -> np.ndarray:
    s = m.samples
    masks = m.masks()
    green = masks[..., 1]
    gp = np.pad(s, 1, mode="reflect")
    left, right = gp[1:-1, :-2], gp[1:-1, 2:]
    up, down = gp[:-2, 1:-1], gp[2:, 1:-1]
    dh = np.abs(left - right)
    dv = np.abs(up - down)
    g_h = 0.5 * (left + right)
    g_v = 0.5 * (up + down)
    g_est = np.where(dh < dv, g_h, np.where(dv < dh, g_v, 0.5 * (g_h + g_v)))
    g = np.where(green, s, g_est)

    out = np.empty(s.shape + (3,))
    out[..., 1] = g
    for c in (0, 2):
        diff = (s - g) * masks[..., c]
        out[..., c] = g + _corr(diff, K_RB)
    return _finish(m, out)


DEMOSAICERS = {
    "bilinear": demosaic_bilinear,
    "gradient-corrected": demosaic_gradient_corrected,
    "edge-directed": demosaic_edge_directed,
}
BUILTIN_IDS = tuple(DEMOSAICERS)


def register_demosaicer(name: str, fn) -> None:
    """Make ``fn(BayerMosaic) -> (H, W, 3) array`` available under ``name``."""
    if name in DEMOSAICERS:
        raise ValueError(f"demosaicer {name!r} already registered")
    DEMOSAICERS[name] = fn


def demosaic(m: BayerMosaic, name: str) -> np.ndarray:
    try:
        fn = DEMOSAICERS[name]
    except KeyError:
        raise ValueError(f"unknown demosaicer {name!r}; choose from {sorted(DEMOSAICERS)}") from None
    return fn(m)


def _weights(field, shape=None) -> np.ndarray:
    w = np.asarray(getattr(field, "values", field), dtype=np.float64)
    if shape is not None and w.shape[:2] != shape:
        raise ValueError(f"blend field {w.shape[:2]} does not match image {shape}")
    return w


def normalized_weights(field) -> np.ndarray:
    """p^k / sum_k p^k per pixel, uniform where the sum underflows."""
    w = _weights(field)
    total = w.sum(axis=-1, keepdims=True)
    ok = total >= BLEND_EPS
    safe = np.where(ok, total, 1.0)
    return np.where(ok, w / safe, 1.0 / w.shape[-1])


def blend(outputs, field) -> np.ndarray:
    """Per-pixel weighted mean of the ``outputs`` with weights ``p^k / sum p^k``."""
    outputs = [np.asarray(o, dtype=np.float64) for o in outputs]
    if len(outputs) < 2:
        raise ValueError("blend needs at least two outputs")
    shape = outputs[0].shape
    if any(o.shape != shape for o in outputs):
        raise ValueError("blend outputs differ in shape")
    w = _weights(field, shape[:2])
    if w.shape[-1] != len(outputs):
        raise ValueError(f"blend field has {w.shape[-1]} weights for {len(outputs)} outputs")
    nw = normalized_weights(w)
    out = np.zeros(shape)
    for k, o in enumerate(outputs):
        wk = nw[..., k]
        out += (wk[..., None] if o.ndim == 3 else wk) * o
    return out


def blend_adaptive(m: BayerMosaic, model, ids=BUILTIN_IDS, outputs=None) -> np.ndarray:
    """Features of the mosaic -> blend field -> blend of the demosaicers.

    ``outputs`` may supply precomputed (or external) reconstructions in the
    order of ``ids``.
    """
    from .features import build_feature_map
    from .model import map_field

    if model.processor != "blend":
        raise ValueError(f"model is for processor {model.processor!r}, not blend")
    if model.P != len(ids):
        raise ValueError(f"model blends {model.P} demosaicers, {len(ids)} given")
    field = map_field(build_feature_map(m, model.feature_spec), model)
    if outputs is None:
        outputs = [demosaic(m, k) for k in ids]
    return blend(outputs, field)


def blend_map_image(field) -> np.ndarray:
    """RGB rendering of the normalized blending factors (channel k = factor k)."""
    w = _weights(field)
    if w.shape[-1] > 3:
        raise ValueError("blend maps can show at most three factors")
    nw = normalized_weights(w)
    out = np.zeros(w.shape[:2] + (3,))
    out[..., :w.shape[-1]] = nw
    return out


def export_blend_map(field, path, bitdepth: int = 8) -> None:
    save_image(blend_map_image(field), path, bitdepth)
