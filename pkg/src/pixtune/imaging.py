"""Image representation, file I/O and degradation synthesis.

Images are float64 numpy arrays with samples in [0, 1]: shape ``(H, W)`` for
grayscale and ``(H, W, 3)`` for RGB.  Bayer mosaics carry their CFA layout in a
small :class:`BayerMosaic` wrapper.

Boundaries are mirrored everywhere (reflect without repeating the edge sample,
numpy ``'reflect'`` / scipy ``'mirror'``).  That mode keeps the parity of the
Bayer pattern intact, which the demosaicers and the Bayer features rely on.

Random synthesis uses numpy's PCG64 ``Generator``: Gaussian draws come from
its ziggurat sampler, Poisson draws from inversion for means below 10 and
PTRS above.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import png
from scipy import ndimage

LAYOUTS = ("RGGB", "BGGR", "GRBG", "GBRG")
_CHANNEL_INDEX = {"R": 0, "G": 1, "B": 2}

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class ImageIOError(OSError):
    """Raised when an image or kernel file cannot be read or written."""


@dataclass(frozen=True)
class BayerMosaic:
    """Single-channel CFA samples plus the 2x2 layout tag (e.g. ``"RGGB"``)."""

    samples: np.ndarray
    layout: str = "RGGB"

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown CFA layout {self.layout!r}")
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2:
            raise ValueError("mosaic samples must be a 2-D array")
        if s.shape[0] % 2 or s.shape[1] % 2:
            raise ValueError(f"mosaic dimensions must be even, got {s.shape}")
        object.__setattr__(self, "samples", s)

    @property
    def shape(self):
        return self.samples.shape

    def channel_index(self) -> np.ndarray:
        """(H, W) array with 0/1/2 for the color measured at each site."""
        return cfa_channel_index(self.layout, *self.samples.shape)

    def masks(self) -> np.ndarray:
        """(H, W, 3) boolean masks of the measured sites per color."""
        idx = self.channel_index()
        return np.stack([idx == c for c in range(3)], axis=-1)


def cfa_channel_index(layout: str, height: int, width: int) -> np.ndarray:
    if layout not in LAYOUTS:
        raise ValueError(f"unknown CFA layout {layout!r}")
    tile = np.array([_CHANNEL_INDEX[c] for c in layout]).reshape(2, 2)
    return np.tile(tile, ((height + 1) // 2, (width + 1) // 2))[:height, :width]


# ---------------------------------------------------------------------------
# file I/O


def _read_pnm_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ValueError("truncated header")
    return data[start:pos], pos


def _load_pnm(path: str) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported PNM magic {magic!r}")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_pnm_token(data, pos)
        fields.append(int(tok))
    width, height, maxval = fields
    pos += 1  # single whitespace after maxval
    if not 0 < maxval < 65536:
        raise ValueError(f"bad maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    if len(data) - pos < count * dtype.itemsize:
        raise ValueError("truncated pixel data")
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return raw.reshape(shape).astype(np.float64), maxval


def _load_png(path: str) -> tuple[np.ndarray, int]:
    reader = png.Reader(filename=path)
    width, height, rows, info = reader.asDirect()
    planes = info["planes"]
    bitdepth = info["bitdepth"]
    arr = np.vstack([np.asarray(r, dtype=np.uint32) for r in rows])
    arr = arr.reshape(height, width, planes).astype(np.float64)
    if info.get("alpha"):
        arr = arr[..., :-1]
        planes -= 1
    if planes == 1:
        arr = arr[..., 0]
    elif planes != 3:
        raise ValueError(f"unsupported plane count {planes}")
    return arr, 2 ** bitdepth - 1


def load_image(path) -> np.ndarray:
    """Read an 8/16-bit gray or RGB PNG or binary PGM/PPM into [0, 1] floats."""
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext in (".pgm", ".ppm", ".pnm"):
            arr, maxval = _load_pnm(path)
        else:
            arr, maxval = _load_png(path)
    except (OSError, ValueError, png.Error) as exc:
        raise ImageIOError(f"cannot load image {path!r}: {exc}") from exc
    return np.clip(arr / maxval, 0.0, 1.0)


def quantize(img: np.ndarray, bitdepth: int = 8) -> np.ndarray:
    """Integer codes ``round(s * (2**bitdepth - 1))``, halves rounded away from 0."""
    if bitdepth not in (8, 16):
        raise ValueError("bitdepth must be 8 or 16")
    maxval = 2 ** bitdepth - 1
    s = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(s * maxval + 0.5).astype(np.uint16 if bitdepth == 16 else np.uint8)


def save_image(img, path, bitdepth: int = 8) -> None:
    """Write a gray or RGB image losslessly (PNG, or PGM/PPM by extension)."""
    path = os.fspath(path)
    if isinstance(img, BayerMosaic):
        img = img.samples
    codes = quantize(img, bitdepth)
    if codes.ndim == 3 and codes.shape[2] == 1:
        codes = codes[..., 0]
    if codes.ndim not in (2, 3) or (codes.ndim == 3 and codes.shape[2] != 3):
        raise ValueError(f"cannot save array of shape {codes.shape}")
    height, width = codes.shape[:2]
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext in (".pgm", ".ppm", ".pnm"):
            magic = b"P6" if codes.ndim == 3 else b"P5"
            if ext == ".pgm" and codes.ndim == 3 or ext == ".ppm" and codes.ndim == 2:
                raise ValueError(f"extension {ext} does not match channel count")
            maxval = 2 ** bitdepth - 1
            body = codes.astype(">u2" if bitdepth == 16 else "u1").tobytes()
            with open(path, "wb") as fh:
                fh.write(b"%s\n%d %d\n%d\n" % (magic, width, height, maxval))
                fh.write(body)
        else:
            greyscale = codes.ndim == 2
            writer = png.Writer(width, height, greyscale=greyscale, bitdepth=bitdepth)
            rows = codes.reshape(height, -1)
            with open(path, "wb") as fh:
                writer.write(fh, rows.tolist())
    except (OSError, png.Error) as exc:
        raise ImageIOError(f"cannot write image {path!r}: {exc}") from exc


def load_kernel(path) -> np.ndarray:
    """Read a blur kernel: first token the odd side, then side*side reals."""
    path = os.fspath(path)
    try:
        with open(path) as fh:
            tokens = fh.read().split()
        side = int(tokens[0])
        weights = np.array([float(t) for t in tokens[1:]])
        if weights.size != side * side:
            raise ValueError(f"expected {side * side} weights, found {weights.size}")
    except (OSError, ValueError, IndexError) as exc:
        raise ImageIOError(f"cannot load kernel {path!r}: {exc}") from exc
    kernel = weights.reshape(side, side)
    check_kernel(kernel)
    return kernel


def save_kernel(kernel: np.ndarray, path) -> None:
    kernel = np.asarray(kernel, dtype=np.float64)
    with open(os.fspath(path), "w") as fh:
        fh.write(f"{kernel.shape[0]}\n")
        for row in kernel:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# color and synthesis


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Rec.601 luma; single-channel input is returned unchanged."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[-1] == 1:
        return img[..., 0]
    return img @ LUMA_WEIGHTS


def add_gaussian_noise(img: np.ndarray, sigma: float, seed) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise (sigma in [0, 1] units) and clamp."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    img = np.asarray(img, dtype=np.float64)
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    return np.clip(img + sigma * rng.standard_normal(img.shape), 0.0, 1.0)


def add_poisson_noise(img: np.ndarray, photon_max: float, seed) -> np.ndarray:
    """Photon-counting noise: each sample s becomes Poisson(s * photon_max) / photon_max."""
    if photon_max < 1:
        raise ValueError("photon_max must be >= 1")
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, None)
    rng = np.random.default_rng(seed)
    counts = rng.poisson(img * photon_max)
    return np.clip(counts / photon_max, 0.0, 1.0)


def check_kernel(kernel: np.ndarray) -> None:
    kernel = np.asarray(kernel)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
        raise ValueError(f"kernel must be square with odd side, got {kernel.shape}")
    if np.any(kernel < 0):
        raise ValueError("kernel weights must be non-negative")
    if abs(kernel.sum() - 1.0) > 1e-9:
        raise ValueError(f"kernel weights must sum to 1, got {kernel.sum()!r}")


def gaussian_kernel(side: int = 7, sigma: float = 2.0) -> np.ndarray:
    """Sampled isotropic Gaussian, renormalized to unit sum."""
    if side < 1 or side % 2 == 0:
        raise ValueError(f"kernel side must be odd and positive, got {side}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    half = side // 2
    d = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def convolve(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel 2-D correlation with mirror padding; same-size output."""
    img = np.asarray(img, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.shape[0] > min(img.shape[:2]):
        raise ValueError("kernel larger than image")
    if img.ndim == 2:
        return ndimage.correlate(img, kernel, mode="mirror")
    return np.stack(
        [ndimage.correlate(img[..., c], kernel, mode="mirror") for c in range(img.shape[2])],
        axis=-1,
    )


def mosaic(img: np.ndarray, layout: str = "RGGB") -> BayerMosaic:
    """Sample an RGB image through a Bayer CFA."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("mosaic needs a 3-channel image")
    h, w = img.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"mosaic needs even dimensions, got {(h, w)}")
    idx = cfa_channel_index(layout, h, w)
    samples = np.take_along_axis(img, idx[..., None], axis=2)[..., 0]
    return BayerMosaic(samples, layout)


def image_seed(seed: int, index: int) -> int:
    """Per-image RNG seed: ``seed XOR index``, so batch order is irrelevant."""
    return int(seed) ^ int(index)
