"""MTF-matched filtering, decimation, bicubic interpolation and Wald degradation.

All boundary handling is mirror reflection without repeating the edge sample
(``d c b | a b c d | c b a``), which is scipy's ``"mirror"`` mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, InvariantError
from .raster import SceneMetadata, as_multiband, as_raster

DEFAULT_KERNEL_SIZE = 41
CATMULL_ROM_A = -0.5


@dataclass(frozen=True)
class Kernel:
    """Square odd-sized filter.  ``taps_1d`` is set when the kernel is separable."""

    taps: np.ndarray
    taps_1d: np.ndarray | None = None

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 2 or taps.shape[0] != taps.shape[1] or taps.shape[0] % 2 == 0:
            raise InvariantError(f"kernel must be square with odd size, got {taps.shape}")
        if abs(taps.sum() - 1.0) > 1e-12:
            raise InvariantError(f"kernel taps sum to {taps.sum()!r}, expected 1")
        if not (np.allclose(taps, taps[::-1, :], rtol=0, atol=1e-15)
                and np.allclose(taps, taps[:, ::-1], rtol=0, atol=1e-15)):
            raise InvariantError("kernel taps must be symmetric under flips")
        object.__setattr__(self, "taps", taps)

    @property
    def size(self) -> int:
        return self.taps.shape[0]

    @classmethod
    def identity(cls) -> "Kernel":
        return cls(np.ones((1, 1)), np.ones(1))


def gaussian_sigma(nyquist_gain: float, ratio: int) -> float:
    """Spatial standard deviation (pixels) of the Gaussian with H(1/(2 ratio)) = gain."""
    f_nyq = 1.0 / (2.0 * ratio)
    sigma_f = f_nyq / math.sqrt(-2.0 * math.log(nyquist_gain))
    return 1.0 / (2.0 * math.pi * sigma_f)


def mtf_kernel(nyquist_gain: float, ratio: int, size: int = DEFAULT_KERNEL_SIZE) -> Kernel:
    """Separable sampled Gaussian matched to an MTF gain at the low-resolution Nyquist.

    The continuous response ``exp(-f**2 / (2 sigma_f**2))`` equals ``nyquist_gain``
    at ``f = 1 / (2 ratio)`` cycles per sample.  Taps are truncated at ``size``
    and renormalized to unit sum.
    """
    if not 0.0 < nyquist_gain < 1.0:
        raise InvariantError(f"nyquist_gain must lie in (0, 1), got {nyquist_gain}")
    if int(ratio) != ratio or ratio < 2:
        raise InvariantError(f"ratio must be an integer >= 2, got {ratio}")
    if size < 1 or size % 2 == 0:
        raise InvariantError(f"kernel size must be odd, got {size}")
    sigma = gaussian_sigma(nyquist_gain, ratio)
    x = np.arange(size) - size // 2
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    g /= g.sum()
    taps = np.outer(g, g)
    taps /= taps.sum()
    return Kernel(taps, g)


def frequency_response(k: Kernel, f: float) -> float:
    """Magnitude of the kernel's DTFT along one axis at ``f`` cycles per sample."""
    profile = k.taps.sum(axis=0)
    x = np.arange(k.size) - k.size // 2
    return float(abs(np.sum(profile * np.exp(-2j * np.pi * f * x))))


def convolve(img, k: Kernel) -> np.ndarray:
    img = as_raster(img)
    if k.size > img.shape[0] or k.size > img.shape[1]:
        raise InvariantError(f"kernel size {k.size} larger than image {img.shape}")
    if k.taps_1d is not None:
        out = ndimage.convolve1d(img, k.taps_1d, axis=0, mode="mirror")
        return ndimage.convolve1d(out, k.taps_1d, axis=1, mode="mirror")
    return ndimage.convolve(img, k.taps, mode="mirror")


def decimate(img, ratio: int) -> np.ndarray:
    """Keep the samples at ``(ratio*i, ratio*j)``."""
    img = as_raster(img)
    if ratio < 1 or img.shape[0] % ratio or img.shape[1] % ratio:
        raise InvariantError(f"dims {img.shape} not divisible by ratio {ratio}")
    return img[::ratio, ::ratio].copy()


def _mirror_index(i: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(i)
    period = 2 * (n - 1)
    i = np.abs(i) % period
    return np.where(i >= n, period - i, i)


def _cubic_weight(s: np.ndarray, a: float = CATMULL_ROM_A) -> np.ndarray:
    s = np.abs(s)
    near = (a + 2.0) * s**3 - (a + 3.0) * s**2 + 1.0
    far = a * s**3 - 5.0 * a * s**2 + 8.0 * a * s - 4.0 * a
    return np.where(s <= 1.0, near, np.where(s < 2.0, far, 0.0))


def interpolation_matrix(n: int, ratio: int) -> np.ndarray:
    """``(n*ratio, n)`` Catmull-Rom interpolation operator along one axis.

    Output sample ``m`` sits at input coordinate ``m / ratio``, so every
    ``ratio``-th output reproduces an input knot exactly.
    """
    m = np.arange(n * ratio)
    base = m // ratio
    t = (m % ratio) / ratio
    U = np.zeros((n * ratio, n))
    rows = np.arange(n * ratio)
    for offset in (-1, 0, 1, 2):
        w = _cubic_weight(t - offset)
        cols = _mirror_index(base + offset, n)
        np.add.at(U, (rows, cols), w)
    return U


def upsample(img, ratio: int) -> np.ndarray:
    img = as_raster(img)
    if int(ratio) != ratio or ratio < 1:
        raise InvariantError(f"ratio must be a positive integer, got {ratio}")
    if ratio == 1:
        return img.copy()
    Uy = interpolation_matrix(img.shape[0], ratio)
    Ux = interpolation_matrix(img.shape[1], ratio)
    return Uy @ img @ Ux.T


def upsample_bands(ms, ratio: int) -> np.ndarray:
    ms = as_multiband(ms, min_bands=1)
    return np.stack([upsample(b, ratio) for b in ms])


def histogram_match(pan, reference) -> np.ndarray:
    """Moment-match ``pan`` to the mean and standard deviation of ``reference``."""
    pan = as_raster(pan, "pan")
    reference = as_raster(reference, "reference")
    sd_pan = pan.std()
    if sd_pan == 0.0:
        raise DegenerateInputError("cannot histogram-match a constant PAN image")
    return (pan - pan.mean()) * (reference.std() / sd_pan) + reference.mean()


def lowpass_pan(pan, meta: SceneMetadata, size: int = DEFAULT_KERNEL_SIZE) -> np.ndarray:
    """PAN filtered with its MTF-matched kernel, kept at the PAN grid."""
    return convolve(pan, mtf_kernel(meta.pan_nyquist_gain, meta.ratio, size))


def degrade_ms(ms, meta: SceneMetadata, size: int = DEFAULT_KERNEL_SIZE) -> np.ndarray:
    ms = as_multiband(ms)
    meta.validate(bands=ms.shape[0])
    return np.stack([
        decimate(convolve(band, mtf_kernel(g, meta.ratio, size)), meta.ratio)
        for band, g in zip(ms, meta.ms_nyquist_gains)
    ])


def degrade_pan(pan, meta: SceneMetadata, size: int = DEFAULT_KERNEL_SIZE) -> np.ndarray:
    return decimate(lowpass_pan(pan, meta, size), meta.ratio)


def degrade_scene(pan, ms, meta: SceneMetadata, size: int = DEFAULT_KERNEL_SIZE):
    """Wald-protocol reduction: MTF-filter and decimate both PAN and every MS band.

    Returns ``(pan_lr, ms_lr)``; the undegraded ``ms`` serves as reference.
    """
    pan = as_raster(pan, "pan")
    ms = as_multiband(ms)
    r = meta.ratio
    for name, shape in (("pan", pan.shape), ("ms", ms.shape[1:])):
        if shape[0] % r or shape[1] % r:
            raise InvariantError(f"{name} dims {shape} not divisible by ratio {r}")
    return degrade_pan(pan, meta, size), degrade_ms(ms, meta, size)
