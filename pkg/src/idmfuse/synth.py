"""Seeded synthetic scenes with known full-resolution ground truth.

Bands share one octave-summed value-noise field (spatial detail common to all
bands, as in real imagery) plus a weaker band-specific field that carries
spectral variation.  The PAN mixes the bands linearly and adds products of
neighbouring bands so the cross-term intensity model has signal to recover.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantError
from .raster import SceneMetadata, as_multiband, as_raster
from .sampling import DEFAULT_KERNEL_SIZE, degrade_ms

SHARED_WEIGHT = 0.7
BASE_CELLS = 4
PERSISTENCE = 0.8


@dataclass
class SynthConfig:
    size: int = 256
    bands: int = 4
    ratio: int = 4
    seed: int = 7
    spectral_mixing: list[float] | None = None
    cross_amount: float = 0.1
    texture_octaves: int = 6

    def __post_init__(self):
        if self.spectral_mixing is None:
            self.spectral_mixing = [1.0 / self.bands] * self.bands
        self.spectral_mixing = [float(m) for m in self.spectral_mixing]
        if self.bands < 2:
            raise InvariantError(f"need at least 2 bands, got {self.bands}")
        if self.ratio < 1 or self.size < 1 or self.size % self.ratio:
            raise InvariantError(f"size {self.size} not divisible by ratio {self.ratio}")
        if len(self.spectral_mixing) != self.bands or min(self.spectral_mixing) < 0:
            raise InvariantError("spectral_mixing needs one nonnegative weight per band")
        if self.cross_amount < 0:
            raise InvariantError(f"cross_amount must be >= 0, got {self.cross_amount}")
        if self.texture_octaves < 1:
            raise InvariantError(f"texture_octaves must be >= 1, got {self.texture_octaves}")


def _rescale(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def value_noise(size: int, octaves: int, rng: np.random.Generator,
                persistence: float = PERSISTENCE) -> np.ndarray:
    """Octave-summed value noise in [0, 1] with smoothstep lattice interpolation.

    Octave ``o`` has ``4 * 2**o`` lattice cells across the image and amplitude
    ``persistence**o``.
    """
    total = np.zeros((size, size))
    for o in range(octaves):
        cells = BASE_CELLS * 2**o
        lattice = rng.random((cells + 1, cells + 1))
        u = np.arange(size) * (cells / size)
        i0 = np.minimum(np.floor(u).astype(int), cells - 1)
        t = u - i0
        t = t * t * (3.0 - 2.0 * t)
        rows = lattice[i0] * (1 - t)[:, None] + lattice[i0 + 1] * t[:, None]
        layer = rows[:, i0] * (1 - t)[None, :] + rows[:, i0 + 1] * t[None, :]
        total += persistence**o * layer
    return _rescale(total)


def generate(cfg: SynthConfig):
    """Returns ``(hr_ms, pan)``: an ``(L, size, size)`` stack and its PAN, both in [0, 1]."""
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(cfg.bands + 2)]
    base = value_noise(cfg.size, cfg.texture_octaves, streams[0])
    ranges = streams[1].uniform([0.02, 0.55], [0.25, 0.95], size=(cfg.bands, 2))
    bands = []
    for k in range(cfg.bands):
        own = value_noise(cfg.size, cfg.texture_octaves, streams[k + 2])
        f = _rescale(SHARED_WEIGHT * base + (1.0 - SHARED_WEIGHT) * own)
        lo, hi = ranges[k]
        bands.append(lo + (hi - lo) * f)
    hr_ms = np.stack(bands)
    pan = np.tensordot(np.asarray(cfg.spectral_mixing), hr_ms, axes=1)
    if cfg.cross_amount > 0:
        pan = pan + cfg.cross_amount * sum(hr_ms[k] * hr_ms[k + 1] for k in range(cfg.bands - 1))
    return hr_ms, _rescale(pan)


def metadata_for(cfg: SynthConfig) -> SceneMetadata:
    return SceneMetadata.default(cfg.bands, ratio=cfg.ratio, sensor_name=f"synthetic-seed{cfg.seed}")


def make_observed(hr_ms, pan, meta: SceneMetadata, size: int = DEFAULT_KERNEL_SIZE):
    """Observed pair for reduced-resolution analysis: ``(pan, degraded ms)``.

    PAN is passed through unchanged; ``hr_ms`` stays the reference.
    """
    hr_ms = as_multiband(hr_ms, "hr_ms")
    pan = as_raster(pan, "pan")
    r = meta.ratio
    if hr_ms.shape[1] % r or hr_ms.shape[2] % r:
        raise InvariantError(f"dims {hr_ms.shape[1:]} not divisible by ratio {r}")
    return pan.copy(), degrade_ms(hr_ms, meta, size)
