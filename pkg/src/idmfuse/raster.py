"""Image containers, scene metadata and the on-disk scene format.

Images are plain ``float64`` numpy arrays: a single band is ``(height, width)``
and a multiband stack is ``(L, height, width)``.  The helpers here validate
and normalize inputs; everything downstream assumes they were applied.

A scene directory holds::

    scene.json   UTF-8 header (MS width/height, bands, ratio, bit_depth, ...)
    pan.f32      PAN samples, little-endian float32, row-major
    ms.f32       MS samples, band-sequential, row-major
    truth.f32    optional full-resolution MS reference (same layout, PAN dims)

Payloads store raw digital numbers; loading divides by ``2**bit_depth - 1``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvariantError, SceneFormatError

HEADER_NAME = "scene.json"
PAN_NAME = "pan.f32"
MS_NAME = "ms.f32"
TRUTH_NAME = "truth.f32"

_FILE_DTYPE = np.dtype("<f4")

DEFAULT_BIT_DEPTH = 11
DEFAULT_MS_GAIN = 0.30
DEFAULT_PAN_GAIN = 0.15


def as_raster(img, name="image") -> np.ndarray:
    """Return ``img`` as a validated 2-D float64 array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise InvariantError(f"{name}: expected a 2-D raster, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvariantError(f"{name}: empty raster")
    if not np.all(np.isfinite(arr)):
        raise InvariantError(f"{name}: non-finite sample")
    return arr


def as_multiband(ms, name="ms", min_bands=2) -> np.ndarray:
    """Return ``ms`` as a validated ``(L, H, W)`` float64 stack.

    A list of rasters is accepted; bands must share their dimensions.
    """
    if isinstance(ms, (list, tuple)):
        shapes = {np.shape(b) for b in ms}
        if len(shapes) > 1:
            raise InvariantError(f"{name}: bands disagree in size: {sorted(shapes)}")
    arr = np.asarray(ms, dtype=np.float64)
    if arr.ndim != 3:
        raise InvariantError(f"{name}: expected (L, H, W), got shape {arr.shape}")
    if arr.shape[0] < min_bands:
        raise InvariantError(f"{name}: need at least {min_bands} bands, got {arr.shape[0]}")
    if arr.shape[1] < 1 or arr.shape[2] < 1:
        raise InvariantError(f"{name}: empty bands")
    if not np.all(np.isfinite(arr)):
        raise InvariantError(f"{name}: non-finite sample")
    return arr


def grid_offsets(length: int, size: int, stride: int) -> list[int]:
    """Top-left offsets of windows of ``size`` swept with ``stride`` along one axis.

    When the last regular offset stops short of ``length - size``, one window
    anchored at ``length - size`` is appended so that every sample is covered.
    """
    if size > length:
        raise InvariantError(f"window {size} larger than axis length {length}")
    if stride < 1:
        raise InvariantError(f"stride must be >= 1, got {stride}")
    offsets = list(range(0, length - size + 1, stride))
    if offsets[-1] != length - size:
        offsets.append(length - size)
    return offsets


@dataclass
class SceneMetadata:
    sensor_name: str = "synthetic"
    ratio: int = 4
    bit_depth: int = DEFAULT_BIT_DEPTH
    ms_nyquist_gains: list[float] = field(default_factory=lambda: [DEFAULT_MS_GAIN] * 4)
    pan_nyquist_gain: float = DEFAULT_PAN_GAIN

    def __post_init__(self):
        self.ms_nyquist_gains = [float(g) for g in self.ms_nyquist_gains]
        self.pan_nyquist_gain = float(self.pan_nyquist_gain)
        self.validate()

    @classmethod
    def default(cls, bands: int, ratio: int = 4, **kw) -> "SceneMetadata":
        return cls(ratio=ratio, ms_nyquist_gains=[DEFAULT_MS_GAIN] * bands, **kw)

    @property
    def scale(self) -> float:
        return float(2**self.bit_depth - 1)

    def validate(self, bands: int | None = None):
        # ratio 1 is reserved for fused products stored at the PAN grid
        if int(self.ratio) != self.ratio or self.ratio < 1:
            raise InvariantError(f"ratio must be a positive integer, got {self.ratio}")
        if int(self.bit_depth) != self.bit_depth or not 1 <= self.bit_depth <= 32:
            raise InvariantError(f"bit_depth must be an integer in [1, 32], got {self.bit_depth}")
        for g in [*self.ms_nyquist_gains, self.pan_nyquist_gain]:
            if not 0.0 < g < 1.0:
                raise InvariantError(f"Nyquist gain must lie in (0, 1), got {g}")
        if bands is not None and len(self.ms_nyquist_gains) != bands:
            raise InvariantError(
                f"ms_nyquist_gains has {len(self.ms_nyquist_gains)} entries for {bands} bands"
            )

    def with_ratio(self, ratio: int) -> "SceneMetadata":
        d = asdict(self)
        d["ratio"] = ratio
        return SceneMetadata(**d)


def check_scene(pan, ms, meta: SceneMetadata):
    """Validate a (pan, ms, meta) triple; return the normalized arrays."""
    pan = as_raster(pan, "pan")
    ms = as_multiband(ms, "ms")
    meta.validate(bands=ms.shape[0])
    r = meta.ratio
    if pan.shape != (ms.shape[1] * r, ms.shape[2] * r):
        raise InvariantError(
            f"PAN dims {pan.shape} != ratio {r} x MS dims {ms.shape[1:]}"
        )
    return pan, ms


def _write_payload(path: Path, data: np.ndarray, scale: float):
    raw = (data * scale).astype(_FILE_DTYPE)
    with open(path, "wb") as fh:
        fh.write(raw.tobytes(order="C"))


def _read_payload(path: Path, shape: tuple[int, ...], scale: float) -> np.ndarray:
    if not path.is_file():
        raise SceneFormatError(f"missing payload file {path}", field=path.name)
    expected = int(np.prod(shape)) * _FILE_DTYPE.itemsize
    actual = path.stat().st_size
    if actual != expected:
        raise SceneFormatError(
            f"{path.name}: payload is {actual} bytes, header implies {expected}",
            field=path.name,
        )
    raw = np.fromfile(path, dtype=_FILE_DTYPE).reshape(shape)
    if not np.all(np.isfinite(raw)):
        raise SceneFormatError(f"{path.name}: non-finite sample", field=path.name)
    return raw.astype(np.float64) / scale


def save_scene(pan, ms, meta: SceneMetadata, path, truth=None) -> None:
    """Write a scene directory.  ``truth`` is an optional PAN-grid MS reference."""
    pan, ms = check_scene(pan, ms, meta)
    if truth is not None:
        truth = as_multiband(truth, "truth")
        if truth.shape != (ms.shape[0], *pan.shape):
            raise InvariantError(f"truth shape {truth.shape} != {(ms.shape[0], *pan.shape)}")
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SceneFormatError(f"cannot create scene directory {path}: {exc}", field=str(path)) from exc
    header = {
        "width": ms.shape[2],
        "height": ms.shape[1],
        "bands": ms.shape[0],
        "ratio": meta.ratio,
        "bit_depth": meta.bit_depth,
        "sensor_name": meta.sensor_name,
        "ms_nyquist_gains": meta.ms_nyquist_gains,
        "pan_nyquist_gain": meta.pan_nyquist_gain,
        "truth": truth is not None,
    }
    try:
        with open(path / HEADER_NAME, "w", encoding="utf-8") as fh:
            json.dump(header, fh, indent=2)
        _write_payload(path / PAN_NAME, pan, meta.scale)
        _write_payload(path / MS_NAME, ms, meta.scale)
        if truth is not None:
            _write_payload(path / TRUTH_NAME, truth, meta.scale)
        elif (path / TRUTH_NAME).exists():
            os.remove(path / TRUTH_NAME)
    except OSError as exc:
        raise SceneFormatError(f"cannot write scene to {path}: {exc}", field=str(path)) from exc


def read_header(path) -> dict:
    path = Path(path)
    hp = path / HEADER_NAME
    if not hp.is_file():
        raise SceneFormatError(f"missing header {hp}", field=HEADER_NAME)
    try:
        with open(hp, encoding="utf-8") as fh:
            header = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{HEADER_NAME}: invalid JSON: {exc}", field=HEADER_NAME) from exc
    for key in ("width", "height", "bands", "ratio"):
        if key not in header:
            raise SceneFormatError(f"{HEADER_NAME}: missing key {key!r}", field=key)
        v = header[key]
        if not isinstance(v, int) or v < 1:
            raise SceneFormatError(f"{HEADER_NAME}: {key} must be a positive integer, got {v!r}", field=key)
    return header


def _meta_from_header(header: dict) -> SceneMetadata:
    bands = header["bands"]
    try:
        return SceneMetadata(
            sensor_name=header.get("sensor_name", "unknown"),
            ratio=header["ratio"],
            bit_depth=header.get("bit_depth", DEFAULT_BIT_DEPTH),
            ms_nyquist_gains=header.get("ms_nyquist_gains", [DEFAULT_MS_GAIN] * bands),
            pan_nyquist_gain=header.get("pan_nyquist_gain", DEFAULT_PAN_GAIN),
        )
    except InvariantError as exc:
        raise SceneFormatError(f"{HEADER_NAME}: {exc}", field=HEADER_NAME) from exc


def load_scene(path):
    """Read a scene directory; returns ``(pan, ms, meta)`` with samples in float64."""
    path = Path(path)
    header = read_header(path)
    meta = _meta_from_header(header)
    L, h, w, r = header["bands"], header["height"], header["width"], header["ratio"]
    if L < 2:
        raise SceneFormatError(f"{HEADER_NAME}: need at least 2 bands, got {L}", field="bands")
    if len(meta.ms_nyquist_gains) != L:
        raise SceneFormatError(
            f"{HEADER_NAME}: {len(meta.ms_nyquist_gains)} MS gains for {L} bands",
            field="ms_nyquist_gains",
        )
    pan = _read_payload(path / PAN_NAME, (h * r, w * r), meta.scale)
    ms = _read_payload(path / MS_NAME, (L, h, w), meta.scale)
    return pan, ms, meta


def has_truth(path) -> bool:
    return bool(read_header(path).get("truth", False)) and (Path(path) / TRUTH_NAME).is_file()


def load_truth(path) -> np.ndarray:
    """Read the full-resolution MS reference stored with a scene."""
    path = Path(path)
    header = read_header(path)
    if not header.get("truth", False):
        raise SceneFormatError(f"scene {path} carries no ground truth", field=TRUTH_NAME)
    meta = _meta_from_header(header)
    L, h, w, r = header["bands"], header["height"], header["width"], header["ratio"]
    return _read_payload(path / TRUTH_NAME, (L, h * r, w * r), meta.scale)


def to_bytes(samples) -> np.ndarray:
    """Map samples to 8-bit: clamp to [0, 1], scale by 255, round half up."""
    x = np.clip(np.asarray(samples, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def export_preview(ms, band_selection, path) -> None:
    """Write three bands of ``ms`` as an 8-bit RGB preview.

    The format follows the suffix: ``.ppm`` writes binary P6 directly, anything
    else goes through Pillow (PNG recommended).
    """
    ms = as_multiband(ms, "ms", min_bands=1)
    sel = list(band_selection)
    if len(sel) != 3:
        raise InvariantError(f"band_selection needs 3 indices, got {len(sel)}")
    for i in sel:
        if not 0 <= i < ms.shape[0]:
            raise InvariantError(f"band index {i} out of range for L={ms.shape[0]}")
    rgb = np.ascontiguousarray(np.stack([to_bytes(ms[i]) for i in sel], axis=-1))
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        h, w = rgb.shape[:2]
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(rgb.tobytes())
    else:
        from PIL import Image

        Image.fromarray(rgb).save(path)
