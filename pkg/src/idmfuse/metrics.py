"""Full-reference (SAM, UIQI, Q4) and no-reference (D_lambda, D_s, QNR) quality indices.

Window statistics are population moments.  Windows and blocks tile the image
on a non-overlapping grid; when the image size is not a multiple of the
window, one extra window anchored at the far border is added per axis.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvariantError
from .raster import as_multiband, as_raster, grid_offsets

CSV_COLUMNS = ("scene", "method", "SAM", "Q4", "D_lambda", "D_s", "QNR")


@dataclass
class MetricConfig:
    uiqi_window: int = 32
    q4_block: int = 32
    p_exp: float = 1.0
    q_exp: float = 1.0

    def __post_init__(self):
        if self.uiqi_window < 2 or self.q4_block < 2:
            raise InvariantError("UIQI window and Q4 block must be >= 2")
        if self.p_exp < 1 or self.q_exp < 1:
            raise InvariantError("D_lambda/D_s exponents must be >= 1")


@dataclass(frozen=True)
class WindowStats:
    mean_a: np.ndarray
    mean_b: np.ndarray
    var_a: np.ndarray
    var_b: np.ndarray
    cov_ab: np.ndarray


def sam(fused, reference, exclude_zero: bool = False) -> float:
    """Mean spectral angle in degrees.

    Pixels where either spectrum has zero norm contribute an angle of 0; with
    ``exclude_zero`` they are dropped from the average instead.
    """
    a = as_multiband(fused, "fused", min_bands=1)
    b = as_multiband(reference, "reference", min_bands=1)
    if a.shape != b.shape:
        raise InvariantError(f"SAM operands differ: {a.shape} vs {b.shape}")
    a = a.reshape(a.shape[0], -1)
    b = b.reshape(b.shape[0], -1)
    dot = np.sum(a * b, axis=0)
    norms = np.sqrt(np.sum(a * a, axis=0)) * np.sqrt(np.sum(b * b, axis=0))
    valid = norms > 0
    cos = np.ones_like(dot)
    cos[valid] = np.clip(dot[valid] / norms[valid], -1.0, 1.0)
    angles = np.degrees(np.arccos(cos))
    if exclude_zero:
        if not valid.any():
            return 0.0
        return float(angles[valid].mean())
    return float(angles.mean())


def _windows(img: np.ndarray, window: int, stride: int) -> np.ndarray:
    """``(n_windows, window*window)`` samples of each window, row-major over corners."""
    rows = grid_offsets(img.shape[0], window, stride)
    cols = grid_offsets(img.shape[1], window, stride)
    view = sliding_window_view(img, (window, window))
    return view[np.ix_(rows, cols)].reshape(len(rows) * len(cols), window * window)


def window_stats(a, b, window: int, stride: int | None = None) -> WindowStats:
    a = as_raster(a, "a")
    b = as_raster(b, "b")
    if a.shape != b.shape:
        raise InvariantError(f"UIQI operands differ: {a.shape} vs {b.shape}")
    if window > min(a.shape):
        raise InvariantError(f"window {window} larger than image {a.shape}")
    stride = window if stride is None else stride
    wa, wb = _windows(a, window, stride), _windows(b, window, stride)
    ma, mb = wa.mean(axis=1), wb.mean(axis=1)
    da, db = wa - ma[:, None], wb - mb[:, None]
    return WindowStats(ma, mb, np.mean(da * da, axis=1), np.mean(db * db, axis=1),
                       np.mean(da * db, axis=1))


def _quality(cov, sd_a, sd_b, mag_a, mag_b) -> np.ndarray:
    """Correlation x luminance x contrast per window, with the degenerate rules.

    ``mag_*`` are mean magnitudes (signed means for scalar UIQI).  Zero-variance
    windows use ``4 cov ma mb / ((va + vb)(ma^2 + mb^2))`` (0 on a zero
    denominator); two zero means with nonzero variances score luminance 1.
    """
    va, vb = sd_a * sd_a, sd_b * sd_b
    msum = mag_a * mag_a + mag_b * mag_b
    out = np.zeros_like(cov)
    live = (va > 0) & (vb > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / (sd_a * sd_b)
        contrast = 2.0 * sd_a * sd_b / (va + vb)
        lum = np.where(msum > 0, 2.0 * mag_a * mag_b / msum, 1.0)
        full = corr * lum * contrast
        denom = (va + vb) * msum
        simple = np.where(denom > 0, 4.0 * cov * mag_a * mag_b / denom, 0.0)
    out[live] = full[live]
    out[~live] = simple[~live]
    return out


def uiqi_windows(a, b, window: int, stride: int | None = None) -> np.ndarray:
    s = window_stats(a, b, window, stride)
    return _quality(s.cov_ab, np.sqrt(s.var_a), np.sqrt(s.var_b), s.mean_a, s.mean_b)


def uiqi(a, b, window: int, stride: int | None = None) -> float:
    """Universal image quality index averaged over the window grid."""
    return float(np.mean(uiqi_windows(a, b, window, stride)))


def hamilton(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Quaternion product along axis 0 (components r, i, j, k)."""
    a0, a1, a2, a3 = p
    b0, b1, b2, b3 = q
    return np.stack([
        a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
        a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
        a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
        a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
    ])


def _conj(q: np.ndarray) -> np.ndarray:
    return q * np.array([1.0, -1.0, -1.0, -1.0]).reshape((4,) + (1,) * (q.ndim - 1))


def q4_blocks(fused, reference, block: int = 32) -> np.ndarray:
    a = as_multiband(fused, "fused")
    b = as_multiband(reference, "reference")
    if a.shape != b.shape:
        raise InvariantError(f"Q4 operands differ: {a.shape} vs {b.shape}")
    if a.shape[0] != 4:
        raise InvariantError(f"Q4 needs exactly 4 bands, got {a.shape[0]}")
    if block > min(a.shape[1:]):
        raise InvariantError(f"block {block} larger than image {a.shape[1:]}")
    # (4, n_blocks, block*block)
    za = np.stack([_windows(band, block, block) for band in a])
    zb = np.stack([_windows(band, block, block) for band in b])
    mu_a, mu_b = za.mean(axis=2), zb.mean(axis=2)
    da, db = za - mu_a[..., None], zb - mu_b[..., None]
    var_a = np.mean(np.sum(da * da, axis=0), axis=1)
    var_b = np.mean(np.sum(db * db, axis=0), axis=1)
    cov = np.mean(hamilton(da, _conj(db)), axis=2)
    cov_mag = np.sqrt(np.sum(cov * cov, axis=0))
    mag_a = np.sqrt(np.sum(mu_a * mu_a, axis=0))
    mag_b = np.sqrt(np.sum(mu_b * mu_b, axis=0))
    return _quality(cov_mag, np.sqrt(var_a), np.sqrt(var_b), mag_a, mag_b)


def q4(fused, reference, block: int = 32) -> float:
    """Quaternion extension of UIQI for 4-band images, averaged over blocks."""
    return float(np.mean(q4_blocks(fused, reference, block)))


def _scale_ratio(hi_shape, lo_shape) -> int:
    if hi_shape[0] % lo_shape[0] or hi_shape[1] % lo_shape[1]:
        raise InvariantError(f"grids {hi_shape} and {lo_shape} are not integer multiples")
    r = hi_shape[0] // lo_shape[0]
    if hi_shape[1] // lo_shape[1] != r:
        raise InvariantError(f"grids {hi_shape} and {lo_shape} have anisotropic ratio")
    return r


def _lowres_window(cfg: MetricConfig, ratio: int) -> int:
    w = cfg.uiqi_window // ratio
    if w < 2:
        raise InvariantError(f"UIQI window {cfg.uiqi_window} too small for ratio {ratio}")
    return w


def d_lambda(fused, ms_lr, cfg: MetricConfig | None = None) -> float:
    """Spectral distortion: change of inter-band UIQI between the two scales."""
    cfg = cfg or MetricConfig()
    hi = as_multiband(fused, "fused")
    lo = as_multiband(ms_lr, "ms_lr")
    if hi.shape[0] != lo.shape[0]:
        raise InvariantError(f"band counts differ: {hi.shape[0]} vs {lo.shape[0]}")
    r = _scale_ratio(hi.shape[1:], lo.shape[1:])
    w_hi, w_lo = cfg.uiqi_window, _lowres_window(cfg, r)
    L = hi.shape[0]
    terms = []
    for i in range(L):
        for j in range(L):
            if i != j:
                terms.append(abs(uiqi(hi[i], hi[j], w_hi) - uiqi(lo[i], lo[j], w_lo)) ** cfg.p_exp)
    return float(np.mean(terms) ** (1.0 / cfg.p_exp))


def d_s(fused, ms_lr, pan, pan_lp_lr, cfg: MetricConfig | None = None) -> float:
    """Spatial distortion: change of band-to-PAN UIQI between the two scales."""
    cfg = cfg or MetricConfig()
    hi = as_multiband(fused, "fused")
    lo = as_multiband(ms_lr, "ms_lr")
    pan = as_raster(pan, "pan")
    pan_lp_lr = as_raster(pan_lp_lr, "pan_lp_lr")
    if hi.shape[0] != lo.shape[0]:
        raise InvariantError(f"band counts differ: {hi.shape[0]} vs {lo.shape[0]}")
    if pan.shape != hi.shape[1:] or pan_lp_lr.shape != lo.shape[1:]:
        raise InvariantError(
            f"grid mismatch: fused {hi.shape[1:]} / pan {pan.shape}, "
            f"ms_lr {lo.shape[1:]} / pan_lp_lr {pan_lp_lr.shape}"
        )
    r = _scale_ratio(hi.shape[1:], lo.shape[1:])
    w_hi, w_lo = cfg.uiqi_window, _lowres_window(cfg, r)
    terms = [abs(uiqi(hi[i], pan, w_hi) - uiqi(lo[i], pan_lp_lr, w_lo)) ** cfg.q_exp
             for i in range(hi.shape[0])]
    return float(np.mean(terms) ** (1.0 / cfg.q_exp))


def qnr(d_lambda_val: float, d_s_val: float) -> float:
    for name, v in (("D_lambda", d_lambda_val), ("D_s", d_s_val)):
        if not 0.0 <= v <= 1.0:
            raise InvariantError(f"{name} = {v} outside [0, 1]")
    return (1.0 - d_lambda_val) * (1.0 - d_s_val)


@dataclass
class MetricReport:
    scene: str = ""
    method: str = ""
    sam_deg: float | None = None
    q4: float | None = None
    d_lambda: float | None = None
    d_s: float | None = None
    qnr: float | None = None

    def __post_init__(self):
        if self.d_lambda is not None and self.d_s is not None:
            expect = qnr(self.d_lambda, self.d_s)
            if self.qnr is None:
                self.qnr = expect
            elif abs(self.qnr - expect) > 1e-12:
                raise InvariantError(f"QNR {self.qnr} inconsistent with (1-D_lambda)(1-D_s) = {expect}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def row(self) -> dict:
        return {"scene": self.scene, "method": self.method, "SAM": self.sam_deg, "Q4": self.q4,
                "D_lambda": self.d_lambda, "D_s": self.d_s, "QNR": self.qnr}

    def to_csv(self, columns=CSV_COLUMNS) -> str:
        return reports_to_csv([self], columns)


def reports_to_csv(reports, columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for rep in reports:
        row = rep.row()
        writer.writerow({c: ("" if row[c] is None else row[c]) for c in columns})
    return buf.getvalue()
