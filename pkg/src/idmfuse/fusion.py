"""IDM-DAE pansharpening pipeline and its baselines.

``idm-dae``
    nonlinear (cross-term) intensity per band, DAE estimate of each HRMS band
    from its upsampled LRMS band, plus gain-scaled detail ``P_k - I_k``.
``idm-base``
    the same pipeline with every cross coefficient fixed at zero.
``expand``
    bicubic upsampling only.
"""

from __future__ import annotations

import contextlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dae as dae_mod
from .dae import DaeModel, TrainConfig
from .errors import FusionStageError, IdmError, InvariantError
from .intensity import (
    DEFAULT_RIDGE,
    BandWeights,
    CrossTermSpec,
    detail_map,
    estimate_weights,
    injection_gain,
    nonlinear_intensity,
)
from .raster import SceneMetadata, check_scene
from .sampling import DEFAULT_KERNEL_SIZE, convolve, histogram_match, mtf_kernel, upsample

METHODS = ("idm-dae", "idm-base", "expand")


@dataclass
class FusionConfig:
    method: str = "idm-dae"
    patch_size: int = 8
    stride: int = 4
    ridge: float = DEFAULT_RIDGE
    train: TrainConfig = field(default_factory=TrainConfig)
    kernel_size: int = DEFAULT_KERNEL_SIZE
    hidden: tuple[int, ...] = (32,)
    shared_network: bool = True
    cross_terms: bool = True
    # test hook: drop the detail term so the output is the network estimate alone
    force_zero_gain: bool = False

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if self.method not in METHODS:
            raise InvariantError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.method == "expand":
            return
        if self.patch_size < 1 or self.stride < 1 or self.stride > self.patch_size:
            raise InvariantError(f"need 1 <= stride <= patch_size, got {self.stride}, {self.patch_size}")
        if self.ridge < 0:
            raise InvariantError(f"ridge must be >= 0, got {self.ridge}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise InvariantError(f"kernel_size must be odd, got {self.kernel_size}")
        if not self.hidden or min(self.hidden) < 1:
            raise InvariantError(f"hidden layer sizes must be positive, got {self.hidden}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        d = dict(d)
        if "train" in d:
            d["train"] = TrainConfig(**d["train"])
        return cls(**d)


@dataclass
class FusionDiagnostics:
    method: str
    spec: CrossTermSpec | None = None
    weights: BandWeights | None = None
    gains: list[float] = field(default_factory=list)
    detail_energy: list[float] = field(default_factory=list)
    loss_history: list[float] = field(default_factory=list)
    models: list[DaeModel] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "gains": self.gains,
            "detail_energy": self.detail_energy,
            "loss_history": self.loss_history,
        }
        if self.weights is not None:
            out["weights"] = self.weights.to_dict(self.spec)
        return out


@contextlib.contextmanager
def _stage(name: str, band: int | None = None):
    try:
        yield
    except FusionStageError:
        raise
    except IdmError as exc:
        raise FusionStageError(name, band, exc) from exc


def _train_networks(intensities, pans, cfg: FusionConfig, diag: FusionDiagnostics):
    p, s = cfg.patch_size, cfg.stride
    inputs = [dae_mod.extract_patches(i, p, s).patches for i in intensities]
    targets = [dae_mod.extract_patches(t, p, s).patches for t in pans]
    if cfg.shared_network:
        res = dae_mod.train(np.concatenate(inputs), np.concatenate(targets), cfg.train, cfg.hidden)
        diag.loss_history = res.loss_history
        return [res.model] * len(intensities)
    models = []
    seeds = np.random.SeedSequence(cfg.train.seed).generate_state(len(inputs))
    for k, (x, t) in enumerate(zip(inputs, targets)):
        tc = TrainConfig(**{**asdict(cfg.train), "seed": int(seeds[k])})
        res = dae_mod.train(x, t, tc, cfg.hidden)
        models.append(res.model)
        if k == 0:
            diag.loss_history = res.loss_history
    return models


@dataclass
class _Prepared:
    pan: np.ndarray
    ms_up: np.ndarray
    spec: CrossTermSpec | None = None
    weights: BandWeights | None = None
    intensities: np.ndarray | None = None
    pans: np.ndarray | None = None


def _prepare(pan, ms, meta: SceneMetadata, cfg: FusionConfig) -> _Prepared:
    """Steps shared by fusion and training: upsample, fit weights, intensities, matched PANs."""
    cfg.validate()
    with _stage("input"):
        pan, ms = check_scene(pan, ms, meta)
    L, r = ms.shape[0], meta.ratio
    ms_up = np.empty((L, *pan.shape))
    for k in range(L):
        with _stage("upsample", k):
            ms_up[k] = upsample(ms[k], r)
    prep = _Prepared(pan, ms_up)
    if cfg.method == "expand":
        return prep

    with _stage("pan-lowpass"):
        pan_lp = convolve(pan, mtf_kernel(meta.pan_nyquist_gain, r, cfg.kernel_size))
    spec = CrossTermSpec.adjacent(L)
    use_cross = cfg.method == "idm-dae" and cfg.cross_terms
    with _stage("estimate-weights"):
        weights = estimate_weights(ms_up, pan_lp, spec, cfg.ridge, fit_cross=use_cross)

    intensities = np.empty_like(ms_up)
    pans = np.empty_like(ms_up)
    for k in range(L):
        with _stage("intensity", k):
            intensities[k] = nonlinear_intensity(ms_up, weights, spec, k)
        with _stage("histogram-match", k):
            pans[k] = histogram_match(pan, intensities[k])
    prep.spec, prep.weights = spec, weights
    prep.intensities, prep.pans = intensities, pans
    return prep


def train_networks(pan, ms, meta: SceneMetadata, cfg: FusionConfig | None = None):
    """Train the detail network(s) of a scene without fusing.

    Returns ``(models, loss_history)``; ``models`` has one entry per band (the
    same object repeated when the network is shared).
    """
    cfg = cfg or FusionConfig()
    if cfg.method == "expand":
        raise InvariantError("method 'expand' has no network to train")
    prep = _prepare(pan, ms, meta, cfg)
    diag = FusionDiagnostics(cfg.method)
    with _stage("train-dae"):
        models = _train_networks(prep.intensities, prep.pans, cfg, diag)
    return models, diag.loss_history


def fuse_with_artifacts(pan, ms, meta: SceneMetadata, cfg: FusionConfig | None = None,
                        models: list[DaeModel] | None = None):
    """Fuse and also return weights, gains, detail energies and the loss curve.

    ``models`` optionally supplies pre-trained networks (one shared model or one
    per band) and skips the training stage.
    """
    cfg = cfg or FusionConfig()
    prep = _prepare(pan, ms, meta, cfg)
    diag = FusionDiagnostics(cfg.method, prep.spec, prep.weights)
    if cfg.method == "expand":
        return prep.ms_up, diag
    L = prep.ms_up.shape[0]

    if models is None:
        with _stage("train-dae"):
            models = _train_networks(prep.intensities, prep.pans, cfg, diag)
    elif len(models) == 1:
        models = list(models) * L
    elif len(models) != L:
        raise FusionStageError("train-dae", None, f"{len(models)} models supplied for {L} bands")
    diag.models = list(models)

    fused = np.empty_like(prep.ms_up)
    for k in range(L):
        with _stage("infer", k):
            estimate = dae_mod.infer_band(models[k], prep.ms_up[k], cfg.patch_size, cfg.stride)
        with _stage("injection-gain", k):
            g = 0.0 if cfg.force_zero_gain else injection_gain(prep.ms_up[k], prep.intensities[k])
        with _stage("detail", k):
            detail = detail_map(prep.pans[k], prep.intensities[k])
        diag.gains.append(g)
        diag.detail_energy.append(float(np.mean(detail * detail)))
        fused[k] = estimate + g * detail
    return fused, diag


def fuse(pan, ms, meta: SceneMetadata, cfg: FusionConfig | None = None, models=None) -> np.ndarray:
    """Fused ``(L, H, W)`` HRMS stack at the PAN grid (not clipped)."""
    return fuse_with_artifacts(pan, ms, meta, cfg, models)[0]
