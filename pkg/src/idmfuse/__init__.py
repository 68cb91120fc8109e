"""Pansharpening with a nonlinear intensity model and a patch denoising autoencoder."""

__version__ = "0.1.0"

from .errors import (
    DegenerateInputError,
    FusionStageError,
    IdmError,
    InvariantError,
    SceneFormatError,
    SingularSystemError,
)
from .fusion import METHODS, FusionConfig, FusionDiagnostics, fuse, fuse_with_artifacts, train_networks
from .intensity import BandWeights, CrossTermSpec, estimate_weights, injection_gain, nonlinear_intensity
from .metrics import MetricConfig, MetricReport, d_lambda, d_s, q4, qnr, sam, uiqi
from .raster import SceneMetadata, load_scene, load_truth, save_scene
from .sampling import Kernel, convolve, decimate, degrade_scene, mtf_kernel, upsample
from .synth import SynthConfig, generate, make_observed

__all__ = [
    "BandWeights", "CrossTermSpec", "DegenerateInputError", "FusionConfig", "FusionDiagnostics",
    "FusionStageError", "IdmError", "InvariantError", "Kernel", "METHODS", "MetricConfig",
    "MetricReport", "SceneFormatError", "SceneMetadata", "SingularSystemError", "SynthConfig",
    "convolve", "d_lambda", "d_s", "decimate", "degrade_scene", "estimate_weights", "fuse",
    "fuse_with_artifacts", "generate", "injection_gain", "load_scene", "load_truth",
    "make_observed", "mtf_kernel", "nonlinear_intensity", "q4", "qnr", "sam", "save_scene",
    "train_networks", "uiqi", "upsample",
]
