import numpy as np
import pytest

from idmfuse.dae import TrainConfig, infer_band
from idmfuse.errors import FusionStageError, InvariantError
from idmfuse.fusion import FusionConfig, fuse, fuse_with_artifacts, train_networks
from idmfuse.raster import SceneMetadata
from idmfuse.sampling import upsample
from idmfuse.synth import SynthConfig, generate, make_observed, metadata_for

FAST = TrainConfig(epochs=3, seed=5)


@pytest.fixture(scope="module")
def small_scene():
    cfg = SynthConfig(size=64, seed=11)
    hr, pan = generate(cfg)
    meta = metadata_for(cfg)
    pan_obs, ms = make_observed(hr, pan, meta)
    return pan_obs, ms, meta


def test_expand_constant():
    meta = SceneMetadata.default(3, ratio=4)
    out = fuse(np.random.default_rng(0).random((32, 32)), np.full((3, 8, 8), 0.42), meta,
               FusionConfig(method="expand"))
    assert out.shape == (3, 32, 32)
    assert np.max(np.abs(out - 0.42)) <= 1e-12


def test_output_shape_and_finite(small_scene):
    pan, ms, meta = small_scene
    out, diag = fuse_with_artifacts(pan, ms, meta, FusionConfig(train=FAST))
    assert out.shape == (4, *pan.shape)
    assert np.all(np.isfinite(out))
    assert len(diag.gains) == 4 and len(diag.detail_energy) == 4
    assert len(diag.loss_history) == FAST.epochs
    assert set(diag.to_dict()) >= {"method", "gains", "detail_energy", "loss_history", "weights"}


def test_zero_gain_hook_returns_network_estimate(small_scene):
    pan, ms, meta = small_scene
    cfg = FusionConfig(train=FAST, force_zero_gain=True)
    out, diag = fuse_with_artifacts(pan, ms, meta, cfg)
    for k in range(4):
        want = infer_band(diag.models[k], upsample(ms[k], 4), cfg.patch_size, cfg.stride)
        np.testing.assert_array_equal(out[k], want)


def test_idm_base_cross_exactly_zero(small_scene):
    pan, ms, meta = small_scene
    _, diag = fuse_with_artifacts(pan, ms, meta, FusionConfig(method="idm-base", train=FAST))
    assert all(v == 0.0 for v in diag.to_dict()["weights"]["cross"].values())


def test_idm_dae_fits_cross_terms(small_scene):
    pan, ms, meta = small_scene
    _, diag = fuse_with_artifacts(pan, ms, meta, FusionConfig(train=FAST))
    assert any(v != 0.0 for v in diag.to_dict()["weights"]["cross"].values())


def test_base_equals_zeroed_cross_dae(small_scene):
    pan, ms, meta = small_scene
    a = fuse(pan, ms, meta, FusionConfig(method="idm-base", train=FAST))
    b = fuse(pan, ms, meta, FusionConfig(method="idm-dae", cross_terms=False, train=FAST))
    np.testing.assert_array_equal(a, b)


def test_deterministic(small_scene):
    pan, ms, meta = small_scene
    cfg = FusionConfig(train=FAST)
    np.testing.assert_array_equal(fuse(pan, ms, meta, cfg), fuse(pan, ms, meta, cfg))


def test_zero_detail_passthrough():
    # PAN is exactly the interpolated first band and the second band is a multiple,
    # so every linear intensity is an affine image of PAN and matching reproduces it
    g = np.random.default_rng(3)
    m0 = g.random((12, 12)) + 0.2
    ms = np.stack([m0, 2.0 * m0])
    pan = upsample(m0, 4)
    meta = SceneMetadata.default(2, ratio=4)
    cfg = FusionConfig(method="idm-base", train=FAST)
    out, diag = fuse_with_artifacts(pan, ms, meta, cfg)
    assert max(diag.detail_energy) <= 1e-12
    for k in range(2):
        est = infer_band(diag.models[k], upsample(ms[k], 4), cfg.patch_size, cfg.stride)
        np.testing.assert_allclose(out[k], est, rtol=0, atol=1e-12)


def test_pretrained_models_reused(small_scene):
    pan, ms, meta = small_scene
    cfg = FusionConfig(train=FAST)
    models, history = train_networks(pan, ms, meta, cfg)
    assert len(models) == 4 and len(history) == FAST.epochs
    np.testing.assert_array_equal(fuse(pan, ms, meta, cfg, models=models[:1]), fuse(pan, ms, meta, cfg))


def test_per_band_networks(small_scene):
    pan, ms, meta = small_scene
    cfg = FusionConfig(train=FAST, shared_network=False)
    models, _ = train_networks(pan, ms, meta, cfg)
    assert len({id(m) for m in models}) == 4
    assert fuse(pan, ms, meta, cfg).shape == (4, *pan.shape)


def test_wrong_model_count(small_scene):
    pan, ms, meta = small_scene
    models, _ = train_networks(pan, ms, meta, FusionConfig(train=FAST))
    with pytest.raises(FusionStageError, match="train-dae"):
        fuse(pan, ms, meta, FusionConfig(train=FAST), models=models[:2])


def test_expand_cannot_train(small_scene):
    with pytest.raises(InvariantError):
        train_networks(*small_scene, FusionConfig(method="expand"))


def test_stage_error_names_stage():
    meta = SceneMetadata.default(2, ratio=4)
    ms = np.random.default_rng(0).random((2, 12, 12))
    with pytest.raises(FusionStageError) as err:
        fuse(np.full((48, 48), 0.5), ms, meta, FusionConfig(train=FAST))
    assert err.value.stage == "histogram-match" and err.value.band == 0


def test_input_errors_tagged():
    meta = SceneMetadata.default(2, ratio=4)
    with pytest.raises(FusionStageError, match="input"):
        fuse(np.zeros((40, 48)), np.zeros((2, 12, 12)), meta)


@pytest.mark.parametrize("bad", [
    dict(method="pca"), dict(patch_size=4, stride=5), dict(ridge=-1.0),
    dict(kernel_size=40), dict(hidden=()),
])
def test_config_validation(bad):
    with pytest.raises(InvariantError):
        FusionConfig(**bad)


def test_config_dict_round_trip():
    cfg = FusionConfig(method="idm-base", patch_size=6, stride=3, train=TrainConfig(epochs=7))
    assert FusionConfig.from_dict(cfg.to_dict()) == cfg
