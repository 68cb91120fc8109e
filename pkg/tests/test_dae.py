import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idmfuse.dae import (
    DaeModel,
    PatchSet,
    TrainConfig,
    backprop_gradients,
    corrupt,
    extract_patches,
    forward,
    half_sq_error,
    infer_band,
    init_model,
    load_model,
    save_model,
    tile_patches,
    train,
)
from idmfuse.errors import InvariantError
from idmfuse.synth import value_noise

from oracles import forward_loops


def numeric_gradients(m, x, t, h=1e-6):
    gW, gb = [], []
    for params, out in ((m.weights, gW), (m.biases, gb)):
        for p in params:
            g = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = half_sq_error(m, x, t)
                p[idx] = old - h
                down = half_sq_error(m, x, t)
                p[idx] = old
                g[idx] = (up - down) / (2 * h)
            out.append(g)
    return gW, gb


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def smooth_image(n=64, seed=0):
    return value_noise(n, 3, np.random.default_rng(seed), 0.5)


@pytest.mark.parametrize("n, size, stride, count", [(16, 8, 4, 9), (16, 8, 8, 4), (10, 8, 4, 4)])
def test_patch_counts(n, size, stride, count):
    ps = extract_patches(np.zeros((n, n)), size, stride)
    assert len(ps) == count
    assert ps.patches.shape == (count, size * size)


def test_final_offset_corners():
    ps = extract_patches(np.arange(100.0).reshape(10, 10), 8, 4)
    assert ps.row_offsets == [0, 2] and ps.col_offsets == [0, 2]
    # second patch is the top-right one, anchored at column 2
    assert ps.patches[1, 0] == 2.0


def test_patch_row_major_order(rng):
    img = rng.random((12, 12))
    ps = extract_patches(img, 4, 4)
    np.testing.assert_array_equal(ps.patches[3].reshape(4, 4), img[4:8, 0:4])
    np.testing.assert_array_equal(ps.patches[4].reshape(4, 4), img[4:8, 4:8])


def test_disjoint_tiling_covers_image(rng):
    img = rng.random((16, 16))
    ps = extract_patches(img, 8, 8)
    np.testing.assert_array_equal(np.sort(ps.patches.ravel()), np.sort(img.ravel()))


@settings(max_examples=40, deadline=None)
@given(st.integers(9, 30), st.integers(9, 30), st.integers(1, 8), st.data())
def test_round_trip_any_geometry(h, w, size, data):
    stride = data.draw(st.integers(1, size))
    img = np.random.default_rng(h * 31 + w).random((h, w))
    np.testing.assert_allclose(tile_patches(extract_patches(img, size, stride)), img, rtol=0, atol=1e-12)


def test_tile_averages_overlaps():
    ps = PatchSet(2, 1, 3, 2, np.array([[0.2, 0.2, 0.2, 0.2], [0.4, 0.4, 0.4, 0.4]]))
    out = tile_patches(ps)
    assert out[0, 1] == pytest.approx(0.3, abs=1e-15)
    assert out[0, 0] == 0.2 and out[0, 2] == 0.4


def test_tile_rejects_bad_matrix():
    with pytest.raises(InvariantError):
        tile_patches(PatchSet(2, 1, 3, 2, np.zeros((3, 4))))


def test_extract_rejects_oversized_patch():
    with pytest.raises(InvariantError):
        extract_patches(np.zeros((6, 10)), 8, 4)


def test_corrupt_zero_noise_identity(rng):
    x = rng.random(50)
    np.testing.assert_array_equal(corrupt(x, 0.0, 3), x)


def test_corrupt_fraction():
    x = np.ones(10**6)
    frac = np.mean(corrupt(x, 0.1, 42) == 0.0)
    assert abs(frac - 0.1) <= 0.002


def test_corrupt_deterministic(rng):
    x = rng.random(1000) + 0.5
    np.testing.assert_array_equal(corrupt(x, 0.3, 7), corrupt(x, 0.3, 7))


def test_corrupt_bad_prob():
    with pytest.raises(InvariantError):
        corrupt(np.ones(3), 1.0, 0)


def test_zero_model_outputs_zero():
    m = DaeModel([6, 4, 6], [np.zeros((6, 4)), np.zeros((4, 6))], [np.zeros(4), np.zeros(6)])
    np.testing.assert_array_equal(forward(m, np.arange(6.0)), np.zeros(6))


def test_single_linear_layer_identity():
    m = DaeModel([1, 1], [np.ones((1, 1))], [np.zeros(1)])
    for v in (-2.0, 0.0, 3.5):
        assert forward(m, [v])[0] == v


def test_forward_matches_loops():
    m = init_model([4, 3, 4], np.random.default_rng(5))
    m.biases = [np.array([0.1, -0.2, 0.3]), np.array([0.05, 0.0, -0.1, 0.2])]
    x = np.array([0.3, -0.7, 0.2, 0.9])
    want = forward_loops([W.tolist() for W in m.weights], [b.tolist() for b in m.biases], x)
    np.testing.assert_allclose(forward(m, x), want, rtol=0, atol=1e-12)


def test_forward_batch_equals_rows(rng):
    m = init_model([5, 3, 5], rng)
    X = rng.random((7, 5))
    out = forward(m, X)
    for i in range(7):
        np.testing.assert_allclose(out[i], forward(m, X[i]), rtol=0, atol=1e-15)


def test_model_dims_must_chain():
    with pytest.raises(InvariantError):
        DaeModel([4, 3, 4], [np.zeros((4, 3)), np.zeros((2, 4))], [np.zeros(3), np.zeros(4)])


def test_zero_residual_zero_gradients(rng):
    m = init_model([5, 3, 5], rng)
    x = rng.random(5)
    gW, gb = backprop_gradients(m, x, forward(m, x))
    assert all(np.all(g == 0) for g in gW + gb)


def test_gradients_match_finite_differences_9_5_9():
    g = np.random.default_rng(11)
    m = init_model([9, 5, 9], g)
    m.biases = [g.standard_normal(b.shape) * 0.1 for b in m.biases]
    x, t = g.random((3, 9)), g.random((3, 9))
    gW, gb = backprop_gradients(m, x, t)
    nW, nb = numeric_gradients(m, x, t)
    assert max_rel_error(gW + gb, nW + nb) < 1e-5


def test_output_gradients_linear_in_residual(rng):
    m = init_model([6, 4, 6], rng)
    x, t = rng.random(6), rng.random(6)
    y = forward(m, x)
    gW1, gb1 = backprop_gradients(m, x, t)
    gW2, gb2 = backprop_gradients(m, x, y - 2 * (y - t))
    np.testing.assert_allclose(gW2[-1], 2 * gW1[-1], rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(gb2[-1], 2 * gb1[-1], rtol=1e-12, atol=1e-15)


def test_train_config_validation():
    for bad in (dict(noise_prob=1.0), dict(learning_rate=0.0), dict(epochs=0), dict(batch_size=0)):
        with pytest.raises(InvariantError):
            TrainConfig(**bad)


def test_constant_task_converges():
    v = np.linspace(0.1, 0.9, 16)
    X = np.tile(v, (64, 1))
    res = train(X, X, TrainConfig(epochs=500, learning_rate=0.1, noise_prob=0.0), hidden=(8,))
    hist = np.array(res.loss_history)
    assert hist[-1] < 1e-4
    assert np.all(np.diff(hist[1:]) <= 1e-9)


def test_training_deterministic(rng):
    X = rng.random((40, 9))
    cfg = TrainConfig(epochs=5, noise_prob=0.2, seed=4)
    a = train(X, X, cfg, hidden=(5,))
    b = train(X, X, cfg, hidden=(5,))
    for wa, wb in zip(a.model.weights + a.model.biases, b.model.weights + b.model.biases):
        np.testing.assert_array_equal(wa, wb)
    assert a.loss_history == b.loss_history


@pytest.fixture(scope="module")
def identity_model():
    img = smooth_image()
    ps = extract_patches(img, 8, 4)
    idx = np.random.default_rng(1).choice(len(ps), 200, replace=False)
    P = ps.patches[idx]
    cfg = TrainConfig(epochs=200, noise_prob=0.0, seed=0)
    initial = half_sq_error(init_model([64, 32, 64], np.random.default_rng(cfg.seed)), P, P)
    return img, train(P, P, cfg), initial


def test_identity_task_learns(identity_model):
    _, res, initial = identity_model
    assert res.loss_history[-1] < 0.1 * initial


def test_infer_identity_model(identity_model):
    img, res, _ = identity_model
    out = infer_band(res.model, img, 8, 4)
    assert out.shape == img.shape
    assert np.sqrt(np.mean((out - img) ** 2)) < 0.05
    np.testing.assert_array_equal(out, infer_band(res.model, img, 8, 4))


@pytest.mark.parametrize("shape", [(20, 20), (13, 29), (8, 8)])
def test_infer_keeps_dims(identity_model, shape):
    out = infer_band(identity_model[1].model, np.random.default_rng(0).random(shape), 8, 3)
    assert out.shape == shape


def test_infer_rejects_wrong_patch(identity_model):
    with pytest.raises(InvariantError):
        infer_band(identity_model[1].model, np.zeros((16, 16)), 4, 2)


def test_model_save_load_exact(tmp_path, rng):
    m = init_model([16, 8, 4, 8, 16], rng)
    m.biases = [rng.standard_normal(b.shape) for b in m.biases]
    save_model(m, tmp_path)
    back = load_model(tmp_path)
    assert back.layer_dims == m.layer_dims and back.activation == m.activation
    for a, b in zip(m.weights + m.biases, back.weights + back.biases):
        np.testing.assert_array_equal(a, b)


def test_model_payload_size_checked(tmp_path, rng):
    save_model(init_model([4, 2, 4], rng), tmp_path)
    raw = (tmp_path / "dae.f64").read_bytes()
    (tmp_path / "dae.f64").write_bytes(raw[:-8])
    with pytest.raises(InvariantError):
        load_model(tmp_path)
