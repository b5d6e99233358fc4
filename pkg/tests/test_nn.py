"""Core net tests: independent forward oracle, finite-difference gradients,
closed-form loss values, checkpoint round-trips."""

import math

import numpy as np
import pytest

from scale_fu import nn


def hand_forward_mlp(model, X):
    """Independent forward pass: per-sample python loops, no shared code."""
    outs = []
    for row in X:
        a = row.copy()
        for spec, vec in zip(model.layers, model.params):
            W = vec[: spec.in_dim * spec.out_dim].reshape(spec.out_dim, spec.in_dim)
            b = vec[spec.in_dim * spec.out_dim :]
            z = np.array([float(W[o] @ a) + b[o] for o in range(spec.out_dim)])
            a = np.maximum(z, 0.0) if spec.activation == nn.ACT_RELU else z
        outs.append(a)
    return np.array(outs)


def fd_grads(model, batch, eps=1e-4):
    """Central finite differences over every coordinate of every layer."""
    grads = []
    for l in range(model.num_layers):
        vec = nn.layer_view(model, l)
        g = np.zeros_like(vec)
        for i in range(vec.size):
            for sign in (+1, -1):
                pert = vec.copy()
                pert[i] += sign * eps
                m = model.copy()
                nn.layer_write(m, l, pert)
                loss, _ = nn.loss_and_grads(m, batch)
                g[i] += sign * loss
            g[i] /= 2 * eps
        grads.append(g)
    return grads


def rel_err(a, b):
    """Max relative error with unit floor, so tiny-gradient noise cannot blow up."""
    return max(
        float(np.max(np.abs(ga - gb) / np.maximum(1.0, np.abs(gb))))
        for ga, gb in zip(a, b)
        if ga.size
    )


def small_batch(rng, dim, classes, n=6):
    return nn.Batch(rng.normal(size=(n, dim)), rng.integers(0, classes, size=n))


def test_forward_matches_hand_rolled_oracle():
    rng = np.random.default_rng(7)
    model = nn.make_model("mlp", 5, 3, seed=11, hidden=(8, 6))
    batch = small_batch(rng, 5, 3)
    got = nn.forward(model, batch)
    want = hand_forward_mlp(model, batch.inputs)
    assert np.max(np.abs(got - want)) < 1e-6


def test_zero_weight_model_loss_is_log_c():
    for classes in (2, 4, 10):
        model = nn.make_model("mlp", 6, classes, seed=0, hidden=(8, 6))
        for l in range(model.num_layers):
            nn.layer_write(model, l, np.zeros(model.layers[l].d))
        rng = np.random.default_rng(3)
        batch = small_batch(rng, 6, classes)
        loss, _ = nn.loss_and_grads(model, batch)
        assert abs(loss - math.log(classes)) < 1e-9


def test_gradcheck_mlp_many_draws():
    worst = 0.0
    for seed in range(12):
        rng = np.random.default_rng(1000 + seed)
        model = nn.make_model("mlp", 4, 3, seed=seed, hidden=(6, 5))
        batch = small_batch(rng, 4, 3, n=5)
        _, analytic = nn.loss_and_grads(model, batch)
        numeric = fd_grads(model, batch)
        worst = max(worst, rel_err(analytic, numeric))
    assert worst < 1e-5


def test_gradcheck_mini_cnn():
    rng = np.random.default_rng(42)
    model = nn.make_model("mini_cnn", 25, 3, seed=1)
    batch = small_batch(rng, 25, 3, n=4)
    _, analytic = nn.loss_and_grads(model, batch)
    numeric = fd_grads(model, batch)
    assert rel_err(analytic, numeric) < 1e-5


def test_duplicated_batch_same_loss_and_grads():
    rng = np.random.default_rng(5)
    model = nn.make_model("mlp", 6, 4, seed=2, hidden=(8, 6))
    batch = small_batch(rng, 6, 4)
    doubled = nn.Batch(
        np.vstack([batch.inputs, batch.inputs]),
        np.concatenate([batch.labels, batch.labels]),
    )
    l1, g1 = nn.loss_and_grads(model, batch)
    l2, g2 = nn.loss_and_grads(model, doubled)
    assert abs(l1 - l2) < 1e-12
    for a, b in zip(g1, g2):
        assert np.allclose(a, b, atol=1e-12)


def test_sgd_two_steps_sequential_semantics():
    """Two steps recompute grads between them; a summed single step differs."""
    rng = np.random.default_rng(9)
    model = nn.make_model("mlp", 6, 3, seed=4, hidden=(8, 6))
    batch = small_batch(rng, 6, 3)
    eta = 0.5

    _, g1 = nn.loss_and_grads(model, batch)
    m1 = nn.sgd_step(model, g1, eta)
    _, g2 = nn.loss_and_grads(m1, batch)
    m2 = nn.sgd_step(m1, g2, eta)

    # independent trace: same arithmetic done directly on copies
    want = [p - eta * a - eta * b for p, a, b in zip(model.params, g1, g2)]
    for got, w in zip(m2.params, want):
        assert np.allclose(got, w, atol=1e-15)

    summed = nn.sgd_step(model, [a + b for a, b in zip(g1, g1)], eta)
    assert any(not np.allclose(a, b) for a, b in zip(summed.params, m2.params))


def test_sgd_step_is_pure():
    model = nn.make_model("mlp", 4, 2, seed=0, hidden=(5, 4))
    before = [p.copy() for p in model.params]
    _, g = nn.loss_and_grads(model, small_batch(np.random.default_rng(0), 4, 2))
    nn.sgd_step(model, g, 0.1)
    for p, q in zip(model.params, before):
        assert np.array_equal(p, q)


def test_layer_view_write_roundtrip():
    model = nn.make_model("mlp", 4, 2, seed=0, hidden=(5, 4))
    vec = np.arange(model.layers[1].d, dtype=np.float64)
    nn.layer_write(model, 1, vec)
    got = nn.layer_view(model, 1)
    assert np.array_equal(got, vec)
    got[0] = 999.0  # view is a copy; model unaffected
    assert model.params[1][0] == 0.0
    with pytest.raises(nn.ShapeError):
        nn.layer_write(model, 1, np.zeros(3))
    with pytest.raises(IndexError):
        nn.layer_view(model, 99)


def test_shape_errors():
    model = nn.make_model("mlp", 4, 2, seed=0, hidden=(5, 4))
    with pytest.raises(nn.ShapeError):
        nn.forward(model, nn.Batch(np.zeros((2, 7)), np.zeros(2, dtype=int)))
    with pytest.raises(nn.ShapeError):
        nn.loss_and_grads(model, nn.Batch(np.zeros((2, 4)), np.array([0, 5])))
    with pytest.raises(nn.ShapeError):
        nn.Batch(np.zeros((2, 4)), np.zeros(3, dtype=int))
    with pytest.raises(nn.ShapeError):
        nn.make_model("mini_cnn", 24, 3, seed=0)  # not square
    with pytest.raises(nn.ShapeError):
        nn.make_model("mini_cnn", 16, 3, seed=0)  # too small for two convs


def test_non_finite_raises_with_layer_index():
    model = nn.make_model("mlp", 4, 2, seed=0, hidden=(5, 4))
    bad = nn.layer_view(model, 1)
    bad[0] = np.inf
    nn.layer_write(model, 1, bad)
    batch = small_batch(np.random.default_rng(0), 4, 2)
    with np.errstate(invalid="ignore"):
        with pytest.raises(nn.NumericError, match="layer 1"):
            nn.forward(model, batch)


def test_init_bounds_and_determinism():
    a, b = nn.make_model("mlp", 16, 4, seed=42), nn.make_model("mlp", 16, 4, seed=42)
    for p, q in zip(a.params, b.params):
        assert np.array_equal(p, q)
    c = nn.make_model("mlp", 16, 4, seed=43)
    assert any(not np.array_equal(p, q) for p, q in zip(a.params, c.params))
    for spec, p in zip(a.layers, a.params):
        fan_in, fan_out = spec.fans
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        assert np.all(np.abs(p) <= bound)


def test_checkpoint_roundtrip(tmp_path):
    for arch, dim in (("mlp", 16), ("mini_cnn", 25)):
        model = nn.make_model(arch, dim, 4, seed=5)
        path = tmp_path / f"{arch}.model"
        man_path = tmp_path / f"{arch}.json"
        nn.save_model(model, path)
        nn.save_manifest(nn.model_manifest(model, seed=5), man_path)
        back = nn.load_model(path, nn.load_manifest(man_path))
        assert back.arch_id == model.arch_id
        assert back.layers == model.layers
        for p, q in zip(back.params, model.params):
            assert np.array_equal(p, q)
    # truncated blob is rejected
    path = tmp_path / "mlp.model"
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(nn.ShapeError):
        nn.load_model(path, nn.load_manifest(tmp_path / "mlp.json"))


def test_mini_cnn_forward_shapes():
    model = nn.make_model("mini_cnn", 36, 5, seed=3)
    batch = small_batch(np.random.default_rng(1), 36, 5, n=3)
    logits = nn.forward(model, batch)
    assert logits.shape == (3, 5)
