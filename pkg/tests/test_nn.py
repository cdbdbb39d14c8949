import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meshlearn import autodiff as ad
from meshlearn.nn import (MLP, ArchError, FingerprintError, FlatParams, LabelError, ModelArch, flatten,
                          init_params, model_loss, unflatten)


def small_arch(loss="mse", head="identity", act="relu"):
    return ModelArch(2, ((3, act),), (1, head), loss)


def test_dimension_of_2_3_1():
    arch = small_arch()
    assert arch.dim == (2 * 3 + 3) + (3 * 1 + 1) == 13
    assert init_params(arch, 0).dim == 13


def test_zero_width_rejected():
    with pytest.raises(ArchError):
        ModelArch(2, ((0, "relu"),), (1, "identity"), "mse")
    with pytest.raises(ArchError):
        ModelArch(2, (), (1, "identity"), "mse")
    with pytest.raises(ArchError):
        ModelArch(2, ((4, "relu"),), (3, "identity"), "nll")


def test_init_determinism_and_seed_sensitivity():
    arch = ModelArch(8, ((16, "relu"), (16, "sin")), (4, "log_softmax"), "nll")
    a = init_params(arch, 7)
    assert a.theta.tobytes() == init_params(arch, 7).theta.tobytes()
    for seed in range(10):
        other = init_params(arch, 100 + seed)
        assert np.mean(other.theta != a.theta) >= 0.99


def test_loss_oracles():
    x = np.zeros((1, 2))
    # bce: zero weights give sigmoid(0) = 0.5
    arch = small_arch("bce", "sigmoid")
    loss, _ = model_loss(arch, FlatParams(np.zeros(arch.dim), arch.fingerprint), (x, np.array([[1.0]])))
    assert loss == pytest.approx(np.log(2), abs=1e-12)
    # nll: uniform log-softmax over 10 classes
    arch = ModelArch(2, ((3, "relu"),), (10, "log_softmax"), "nll")
    for label in (0, 4, 9):
        loss, _ = model_loss(arch, FlatParams(np.zeros(arch.dim), arch.fingerprint), (x, np.array([label])))
        assert loss == pytest.approx(np.log(10), abs=1e-12)
    # mse at the target
    arch = small_arch()
    theta = init_params(arch, 1)
    xb = np.random.default_rng(0).normal(size=(5, 2))
    y = MLP(arch).predict(theta.theta, xb)
    loss, g = model_loss(arch, theta, (xb, y))
    assert loss == 0.0 and np.all(g.theta == 0.0)


def test_flatten_round_trip_and_fingerprint():
    arch = ModelArch(3, ((5, "relu"), (4, "sin")), (2, "identity"), "mse")
    p = init_params(arch, 3)
    layers = unflatten(arch, p)
    assert [w.shape for w, _ in layers] == [(3, 5), (5, 4), (4, 2)]
    assert flatten(arch, layers).theta.tobytes() == p.theta.tobytes()
    other = ModelArch(3, ((5, "relu"), (4, "relu")), (2, "identity"), "mse")
    with pytest.raises(FingerprintError):
        unflatten(other, p)
    with pytest.raises(FingerprintError):
        p + init_params(other, 0)


def test_flatparams_bytes_round_trip():
    arch = small_arch()
    p = init_params(arch, 5)
    q = FlatParams.from_bytes(p.to_bytes(), arch.fingerprint, expected_dim=arch.dim)
    assert q.theta.tobytes() == p.theta.tobytes()
    with pytest.raises(ValueError):
        FlatParams.from_bytes(p.to_bytes(), arch.fingerprint, expected_dim=arch.dim + 1)


def test_average_requires_matching_fingerprints():
    arch = small_arch()
    a, b = init_params(arch, 0), init_params(arch, 1)
    np.testing.assert_allclose(FlatParams.average([a, b]).theta, (a.theta + b.theta) / 2)


def test_mapping_arch_first_layer_is_sin_and_predictions_in_open_interval():
    arch = ModelArch(2, ((256, "sin"), (64, "relu"), (64, "relu"), (64, "relu")), (1, "sigmoid"), "bce", 10.0)
    assert arch.activations[0] == "sin"
    pts = np.random.default_rng(0).uniform(-1, 1, size=(500, 2))
    pred = MLP(arch).predict(init_params(arch, 0).theta, pts)
    assert np.all((pred > 0) & (pred < 1))


def test_label_errors_and_empty_batch():
    arch = ModelArch(2, ((3, "relu"),), (3, "log_softmax"), "nll")
    model = MLP(arch)
    tape = ad.Tape()
    t = tape.param(init_params(arch, 0).theta)
    with pytest.raises(LabelError, match="batch index 1"):
        model.loss(t, (np.zeros((2, 2)), np.array([0, 3])))
    with pytest.raises(ValueError):
        model.loss(t, (np.zeros((0, 2)), np.array([], dtype=int)))


CASES = [
    ("relu", "log_softmax", "nll"),
    ("sigmoid", "log_softmax", "nll"),
    ("sin", "sigmoid", "bce"),
    ("relu", "sigmoid", "bce"),
    ("sigmoid", "identity", "mse"),
    ("sin", "identity", "mse"),
]


@pytest.mark.parametrize("act,head,loss", CASES)
def test_model_gradient_matches_finite_differences(act, head, loss):
    rng = np.random.default_rng(0)
    out = 1 if loss == "bce" else 3
    arch = ModelArch(4, ((5, act), (4, "relu")), (out, head), loss, sin_omega=3.0)
    model = MLP(arch)
    x = rng.normal(size=(6, 4))
    y = rng.integers(0, out, size=6) if loss == "nll" else rng.integers(0, 2, size=(6, out)).astype(float)
    err = ad.finite_diff_check(lambda t: model.loss(t, (x, y)), init_params(arch, 1).theta)
    assert err < 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 1000))
def test_flat_dimension_is_pure_function_of_arch(w1, w2, seed):
    arch = ModelArch(3, ((w1, "relu"), (w2, "sigmoid")), (2, "identity"), "mse")
    assert arch.dim == (3 * w1 + w1) + (w1 * w2 + w2) + (w2 * 2 + 2)
    p = init_params(arch, seed)
    assert flatten(arch, unflatten(arch, p)).theta.tobytes() == p.theta.tobytes()
