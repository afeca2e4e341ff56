import numpy as np
import pytest

from cogload.classifier import (
    MlpModel,
    TrainConfig,
    accuracy,
    init_mlp,
    load_mlp,
    loss_and_grads,
    predict,
    predict_proba,
    save_mlp,
    train_mlp,
)
from cogload.errors import ConfigError, NumericalError, ValidationError


def numeric_grads(model, X, y, step=1e-5):
    """Central differences of the mean cross-entropy, one parameter at a time."""
    out = []
    for p in model.params():
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + step
            up = loss_and_grads(model, X, y)[0]
            p[i] = old - step
            down = loss_and_grads(model, X, y)[0]
            p[i] = old
            g[i] = (up - down) / (2 * step)
        out.append(g)
    return out


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-8)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


@pytest.mark.parametrize("seed", range(3))
def test_gradient_check(seed):
    rng = np.random.default_rng(seed)
    model = init_mlp([5, 7, 3], seed=seed)
    for b in model.biases:
        b += rng.normal(0, 0.1, b.shape)
    X = rng.standard_normal((8, 5))
    y = rng.integers(0, 3, 8)
    _, gW, gb = loss_and_grads(model, X, y)
    assert max_relative_error(gW + gb, numeric_grads(model, X, y)) < 1e-4


def test_uniform_output_for_zero_model():
    model = MlpModel([np.zeros((4, 3))], [np.zeros(3)])
    np.testing.assert_array_equal(predict_proba(model, np.ones(4)), [1 / 3] * 3)
    assert predict(model, np.ones(4)) == 0


def test_probabilities_sum_to_one(rng):
    model = init_mlp([6, 10, 3], seed=1)
    P = predict_proba(model, rng.standard_normal((50, 6)) * 100)
    assert np.all((P >= 0) & (P <= 1))
    np.testing.assert_allclose(P.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    with pytest.raises(ValidationError):
        predict_proba(model, np.ones(5))


def _blobs(rng, n=60):
    centers = np.array([[0.0, 4.0], [-4.0, -3.0], [4.0, -3.0]])
    y = np.repeat(np.arange(3), n)
    return centers[y] + rng.standard_normal((3 * n, 2)), y


def test_separable_toy_set(rng):
    X, y = _blobs(rng)
    model = train_mlp(X, y, TrainConfig(max_epochs=200, seed=0))
    assert accuracy(model, X, y) >= 0.95


def test_zero_epochs_returns_initial_model(rng):
    X, y = _blobs(rng, 5)
    cfg = TrainConfig(hidden=(4,), max_epochs=0, seed=11)
    model = train_mlp(X, y, cfg)
    init = init_mlp([2, 4, 3], seed=11)
    for a, b in zip(model.params(), init.params()):
        assert a.tobytes() == b.tobytes()


def test_training_is_deterministic(rng):
    X, y = _blobs(rng, 20)
    cfg = TrainConfig(max_epochs=15, seed=4)
    a, b = train_mlp(X, y, cfg), train_mlp(X, y, cfg)
    for p, q in zip(a.params(), b.params()):
        assert p.tobytes() == q.tobytes()


def test_validation_returns_best_model(rng):
    X, y = _blobs(rng, 30)
    Xv, yv = _blobs(rng, 10)
    model = train_mlp(X, y, TrainConfig(max_epochs=50, patience=3, seed=0), validation=(Xv, yv))
    assert accuracy(model, Xv, yv) >= 0.95


def test_single_class_warns(rng):
    with pytest.warns(RuntimeWarning, match="single class"):
        train_mlp(rng.standard_normal((10, 2)), np.zeros(10, int), TrainConfig(max_epochs=2))


def test_nan_loss_raises():
    X = np.array([[np.nan, 1.0], [0.0, 1.0]])
    with pytest.raises(NumericalError, match="batch 0"):
        train_mlp(X, np.array([0, 1]), TrainConfig(max_epochs=1))


def test_bad_inputs():
    with pytest.raises(ValidationError):
        train_mlp(np.zeros((0, 2)), np.zeros(0, int))
    with pytest.raises(ValidationError):
        train_mlp(np.zeros((2, 2)), np.array([0, 3]))
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"lr": 0.1})


def test_json_round_trip_is_exact(tmp_path):
    model = init_mlp([4, 5, 3], seed=2)
    save_mlp(model, tmp_path / "m.json", config_hash="h")
    back = load_mlp(tmp_path / "m.json")
    assert back.layer_dims == [4, 5, 3]
    for a, b in zip(back.params(), model.params()):
        assert a.tobytes() == b.tobytes()
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()


def test_logit_shift_invariance(rng):
    model = init_mlp([3, 4, 3], seed=0)
    X = rng.standard_normal((10, 3))
    shifted = model.copy()
    shifted.biases[-1] += 123.0
    np.testing.assert_allclose(predict_proba(shifted, X), predict_proba(model, X), rtol=0, atol=1e-12)


def test_full_batch_descent_does_not_increase_loss(rng):
    X, y = _blobs(rng, 10)
    model = init_mlp([2, 8, 3], seed=5)
    losses = []
    for _ in range(10):
        loss, gW, gb = loss_and_grads(model, X, y)
        losses.append(loss)
        for p, g in zip(model.params(), gW + gb):
            p -= 1e-3 * g
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_label_map_is_fixed():
    from cogload.labels import LABELS, Label
    assert LABELS == ("Easy", "Medium", "Difficult")
    assert [int(label) for label in Label] == [0, 1, 2]
    assert init_mlp([2, 3], seed=0).to_dict()["label_map"] == {"0": "Easy", "1": "Medium", "2": "Difficult"}
