import numpy as np
import pytest

from riccati_opnet import datagen
from riccati_opnet.errors import DivergedLoss, NonFiniteGradient
from riccati_opnet.opnet import (AdamState, DeepOnetModel, Mlp, ProgressiveModel, TrainConfig,
                                 adam_step, count_params, forward, loss_and_grad, loss_mse,
                                 param_checksum, train)
from riccati_opnet.opnet.mlp import activate, activate_grad

from conftest import finite_difference_errors


def small_are_model(seed=0, activation="tanh"):
    return DeepOnetModel(3, [36, 16, 8], [2, 8], activation=activation, seed=seed)


@pytest.mark.parametrize("name", ["tanh", "relu", "gelu"])
def test_activation_derivatives(name):
    z = np.linspace(-3, 3, 41) + 0.013
    h = 1e-6
    fd = (activate(name, z + h) - activate(name, z - h)) / (2 * h)
    assert np.allclose(activate_grad(name, z), fd, atol=1e-6)


def test_mlp_shapes_and_param_count(rng):
    net = Mlp([5, 7, 3], "tanh", rng)
    assert net.count_params() == 5 * 7 + 7 + 7 * 3 + 3
    assert net.forward(np.zeros((4, 5))).shape == (4, 3)


def test_prediction_symmetric_and_shapes(rng):
    m = small_are_model()
    x = rng.standard_normal((5, 36))
    p = m.predict(x)
    assert p.shape == (5, 3, 3)
    assert np.array_equal(p, np.swapaxes(p, 1, 2))
    assert forward(m, x[0]).shape == (3, 3)
    dre = DeepOnetModel(3, [135, 16, 8], [2, 8, 8], activation="gelu", time_dependent=True)
    out = dre.predict(rng.standard_normal((2, 135)), np.linspace(0, 1, 11))
    assert out.shape == (2, 11, 3, 3)


def test_folded_predict_matches_forward(rng):
    x = rng.standard_normal((7, 36))
    m = small_are_model()
    m.fit_normalization(x + 3.0, rng.standard_normal((7, 3, 3)))
    assert np.allclose(m.predict(x), m.forward(x)[:, 0], rtol=1e-12, atol=1e-12)
    dre = DeepOnetModel(3, [135, 16, 8], [2, 8, 8], activation="gelu", time_dependent=True,
                        horizon=2.0)
    xd = rng.standard_normal((3, 135))
    times = np.linspace(0, 2, 21)
    assert np.allclose(dre.predict(xd, times), dre.forward(xd, times), rtol=1e-12, atol=1e-12)
    assert np.allclose(dre.predict(xd, times[:5]), dre.forward(xd, times[:5]),
                       rtol=1e-12, atol=1e-12)


def test_predict_cache_follows_weight_changes(rng, tiny_dataset):
    m = small_are_model()
    x = rng.standard_normal((4, 36))
    before = m.predict(x)
    m.set_params([2.0 * a for a in m.params()])
    assert np.allclose(m.predict(x), m.forward(x)[:, 0], rtol=1e-12, atol=1e-12)
    assert not np.allclose(m.predict(x), before)
    m = DeepOnetModel(3, [36, 16, 8], [2, 8, 8], activation="tanh", seed=0)
    m.predict(x)
    train(m, tiny_dataset, TrainConfig(epochs=2, batch_size=16))
    assert np.allclose(m.predict(x), m.forward(x)[:, 0], rtol=1e-12, atol=1e-12)


def test_loss_matches_double_loop(rng):
    m = DeepOnetModel(3, [135, 8, 4], [2, 4], time_dependent=True, seed=1)
    x = rng.standard_normal((3, 135))
    t = np.linspace(0, 1, 5)
    y = rng.standard_normal((3, 5, 3, 3))
    pred = m.forward(x, t)
    ref = 0.0
    for b in range(3):
        for k in range(5):
            ref += np.sum((pred[b, k] - y[b, k]) ** 2)
    assert loss_mse(m, x, y, t) == pytest.approx(ref / 15, rel=1e-12)


def test_zero_residual_gives_zero_gradient(rng):
    m = small_are_model()
    x = rng.standard_normal((4, 36))
    loss, grads = loss_and_grad(m, x, m.forward(x)[:, 0])
    assert loss == 0.0
    assert all(not np.any(g) for g in grads)


@pytest.mark.parametrize("activation", ["tanh", "gelu"])
def test_gradients_match_finite_differences(rng, activation):
    m = small_are_model(activation=activation)
    m.fit_normalization(rng.standard_normal((20, 36)), rng.standard_normal((20, 3, 3)))
    x = rng.standard_normal((4, 36))
    y = rng.standard_normal((4, 3, 3))
    assert finite_difference_errors(m, x, y) <= 1e-4


def test_dre_gradients_match_finite_differences(rng):
    m = DeepOnetModel(2, [10, 6, 4], [2, 5, 4], activation="gelu", time_dependent=True, seed=2)
    x = rng.standard_normal((3, 10))
    t = np.linspace(0, 1, 4)
    y = rng.standard_normal((3, 4, 2, 2))
    assert finite_difference_errors(m, x, y, t) <= 1e-4


def test_progressive_gradients_and_frozen_core(rng):
    core = small_are_model()
    prog = ProgressiveModel(core, n=4, input_width=64, views=2, seed=3)
    x = rng.standard_normal((3, 64))
    y = rng.standard_normal((3, 4, 4))
    before = param_checksum(core.params())
    assert finite_difference_errors(prog, x, y) <= 1e-4
    assert count_params(prog) == prog.embed.count_params() + prog.lift.count_params()
    tape = prog.forward(x, cache=True)[1]
    grads, core_grads = prog.backward(tape, np.ones((3, 1, 4, 4)), return_core_grads=True)
    assert len(core_grads) == len(core.params())
    assert param_checksum(core.params()) == before


def test_adam_bias_correction():
    p = [np.array([1.0])]
    cfg = TrainConfig(lr=0.1)
    state = AdamState.zeros_like(p)
    adam_step(p, [np.array([2.0])], state, cfg)
    # the first bias-corrected step has magnitude lr
    assert p[0][0] == pytest.approx(0.9, abs=1e-8)
    with pytest.raises(NonFiniteGradient):
        adam_step(p, [np.array([np.nan])], state, cfg)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(schedule="step")
    cfg = TrainConfig(epochs=11, lr=1e-3, schedule="cosine", lr_min=1e-5)
    assert cfg.lr_at(0) == pytest.approx(1e-3)
    assert cfg.lr_at(10) == pytest.approx(1e-5)


@pytest.fixture(scope="module")
def tiny_dataset():
    return datagen.build_dataset(datagen.GeneratorConfig(kind="are", n=3, count=12), seed=2)


def test_overfit_small_dataset(tiny_dataset):
    ds = tiny_dataset
    ds_small = datagen.Dataset(ds.records[:10], ds.metadata, n_train=10)
    m = DeepOnetModel(3, [36, 64, 32], [2, 32, 32], activation="tanh", seed=0)
    res = train(m, ds_small, TrainConfig(epochs=2000, lr=3e-3, batch_size=10))
    assert res.final_train_loss <= 1e-4


def test_training_is_deterministic_and_lr_zero_is_flat(tiny_dataset):
    def run(lr):
        m = small_are_model()
        return m, train(m, tiny_dataset, TrainConfig(epochs=5, lr=lr, batch_size=4, seed=9))

    m1, r1 = run(1e-3)
    m2, r2 = run(1e-3)
    assert r1.train_losses == r2.train_losses
    assert param_checksum(m1.params()) == param_checksum(m2.params())
    _, flat = run(0.0)
    assert np.ptp(flat.test_losses) == 0.0


def test_progressive_training_leaves_core(tiny_dataset):
    core = small_are_model()
    ds4 = datagen.build_dataset(datagen.GeneratorConfig(kind="are", n=4, count=8), seed=0)
    prog = ProgressiveModel(core, n=4, input_width=64, views=2)
    before = param_checksum(core.params())
    train(prog, ds4, TrainConfig(epochs=3, batch_size=4))
    assert param_checksum(core.params()) == before


def test_diverged_loss(tiny_dataset):
    m = small_are_model()
    m.out_scale = 1e5  # scrambles outputs so the first batch already exceeds the limit
    with pytest.raises(DivergedLoss):
        train(m, tiny_dataset, TrainConfig(epochs=1, batch_size=4), fit_normalization=False)
