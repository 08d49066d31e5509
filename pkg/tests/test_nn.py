import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nfde import autodiff as ad
from nfde.autodiff import NonFiniteError, Tape, grad_check
from nfde.nn import (
    AdamState,
    AlphaParam,
    Mlp,
    MlpConfig,
    adam_step,
    alpha_value,
    load_model,
    mlp_forward,
    mlp_init,
    mse_loss,
    save_model,
)


def test_init_deterministic_and_bounded():
    cfg = MlpConfig((1, 64, 64, 1), seed=7)
    a, b = mlp_init(cfg), mlp_init(cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    assert all(np.all(bias == 0.0) for bias in a.biases)
    assert np.all(np.abs(a.weights[0]) <= 1.0)
    assert np.all(np.abs(a.weights[1]) <= 1 / 8)
    for layer, w in enumerate(a.weights):
        assert w.shape == (cfg.layer_sizes[layer + 1], cfg.layer_sizes[layer])


def test_config_validation():
    with pytest.raises(ValueError):
        MlpConfig((3,))
    with pytest.raises(ValueError):
        MlpConfig((1, 0, 1))
    with pytest.raises(ValueError):
        MlpConfig((1, 1), output_activation="relu")


def test_forward_examples():
    net = mlp_init(MlpConfig((2, 5, 3)))
    net.set_flat(np.zeros(net.n_params))
    assert np.all(mlp_forward(net, np.array([3.0, -1.0])) == 0.0)

    lin = Mlp([np.array([[1.0, 1.0]])], [np.zeros(1)], MlpConfig((2, 1)))
    assert mlp_forward(lin, np.array([3.0, 4.0]))[0] == 7.0

    with pytest.raises(ValueError):
        mlp_forward(lin, np.array([1.0]))


def test_forward_matches_matrix_oracle():
    net = mlp_init(MlpConfig((1, 8, 1), seed=3))
    net.biases[0] = np.linspace(-0.5, 0.5, 8)
    for x in np.linspace(-2, 2, 9):
        # straight-line reimplementation
        hidden = [math.tanh(net.weights[0][i, 0] * x + net.biases[0][i]) for i in range(8)]
        ref = sum(net.weights[1][0, i] * hidden[i] for i in range(8)) + net.biases[1][0]
        assert mlp_forward(net, np.array([x]))[0] == pytest.approx(ref, abs=1e-12)


def _net_loss(net, xs, ys):
    shapes = [a.shape for a in net.arrays()]

    def fn(flat):
        params, pos = [], 0
        for shape in shapes:
            size = int(np.prod(shape))
            params.append(ad.take(flat, np.arange(pos, pos + size).reshape(shape)))
            pos += size
        preds = [mlp_forward(net, np.array([x]), params) for x in xs]
        return mse_loss(preds, [np.array([y]) for y in ys])

    return fn


def test_mlp_mse_gradient_check():
    net = mlp_init(MlpConfig((1, 6, 6, 1), seed=11))
    xs = np.linspace(0, 1, 5)
    err = grad_check(_net_loss(net, xs, np.sin(3 * xs)), net.flat(), eps=1e-6)
    assert err <= 1e-6


def test_mlp_gradients_random_nets():
    rng = np.random.default_rng(0)
    for trial in range(20):
        net = mlp_init(MlpConfig((1, 5, 4, 1), seed=trial))
        flat = net.flat() + rng.normal(scale=0.1, size=net.n_params)
        xs = rng.uniform(-1, 1, 3)
        assert grad_check(_net_loss(net, xs, xs**2), flat, eps=1e-6) <= 1e-6


def test_alpha_value_examples():
    assert alpha_value(AlphaParam("scalar_logit", logit=0.0)) == 0.5
    assert alpha_value(AlphaParam("scalar_logit", logit=math.log(99))) == pytest.approx(0.99, abs=1e-12)
    assert AlphaParam.scalar(0.99).logit == pytest.approx(4.59512, abs=1e-5)
    assert alpha_value(AlphaParam.constant(1.0)) == 1.0
    a = AlphaParam.tiny(0.99, seed=2)
    assert 0.0 < alpha_value(a) < 1.0
    assert a.net.config.layer_sizes == (1, 32, 1)


def test_alpha_is_taped():
    tape = Tape()
    out = alpha_value(AlphaParam("scalar_logit", logit=0.0), tape)
    g = tape.backward(out)
    assert g.parameters()["alpha.logit"] == pytest.approx(0.25)
    tape = Tape()
    out = alpha_value(AlphaParam.tiny(seed=4), tape)
    assert "alpha.w0" in tape.backward(out).parameters()


@given(st.floats(-50, 50))
def test_alpha_bounded(z):
    a = alpha_value(AlphaParam("scalar_logit", logit=z))
    assert 0.0 < a < 1.0


def test_alpha_bounded_1000_logits():
    for z in np.random.default_rng(9).uniform(-50, 50, 1000):
        assert 0.0 < alpha_value(AlphaParam("scalar_logit", logit=float(z))) < 1.0


def test_mse_examples():
    assert mse_loss([np.array([1.0]), np.array([2.0])], [[1.0], [2.0]]) == 0.0
    assert mse_loss([np.array([1.0]), np.array([2.0])], [[0.0], [0.0]]) == 2.5
    assert mse_loss([np.array([0.3])], [[1.0]]) == pytest.approx(0.49)
    with pytest.raises(ValueError):
        mse_loss([], [])
    with pytest.raises(ValueError):
        mse_loss([np.array([1.0])], [[1.0], [2.0]])


def test_adam_first_step():
    p, st_ = adam_step(AdamState.zeros(1), np.zeros(1), np.ones(1))
    assert p[0] == pytest.approx(-1e-3 / (1 + 1e-8), abs=1e-15)
    assert st_.step_count == 1


def test_adam_zero_gradient_is_noop():
    p0 = np.array([0.3, -2.0])
    p, _ = adam_step(AdamState.zeros(2), p0, np.zeros(2))
    np.testing.assert_array_equal(p, p0)


def test_adam_three_constant_steps():
    # hand iteration: m_hat = v_hat = 1 at every step, so each update is lr / (1 + eps)
    state, p = AdamState.zeros(1), np.zeros(1)
    for _ in range(3):
        p, state = adam_step(state, p, np.ones(1))
    assert p[0] == pytest.approx(-0.003, abs=1e-6)
    assert state.step_count == 3 and np.all(state.v >= 0)


def test_adam_lr_scale_equivariance():
    g = np.array([0.7, -3.0, 1e-4])
    p1, _ = adam_step(AdamState.zeros(3, lr=1e-3), np.zeros(3), g)
    p2, _ = adam_step(AdamState.zeros(3, lr=2e-3), np.zeros(3), g)
    np.testing.assert_array_equal(p2, 2 * p1)


def test_adam_errors():
    with pytest.raises(NonFiniteError):
        adam_step(AdamState.zeros(1), np.zeros(1), np.array([np.nan]))
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros(2), np.zeros(1), np.zeros(1))


@pytest.mark.parametrize("alpha", [None, AlphaParam.scalar(0.9), AlphaParam.tiny(seed=1), AlphaParam.constant(1.0)])
def test_model_roundtrip(tmp_path, alpha):
    net = mlp_init(MlpConfig((1, 4, 1), seed=5))
    save_model(tmp_path / "m.txt", net, alpha, {"x0": [0.25], "solver": "pc_fractional"})
    text = (tmp_path / "m.txt").read_text()
    assert text.startswith("nfde-model 1\n")
    net2, alpha2, extras = load_model(tmp_path / "m.txt")
    assert all(np.array_equal(a, b) for a, b in zip(net.arrays(), net2.arrays()))
    assert extras["x0"] == ["0.25"] and extras["solver"] == ["pc_fractional"]
    if alpha is None:
        assert alpha2 is None
    else:
        assert alpha_value(alpha2) == alpha_value(alpha)


def test_load_rejects_foreign_file(tmp_path):
    (tmp_path / "x.txt").write_text("hello\n")
    with pytest.raises(ValueError):
        load_model(tmp_path / "x.txt")
