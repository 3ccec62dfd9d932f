import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tactile_vae.gradcheck import elbo_suite
from tactile_vae.nn import Layer, MlpParams, NumericError, ShapeError
from tactile_vae.vae import (
    LOG_2PI,
    LatentCode,
    TrainConfig,
    VaeModel,
    active_units,
    decode,
    elbo_loss,
    encode,
    gaussian_nll,
    init_vae,
    kl_to_standard_normal,
    reparameterize,
    train_vae,
)


def tiny_model(d=3, L=2, hidden=4, act="sigmoid", seed=0):
    return init_vae(d, TrainConfig(hidden_width=hidden, latent_width=L, activation=act), np.random.default_rng(seed))


def zeroed(net: MlpParams) -> MlpParams:
    return MlpParams([Layer(np.zeros_like(l.weights), np.zeros_like(l.bias), l.activation) for l in net.layers])


# --- reparameterization -------------------------------------------------------

def test_reparameterize_examples():
    code = LatentCode(np.array([1.0, 2.0]), np.array([np.log(4.0), 0.0]))
    np.testing.assert_allclose(reparameterize(code, np.ones(2)), [3.0, 3.0])
    np.testing.assert_array_equal(reparameterize(code, np.zeros(2)), code.mean)
    unit = LatentCode(np.array([0.5, -1.0]), np.zeros(2))
    np.testing.assert_allclose(reparameterize(unit, np.array([1.0, 0.0])), [1.5, -1.0])
    with pytest.raises(ShapeError):
        reparameterize(code, np.ones(3))


def test_reparameterize_sample_moments():
    rng = np.random.default_rng(0)
    code = LatentCode(np.array([0.7, -1.3, 2.0]), np.array([-1.0, 0.5, 1.2]))
    n = 100_000
    z = reparameterize(LatentCode(np.tile(code.mean, (n, 1)), np.tile(code.logvar, (n, 1))),
                       rng.standard_normal((n, 3)))
    np.testing.assert_allclose(z.mean(axis=0), code.mean, rtol=0.02, atol=0.02)
    np.testing.assert_allclose(z.var(axis=0), np.exp(code.logvar), rtol=0.02)


# --- KL -----------------------------------------------------------------------

def test_kl_examples():
    assert kl_to_standard_normal(LatentCode(np.zeros(4), np.zeros(4))) == 0.0
    assert kl_to_standard_normal(LatentCode(np.array([1.0]), np.array([0.0]))) == pytest.approx(0.5)
    batch = LatentCode(np.array([[0.0], [1.0]]), np.zeros((2, 1)))
    np.testing.assert_allclose(kl_to_standard_normal(batch), [0.0, 0.5])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-8, 8)), min_size=1, max_size=8))
def test_kl_is_nonnegative_and_zero_only_at_prior(pairs):
    m = np.array([p[0] for p in pairs])
    lv = np.array([p[1] for p in pairs])
    kl = kl_to_standard_normal(LatentCode(m, lv))
    assert kl >= 0
    if np.any(m != 0) or np.any(lv != 0):
        # strictly positive off the prior, up to round-off for tiny offsets
        assert kl > 0 or np.max(np.abs(m)) + np.max(np.abs(lv)) < 1e-7


def test_kl_matches_monte_carlo_on_a_few_codes():
    rng = np.random.default_rng(1)
    for _ in range(3):
        code = LatentCode(rng.normal(0, 1, 4), rng.normal(0, 0.7, 4))
        eps = rng.standard_normal((200_000, 4))
        z = code.mean + np.exp(0.5 * code.logvar) * eps
        log_q = -0.5 * np.sum(eps**2 + code.logvar + LOG_2PI, axis=1)
        log_p = -0.5 * np.sum(z**2 + LOG_2PI, axis=1)
        mc = np.mean(log_q - log_p)
        assert mc == pytest.approx(kl_to_standard_normal(code), rel=0.03)


# --- reconstruction term ------------------------------------------------------------

def test_gaussian_nll_examples():
    x = np.array([0.3, -1.0, 2.0])
    assert gaussian_nll(x, x, 0.0) == pytest.approx(0.5 * 3 * LOG_2PI)
    assert gaussian_nll(np.array([1.0]), np.array([0.0]), 0.0) == pytest.approx(0.5 * (1 + LOG_2PI))
    with pytest.raises(ShapeError):
        gaussian_nll(x, x[:2], 0.0)


def test_optimal_output_logvar_is_log_mean_squared_residual():
    rng = np.random.default_rng(2)
    x, mu = rng.normal(size=50), rng.normal(size=50)
    s_star = np.log(np.mean((x - mu) ** 2))
    h = 1e-5
    deriv = (gaussian_nll(x, mu, s_star + h) - gaussian_nll(x, mu, s_star - h)) / (2 * h)
    assert abs(deriv) < 1e-6
    assert gaussian_nll(x, mu, s_star) < min(gaussian_nll(x, mu, s_star + 0.1), gaussian_nll(x, mu, s_star - 0.1))


# --- the bound --------------------------------------------------------------------

def test_pinned_model_loss_is_gaussian_constant():
    d, L = 3, 2
    model = tiny_model(d, L)
    x = np.array([[0.4, -0.2, 1.5]])
    rec = zeroed(model.recognition)  # mean 0, logvar 0 -> KL 0
    gen = zeroed(model.generative)
    gen.layers[-1].bias[...] = x[0]  # reconstruction equals the (standardized == raw) frame
    pinned = VaeModel(rec, gen, 0.0)
    eps = np.random.default_rng(0).normal(size=(1, L))
    assert elbo_loss(pinned, x, eps) == pytest.approx(0.5 * d * LOG_2PI)


def test_loss_decomposes_into_nll_plus_kl():
    rng = np.random.default_rng(3)
    model = tiny_model(4, 3, 6)
    model.output_logvar = -0.4
    x = rng.normal(size=(7, 4))
    eps = rng.normal(size=(7, 3))
    code = encode(model, x)
    z = reparameterize(code, eps)
    from tactile_vae.nn import mlp_forward
    nll = gaussian_nll(model.standardize(x), mlp_forward(model.generative, z), model.output_logvar)
    expected = np.mean(nll + kl_to_standard_normal(code))
    assert elbo_loss(model, x, eps) == pytest.approx(expected, rel=1e-12)
    assert elbo_loss(model, x, eps) >= np.mean(kl_to_standard_normal(code)) + np.min(nll)


def test_elbo_gradients_match_finite_differences():
    rep = elbo_suite(seed=4)
    assert len(rep.cases) == 2
    assert rep.passed(1e-4), rep.cases


def test_elbo_reports_bad_frame_index():
    model = tiny_model()
    x = np.zeros((4, 3))
    x[2, 1] = np.inf
    with pytest.raises(NumericError, match="frame 2"):
        elbo_loss(model, x, np.zeros((4, 2)))


def test_elbo_rejects_wrong_noise_shape():
    with pytest.raises(ShapeError):
        elbo_loss(tiny_model(), np.zeros((4, 3)), np.zeros((4, 5)))


# --- model, encode, decode -------------------------------------------------------------

def test_model_shape_invariants():
    model = tiny_model(5, 3, 4)
    assert model.recognition.n_out == 2 * model.latent_width
    assert model.generative.n_out == model.taxel_width == 5
    with pytest.raises(ShapeError):
        VaeModel(model.recognition, tiny_model(4, 3, 4).generative)
    with pytest.raises(NumericError):
        VaeModel(model.recognition, model.generative, float("nan"))
    with pytest.raises(ShapeError):
        model.standardize(np.zeros((2, 4)))


def test_encode_with_zero_recognition_weights_returns_bias():
    model = tiny_model(3, 2)
    rec = zeroed(model.recognition)
    rec.layers[-1].bias[...] = [1.0, 2.0, -0.5, 0.25]
    m = VaeModel(rec, model.generative)
    code = encode(m, np.random.default_rng(0).normal(size=(6, 3)))
    np.testing.assert_array_equal(code.mean, np.tile([1.0, 2.0], (6, 1)))
    np.testing.assert_array_equal(code.logvar, np.tile([-0.5, 0.25], (6, 1)))


def test_encode_is_deterministic_and_decode_unstandardizes():
    model = tiny_model(3, 2)
    model.input_mean = np.array([1.0, 2.0, 3.0])
    model.input_scale = np.array([2.0, 0.5, 1.0])
    x = np.random.default_rng(1).normal(size=(5, 3))
    assert encode(model, x).mean.tobytes() == encode(model, x).mean.tobytes()
    from tactile_vae.nn import mlp_forward
    z = np.random.default_rng(2).normal(size=(5, 2))
    np.testing.assert_allclose(decode(model, z), mlp_forward(model.generative, z) * model.input_scale + model.input_mean)


def test_active_units_examples():
    model = tiny_model(3, 4)
    frames = np.random.default_rng(0).normal(size=(200, 3))
    quiet = VaeModel(zeroed(model.recognition), model.generative)
    assert active_units(quiet, frames) == []
    assert active_units(quiet, frames, criterion="posterior") == []

    # mean_0 = x_0, everything else constant, logvar_0 pulled well below 0
    w = np.zeros((8, 3))
    w[0, 0] = 1.0
    b = np.zeros(8)
    b[4] = -3.0
    planted = VaeModel(MlpParams([Layer(w, b, "identity")]), model.generative)
    assert active_units(planted, frames) == [0]
    assert active_units(planted, frames, criterion="posterior") == [0]
    with pytest.raises(ValueError):
        active_units(planted, frames, threshold=0)
    with pytest.raises(ValueError):
        active_units(planted, frames, criterion="entropy")


# --- training ---------------------------------------------------------------------

def synthetic_1d(n=400, seed=0):
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1, 1, n)
    return np.column_stack([u, 2 * u + 0.05 * rng.normal(size=n), u**2])


def test_training_reduces_loss_and_is_deterministic():
    frames = synthetic_1d()
    cfg = TrainConfig(epochs=200, hidden_width=8, latent_width=2, batch_size=50, seed=5)
    model, hist = train_vae(frames, cfg)
    assert len(hist) == 200 and hist[-1] < hist[0]
    _, hist2 = train_vae(frames, cfg)
    assert np.asarray(hist).tobytes() == np.asarray(hist2).tobytes()
    assert model.config == cfg
    np.testing.assert_allclose(model.input_mean, frames.mean(axis=0))


def test_training_with_adadelta_and_rectifier_moves_off_init():
    frames = synthetic_1d(seed=1)
    cfg = TrainConfig.for_archetype("sparse_linear", epochs=30, hidden_width=8, latent_width=2, batch_size=50)
    assert (cfg.activation, cfg.optimizer, cfg.step_rate) == ("rectifier", "adadelta", 0.1)
    model, hist = train_vae(frames, cfg)
    assert hist[-1] < hist[0]
    start = init_vae(3, cfg, np.random.default_rng(cfg.seed))
    moved = model.recognition.layers[0].weights - start.recognition.layers[0].weights
    assert np.max(np.abs(moved)) > 1e-2


def test_archetype_configs():
    dense = TrainConfig.for_archetype("dense_nonlinear")
    assert (dense.activation, dense.optimizer, dense.step_rate, dense.hidden_width) == ("sigmoid", "rmsprop", 0.001, 512)
    assert TrainConfig.for_archetype("dense_nonlinear", hidden_width=128).hidden_width == 128
    with pytest.raises(ValueError):
        TrainConfig.for_archetype("capacitive")
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_training_rejects_empty_input():
    with pytest.raises(ValueError):
        train_vae(np.zeros((0, 3)), TrainConfig(epochs=1, hidden_width=4, latent_width=2))
