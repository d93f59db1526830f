import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actmotion import cvae
from actmotion import tensor as tn
from actmotion.checkpoint import load_checkpoint, save_checkpoint
from actmotion.dct import dct_basis
from actmotion.transition import TransitionSample, pad_target

CFG = cvae.ModelConfig(K=3, A=3, N=4, hidden=8, mlp=(8,), latent=4, embed=4)


@pytest.fixture
def params():
    return cvae.init_params(CFG, seed=0)


@pytest.fixture
def p(params):
    return cvae.as_tensors(params)


def sample(rng, T=5, T0=1, P=2, action=0):
    Y = rng.standard_normal((CFG.K, T))
    return TransitionSample(rng.standard_normal((CFG.K, CFG.N)), Y, action, T0=T0, P=P,
                            target=pad_target(Y, P))


def gaussian(mu, log_std):
    return cvae.GaussianParams(tn.Tensor(np.asarray(mu, float)), tn.Tensor(np.asarray(log_std, float)))


# --------------------------------------------------------------------------
# encoders


def test_posterior_shapes_and_positive_std(p):
    rng = np.random.default_rng(0)
    g = cvae.encode_posterior(p, CFG, rng.standard_normal((3, 4)), rng.standard_normal((3, 7)), 1)
    assert g.mean.shape == g.std.shape == (1, CFG.latent)
    assert np.all(g.std.data > 0)


def test_posterior_zero_output_layer_gives_bias(params):
    params["post.out.w"][:] = 0.0
    params["post.out.b"][:] = np.linspace(-1, 1, 2 * CFG.latent)
    g = cvae.encode_posterior(cvae.as_tensors(params), CFG, np.ones((3, 4)), np.ones((3, 6)), 0)
    np.testing.assert_array_equal(g.mean.data[0], params["post.out.b"][:CFG.latent])
    np.testing.assert_allclose(g.std.data[0], np.exp(params["post.out.b"][CFG.latent:]))


def test_log_std_is_clamped(params):
    params["prior.out.w"][:] = 0.0
    params["prior.out.b"][CFG.latent:] = 50.0
    g = cvae.encode_prior(cvae.as_tensors(params), CFG, np.zeros((3, 4)), 0)
    np.testing.assert_allclose(g.std.data, np.exp(10.0))


def test_encoders_deterministic_and_action_sensitive(p):
    X = np.random.default_rng(1).standard_normal((3, 4))
    a = cvae.encode_prior(p, CFG, X, 0)
    b = cvae.encode_prior(p, CFG, X, 0)
    c = cvae.encode_prior(p, CFG, X, 2)
    np.testing.assert_array_equal(a.mean.data, b.mean.data)
    assert not np.allclose(a.mean.data, c.mean.data)


def test_encoder_shape_errors(p):
    with pytest.raises(tn.ShapeError):
        cvae.encode_prior(p, CFG, np.zeros((2, 4)), 0)
    with pytest.raises(tn.ShapeError):
        cvae.encode_posterior(p, CFG, np.zeros((3, 4)), np.zeros((2, 5)), 0)


# --------------------------------------------------------------------------
# sampling and KL


def test_reparameterize_examples():
    g = gaussian([[1.0, -2.0]], [[0.0, np.log(3.0)]])
    np.testing.assert_array_equal(cvae.reparameterize(g, np.zeros(2)).data, [[1.0, -2.0]])
    np.testing.assert_allclose(cvae.reparameterize(g, np.ones(2)).data, [[2.0, 1.0]])
    tight = gaussian([[0.5]], [[-10.0]])
    assert cvae.reparameterize(tight, [[1.0]]).item() == pytest.approx(0.5, abs=1e-4)


def test_reparameterize_monte_carlo_mean():
    mu, sd = np.array([0.3, -1.2]), np.array([0.5, 2.0])
    eps = np.random.default_rng(0).standard_normal((100_000, 2))
    g = gaussian(np.tile(mu, (100_000, 1)), np.tile(np.log(sd), (100_000, 1)))
    z = cvae.reparameterize(g, eps).data
    assert np.all(np.abs(z.mean(axis=0) - mu) < 3 * sd / np.sqrt(100_000))


def test_reparameterize_gradient_flows_to_mean_and_std():
    mu = tn.Tensor(np.array([[0.2, 0.4]]), requires_grad=True)
    ls = tn.Tensor(np.array([[0.0, 0.5]]), requires_grad=True)
    g = cvae.GaussianParams(mu, ls)
    eps = np.array([[0.7, -1.1]])
    tn.backward(tn.sum_(cvae.reparameterize(g, eps)))
    np.testing.assert_allclose(mu.grad, [[1.0, 1.0]])
    np.testing.assert_allclose(ls.grad, eps * np.exp(ls.data))


def test_kl_hand_value():
    kl = cvae.kl_divergence(gaussian([[0.0]], [[0.0]]), gaussian([[0.0]], [[np.log(2.0)]]))
    assert kl.item() == pytest.approx(0.5 * (np.log(4.0) + 0.25 - 1.0), rel=1e-12)


def test_kl_zero_on_identical_and_additive():
    rng = np.random.default_rng(2)
    mu, ls = rng.standard_normal((1, 2)), rng.standard_normal((1, 2))
    assert cvae.kl_divergence(gaussian(mu, ls), gaussian(mu, ls)).item() == 0.0
    mu2, ls2 = rng.standard_normal((1, 2)), rng.standard_normal((1, 2))
    both = cvae.kl_divergence(gaussian(mu, ls), gaussian(mu2, ls2)).item()
    parts = sum(cvae.kl_divergence(gaussian(mu[:, [d]], ls[:, [d]]),
                                   gaussian(mu2[:, [d]], ls2[:, [d]])).item() for d in range(2))
    assert both == pytest.approx(parts, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_kl_nonnegative(v):
    assert cvae.kl_divergence(gaussian([v[:2]], [v[2:]]), gaussian([[0.1, -0.2]], [[0.3, 0.0]])).item() >= 0


# --------------------------------------------------------------------------
# decoder and losses


def test_zero_output_projection_repeats_last_pose(params):
    params["dec.out.w"][:] = 0.0
    params["dec.out.b"][:] = 0.0
    X = np.random.default_rng(3).standard_normal((3, 4))
    Y = cvae.decode(cvae.as_tensors(params), CFG, X, 1, np.zeros(CFG.latent), 6).data
    assert Y.shape == (1, 3, 6)
    np.testing.assert_array_equal(Y[0], np.repeat(X[:, -1:], 6, axis=1))


def test_decode_single_frame_and_determinism(p):
    X = np.random.default_rng(4).standard_normal((3, 4))
    z = np.random.default_rng(5).standard_normal(CFG.latent)
    a = cvae.decode(p, CFG, X, 0, z, 1).data
    assert a.shape == (1, 3, 1)
    np.testing.assert_array_equal(cvae.decode(p, CFG, X, 0, z, 3).data[:, :, :1], a)
    with pytest.raises(ValueError):
        cvae.decode(p, CFG, X, 0, z, 0)


def test_reconstruction_loss_examples():
    assert cvae.reconstruction_loss(np.array([[3.0], [4.0]]), np.zeros((2, 1)), 0).item() == 25.0
    rng = np.random.default_rng(6)
    target = rng.standard_normal((2, 4))
    Y = np.concatenate([rng.standard_normal((2, 3)), target], axis=1)
    assert cvae.reconstruction_loss(Y, target, 3).item() == 0.0
    Y2 = Y.copy()
    Y2[:, :3] += 100.0
    assert cvae.reconstruction_loss(Y2, target, 3).item() == 0.0
    noisy = Y + 0.1
    base = cvae.reconstruction_loss(noisy, target, 3).item()
    doubled = cvae.reconstruction_loss(Y + 0.2, target, 3).item()
    assert doubled == pytest.approx(4 * base)
    with pytest.raises(tn.ShapeError):
        cvae.reconstruction_loss(Y, target, 2)


def test_batched_rec_matches_per_sample_loss(params):
    rng = np.random.default_rng(7)
    samples = [sample(rng, T=5, T0=1), sample(rng, T=3, T0=0, action=2)]
    batch = cvae.make_batch(samples)
    p = cvae.as_tensors(params)
    eps = rng.standard_normal((2, CFG.latent))
    weights = cvae.LossWeights(rec=1.0, smooth=0.0)
    basis = dct_basis(4, 3)
    _, parts = cvae.total_loss(p, CFG, batch, weights, basis, eps)
    singles = []
    for b, s in enumerate(samples):
        one = cvae.make_batch([s])
        singles.append(cvae.total_loss(p, CFG, one, weights, basis, eps[b:b + 1])[1]["rec"])
    assert parts["rec"] == pytest.approx(np.mean(singles), rel=1e-10)


def test_make_batch_layout():
    rng = np.random.default_rng(8)
    batch = cvae.make_batch([sample(rng, T=4, T0=2, P=1), sample(rng, T=2, T0=0, P=1)])
    assert batch.rollout == 7
    np.testing.assert_array_equal(batch.lengths, [5, 3])
    np.testing.assert_allclose(batch.weight[0, 0], [0, 0, .2, .2, .2, .2, .2])
    np.testing.assert_allclose(batch.weight[1, 0], [1 / 3] * 3 + [0] * 4)


def test_total_loss_without_rec_and_smooth_is_kl(params):
    rng = np.random.default_rng(9)
    batch = cvae.make_batch([sample(rng)])
    loss, parts = cvae.total_loss(cvae.as_tensors(params), CFG, batch, cvae.LossWeights(0, 0),
                                  dct_basis(4, 3), rng.standard_normal((1, CFG.latent)))
    assert loss.item() == parts["kl"] == parts["total"]


def test_loss_weights_nonnegative():
    with pytest.raises(ValueError):
        cvae.LossWeights(rec=-1.0)


@pytest.mark.parametrize("seed", range(3))
def test_total_loss_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    params = cvae.init_params(CFG, seed)
    batch = cvae.make_batch([sample(rng, T0=seed % 3)])
    eps = rng.standard_normal((1, CFG.latent))
    f = lambda q: cvae.total_loss(q, CFG, batch, cvae.LossWeights(), dct_basis(4, 3), eps)[0]
    assert tn.finite_difference_check(f, params) < 1e-3


# --------------------------------------------------------------------------
# stopping and prediction


def test_stopping_constant_sequence_stops_at_start():
    assert cvae.stopping_index(np.ones((2, 10)), Q=5, delta=0.015) == 0


def test_stopping_linear_motion_never_stops():
    # window of Q equally spaced frames with step s: mean distance to the centre
    Q, s = 5, 0.05
    expected = s * np.mean(np.abs(np.arange(Q) - (Q - 1) / 2))
    line = np.outer([1.0, 0.0], s * np.arange(40))
    np.testing.assert_allclose(cvae.window_scores(line, Q), expected)
    assert expected > 0.015
    assert cvae.stopping_index(line, Q, 0.015) is None


def test_stopping_needs_enough_frames():
    with pytest.raises(ValueError):
        cvae.stopping_index(np.zeros((1, 5)), Q=5, delta=0.01)


@pytest.mark.parametrize("s", [6, 17, 30])
def test_stopping_finds_constant_tail(s):
    rng = np.random.default_rng(s)
    motion = np.cumsum(rng.uniform(0.2, 0.4, (3, s)), axis=1)
    Y = np.concatenate([motion, np.repeat(motion[:, -1:], 25, axis=1)], axis=1)
    i = cvae.stopping_index(Y, 5, 0.015)
    assert i is not None and abs(i - s) <= 5
    assert np.all(cvae.window_scores(Y, 5)[:i] >= 0.015)


def test_stopping_config_bounds():
    with pytest.raises(ValueError):
        cvae.StoppingConfig(Q=0)
    with pytest.raises(ValueError):
        cvae.StoppingConfig(Q=5, delta=0.0)
    with pytest.raises(ValueError):
        cvae.StoppingConfig(Q=10, T_max=10)


def test_truncate_keeps_frames_up_to_window_end():
    Y = np.concatenate([np.outer([1.0], np.arange(8.0)), np.full((1, 12), 7.0)], axis=1)
    stop = cvae.StoppingConfig(Q=3, delta=0.01, T_max=20)
    i = cvae.stopping_index(Y, 3, 0.01)
    assert cvae.truncate(Y, stop).shape[1] == i + 3


def test_predict_deterministic_and_bounded(params):
    X = np.random.default_rng(10).standard_normal((3, 4))
    stop = cvae.StoppingConfig(Q=3, delta=0.01, T_max=25)
    a = cvae.predict(params, CFG, X, 1, stop, np.random.default_rng(0))
    b = cvae.predict(params, CFG, X, 1, stop, np.random.default_rng(0))
    np.testing.assert_array_equal(a, b)
    assert 1 <= a.shape[1] <= 25
    cut, full = cvae.predict(params, CFG, X, 1, stop, np.random.default_rng(0), return_full=True)
    assert full.shape == (3, 25)
    np.testing.assert_array_equal(full[:, :cut.shape[1]], cut)


def test_predict_sequence_chains_histories(params):
    X = np.random.default_rng(11).standard_normal((3, 4))
    stop = cvae.StoppingConfig(Q=3, delta=0.05, T_max=12)
    seq = cvae.predict_sequence(params, CFG, X, [0, 1, 2, 0, 1], stop, np.random.default_rng(1))
    assert len(seq) == 5 and all(y.shape[1] <= 12 for y in seq)
    single = cvae.predict_sequence(params, CFG, X, [2], stop, np.random.default_rng(1))
    np.testing.assert_array_equal(single[0], cvae.predict(params, CFG, X, 2, stop, np.random.default_rng(1)))
    with pytest.raises(ValueError):
        cvae.predict_sequence(params, CFG, X, [], stop, np.random.default_rng(1))


def test_next_history_borrows_from_previous_history():
    hist = np.arange(8.0).reshape(2, 4)
    pred = np.array([[10.0], [20.0]])
    np.testing.assert_array_equal(cvae.next_history(hist, pred, 4), [[1, 2, 3, 10], [5, 6, 7, 20]])


def test_checkpoint_round_trip_reproduces_predictions(tmp_path, params):
    path = tmp_path / "m.json"
    save_checkpoint(path, CFG.to_dict(), params, {"k": 1.5})
    cfg, loaded, extra = load_checkpoint(path)
    assert cvae.ModelConfig.from_dict(cfg) == CFG and extra == {"k": 1.5}
    X = np.random.default_rng(12).standard_normal((3, 4))
    stop = cvae.StoppingConfig(Q=3, delta=0.01, T_max=15)
    np.testing.assert_array_equal(cvae.predict(params, CFG, X, 0, stop, np.random.default_rng(3)),
                                  cvae.predict(loaded, CFG, X, 0, stop, np.random.default_rng(3)))
    save_checkpoint(tmp_path / "again.json", cfg, loaded, extra)
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()
