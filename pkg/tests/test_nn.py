import numpy as np
import pytest
from scipy import integrate, stats

from quadtune import nn
from quadtune.errors import CheckpointVersionError, InvalidInputError


def numeric_gradients(fn, arrays, h=1e-5):
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            fp = fn()
            arr[idx] = orig - h
            fm = fn()
            arr[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def random_gradient_case(case):
    rng = np.random.default_rng(case)
    sizes = tuple(int(rng.integers(1, 10)) for _ in range(4))
    params = nn.initialize(sizes, seed=case)
    for b in params.biases:
        b[:] = 0.3 * rng.standard_normal(b.shape)
    x = rng.standard_normal((3, sizes[0]))
    g = rng.standard_normal((3, sizes[-1]))
    return params, x, g


def test_forward_matches_explicit_layers():
    rng = np.random.default_rng(0)
    p = nn.initialize((5, 7, 3), seed=1)
    x = rng.standard_normal(5)
    expected = p.weights[1] @ np.tanh(p.weights[0] @ x + p.biases[0]) + p.biases[1]
    np.testing.assert_allclose(nn.forward(p, x), expected, rtol=0, atol=1e-15)


def test_batch_forward_equals_rowwise():
    p = nn.init_policy(3).actor
    xs = np.random.default_rng(1).standard_normal((6, 17))
    batch = nn.forward(p, xs)
    for i, x in enumerate(xs):
        np.testing.assert_allclose(batch[i], nn.forward(p, x), rtol=0, atol=1e-14)


def test_zero_weights_output_equals_bias():
    p = nn.initialize((17, 64, 64, 4), seed=0)
    for w in p.weights:
        w[:] = 0.0
    p.biases[-1][:] = [0.1, -0.2, 0.3, 0.0]
    np.testing.assert_array_equal(nn.forward(p, np.ones(17)), p.biases[-1])


def test_wrong_input_width_rejected():
    p = nn.init_policy(0).actor
    with pytest.raises(InvalidInputError):
        nn.forward(p, np.zeros(16))


def test_policy_shapes_and_init():
    pol = nn.init_policy(0)
    assert pol.actor.layer_sizes == (17, 64, 64, 4)
    assert pol.critic.layer_sizes == (17, 64, 64, 1)
    np.testing.assert_array_equal(pol.log_std, np.full(4, -0.5))
    w0 = pol.actor.weights[0]  # (64, 17): orthogonal columns scaled by sqrt(2)
    np.testing.assert_allclose(w0.T @ w0, 2.0 * np.eye(17), atol=1e-12)
    w_out = pol.actor.weights[-1]  # (4, 64): orthogonal rows scaled by 0.01
    np.testing.assert_allclose(w_out @ w_out.T, 1e-4 * np.eye(4), atol=1e-16)
    assert all(np.all(b == 0) for b in pol.actor.biases)


def test_init_is_seeded():
    a, b = nn.init_policy(5), nn.init_policy(5)
    for x, y in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a.actor.weights[0], nn.init_policy(6).actor.weights[0])


@pytest.mark.parametrize("case", range(10))
def test_backward_matches_finite_differences(case):
    params, x, g = random_gradient_case(case)
    grads, _ = nn.backward(params, x, g)
    num = numeric_gradients(lambda: float(np.sum(nn.forward(params, x) * g)), params.arrays())
    assert max_relative_error(grads.arrays(), num) < 1e-5


def test_input_gradient_matches_finite_differences():
    params, x, g = random_gradient_case(99)
    _, gx = nn.backward(params, x, g)
    num = numeric_gradients(lambda: float(np.sum(nn.forward(params, x) * g)), [x])[0]
    assert max_relative_error([gx], [num]) < 1e-5


def test_single_input_backward_equals_batch_of_one():
    params, x, g = random_gradient_case(4)
    single, _ = nn.backward(params, x[0], g[0])
    batch, _ = nn.backward(params, x[:1], g[:1])
    for a, b in zip(single.arrays(), batch.arrays()):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)


def test_log_squash_jacobian_stable_and_exact():
    u = np.array([-3.0, -0.5, 0.0, 0.7, 2.0])
    np.testing.assert_allclose(nn.log_squash_jacobian(u), np.log(1 - np.tanh(u) ** 2), rtol=1e-12)
    big = nn.log_squash_jacobian(np.array([50.0, -50.0]))
    assert np.all(np.isfinite(big))
    np.testing.assert_allclose(big, 2 * (np.log(2) - 50.0), rtol=1e-12)


def test_gaussian_log_prob_matches_scipy():
    rng = np.random.default_rng(2)
    u, mean, log_std = rng.standard_normal(4), rng.standard_normal(4), 0.3 * rng.standard_normal(4)
    expected = np.sum(stats.norm.logpdf(u, mean, np.exp(log_std)))
    assert nn.gaussian_log_prob(u, mean, log_std) == pytest.approx(expected, rel=1e-12)


def test_squashed_density_integrates_to_one():
    # change of variables a = tanh(u): the 1-D squashed density over (-1, 1) has unit mass
    mean, log_std = np.array([0.4]), np.array([-0.2])

    def density(a):
        u = np.arctanh(a)
        return np.exp(nn.squashed_log_prob(np.array([u]), mean, log_std))

    mass, _ = integrate.quad(density, -1 + 1e-12, 1 - 1e-12, limit=200)
    assert mass == pytest.approx(1.0, abs=1e-7)


def test_sampled_actions_in_range_and_logp_consistent():
    pol = nn.init_policy(0)
    rng = np.random.default_rng(3)
    obs = rng.standard_normal((200, 17))
    u, logp, mean = nn.sample_pre_squash(pol, obs, rng)
    a = np.tanh(u)
    assert np.all(np.abs(a) <= 1)
    np.testing.assert_allclose(logp, nn.squashed_log_prob(u, mean, pol.log_std), rtol=1e-14)


def test_sample_std_matches_log_std():
    pol = nn.init_policy(0)
    rng = np.random.default_rng(4)
    obs = np.zeros((20000, 17))
    u, _, mean = nn.sample_pre_squash(pol, obs, rng)
    np.testing.assert_allclose(np.std(u - mean, axis=0), np.exp(-0.5), rtol=0.03)


def test_deterministic_action_is_tanh_mean():
    pol = nn.init_policy(7)
    obs = np.random.default_rng(5).standard_normal(17)
    np.testing.assert_array_equal(nn.deterministic_action(pol, obs), np.tanh(nn.forward(pol.actor, obs)))


def test_clamp_log_std():
    pol = nn.init_policy(0)
    pol.log_std[:] = [-30.0, 5.0, 0.0, 1.0]
    pol.clamp_log_std()
    np.testing.assert_array_equal(pol.log_std, [-20.0, 2.0, 0.0, 1.0])


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    pol = nn.init_policy(11)
    pol.log_std[:] = [0.1, -0.2, 0.3, -0.4]
    path = nn.save_checkpoint(tmp_path / "p.npz", pol, {"preset": "baseline"}, {"step": np.arange(3)})
    loaded, meta, extra = nn.load_checkpoint(path, with_extra=True)
    assert meta == {"preset": "baseline"}
    np.testing.assert_array_equal(extra["step"], np.arange(3))
    for a, b in zip(pol.arrays(), loaded.arrays()):
        assert a.tobytes() == b.tobytes()


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        nn.load_checkpoint(tmp_path / "nope.npz")


def test_checkpoint_version_mismatch(tmp_path):
    path = nn.save_checkpoint(tmp_path / "p.npz", nn.init_policy(0))
    with np.load(path) as data:
        arrays = dict(data)
    arrays["format_version"] = np.array(99)
    np.savez(tmp_path / "old.npz", **arrays)
    with pytest.raises(CheckpointVersionError):
        nn.load_checkpoint(tmp_path / "old.npz")
