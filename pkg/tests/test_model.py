import numpy as np
import pytest

from lsgvae import autodiff as ad
from lsgvae.data import SeriesWindow, make_rng, patch
from lsgvae.errors import DimensionError
from lsgvae.model import (ModelConfig, decode, decode_normalized, encode, evolve, forward,
                          init_params, param_count, param_shapes, patch_batch, sample_paths)
from lsgvae import revin
from lsgvae.training import batch_loss


def lookback(cfg, seed=0, B=None):
    shape = (cfg.L, cfg.C) if B is None else (B, cfg.L, cfg.C)
    return np.random.default_rng(seed).normal(size=shape)


def test_config_derived_sizes():
    cfg = ModelConfig(L=96, H=96, C=1)
    assert (cfg.P, cfg.D, cfg.enc_layers, cfg.hidden_width) == (24, 256, 3, 256)
    assert (cfg.N, cfg.M, cfg.pad) == (4, 4, 0)
    odd = ModelConfig(L=36, H=30, C=1)
    assert (odd.N, odd.M, odd.pad) == (2, 2, 12)
    assert ModelConfig.from_dict(odd.to_dict()) == odd


def test_param_count_matches_closed_form():
    cfg = ModelConfig(L=96, H=96, C=1)
    W, E, P, D, k, N, M = 256, 16, 24, 256, 3, 4, 4
    encoder = P * W + W + (k - 1) * (W * W + W) + 2 * (W * D + D)
    dynamics = (N * D) * (M * D) + M * D
    decoder = cfg.C * E + (D + E) * W + W + (k - 1) * (W * W + W) + W * 2 * P + 2 * P
    assert param_count(cfg) == encoder + dynamics + decoder == 1_532_992
    assert init_params(cfg).count() == param_count(cfg)
    assert param_shapes(cfg)["proj.W"] == (1024, 1024)


def test_init_is_seeded(small_config):
    a, b = init_params(small_config, 5), init_params(small_config, 5)
    c = init_params(small_config, 6)
    for name in a:
        np.testing.assert_array_equal(a[name].data, b[name].data)
    assert not np.array_equal(a["enc.0.W"].data, c["enc.0.W"].data)


def test_initial_scale_near_one():
    cfg = ModelConfig(L=96, H=96, C=3)
    params = init_params(cfg, 0)
    x = np.random.default_rng(1).normal(size=(64, cfg.L, cfg.C))
    res = forward(x, params)
    sig = np.concatenate([res.recon.sigma.data.ravel(), res.pred.sigma.data.ravel()])
    assert np.mean((sig >= 0.5) & (sig <= 2.0)) >= 0.99


def test_encode_noise_free_identity(small_config, small_params):
    x = lookback(small_config, B=3)
    st_ = revin.fit(x)
    pb = patch_batch(revin.normalize(x, st_), small_config.P)
    lat = encode(pb, small_params)
    np.testing.assert_array_equal(lat.z_past.data, lat.mu_z.data)
    assert np.all(lat.sigma_z.data > 0)
    noise = np.random.default_rng(0).normal(size=lat.mu_z.shape)
    lat2 = encode(pb, small_params, noise)
    np.testing.assert_array_equal(lat2.z_past.data, lat.mu_z.data + lat.sigma_z.data * noise)


def test_encode_accepts_patch_grid(small_config, small_params):
    x = lookback(small_config)
    grid = patch(x, small_config.P)
    direct = encode(patch_batch(x[None], small_config.P), small_params)
    # different memory layouts may change BLAS summation order
    np.testing.assert_allclose(encode(grid, small_params).mu_z.data, direct.mu_z.data,
                               rtol=0, atol=1e-12)
    with pytest.raises(DimensionError):
        encode(np.zeros((1, 2, 3, 4)), small_params)


def test_identical_channels_share_latents(small_config, small_params):
    col = np.random.default_rng(2).normal(size=(small_config.L, 1))
    x = np.repeat(col, 2, axis=1)[None]
    lat = encode(patch_batch(x, small_config.P), small_params)
    np.testing.assert_array_equal(lat.channel_mu_z.data[:, 0], lat.channel_mu_z.data[:, 1])
    np.testing.assert_array_equal(lat.channel_sigma_z.data[:, 0],
                                  lat.channel_sigma_z.data[:, 1])


def test_evolve_is_affine(small_config, small_params):
    cfg = small_config
    zero_bias = small_params.replace({"proj.b": np.zeros(cfg.M * cfg.D)})
    z0 = np.zeros((1, cfg.N, cfg.D))
    assert np.all(evolve(z0, zero_bias).data == 0)
    r = np.random.default_rng(4)
    a, b = r.normal(size=(1, cfg.N, cfg.D)), r.normal(size=(1, cfg.N, cfg.D))
    bias = small_params["proj.b"].data.reshape(cfg.M, cfg.D)
    lhs = evolve(a + b, small_params).data
    rhs = evolve(a, small_params).data + evolve(b, small_params).data - bias
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_decode_shared_weights_and_positive_scale(small_config, small_params):
    cfg = small_config
    z = np.random.default_rng(5).normal(size=(2, cfg.N, cfg.D)) * 5
    loc, sig = decode_normalized(z, small_params)
    assert loc.shape == (2, cfg.N * cfg.P, cfg.C)
    assert np.all(sig.data > 0)
    # the "past" and "future" decodes of the same latent agree exactly
    st_ = revin.fit(lookback(cfg, B=2))
    past = decode(z, small_params, st_, span=None)
    fut = decode(z, small_params, st_, span=None)
    np.testing.assert_array_equal(past.mu.data, fut.mu.data)


def test_reconstruction_drops_padding():
    cfg = ModelConfig(L=36, H=30, C=1, P=24, D=8, hidden_width=16)
    res = forward(lookback(cfg), init_params(cfg))
    assert res.recon.mu.shape == (1, 36, 1)
    assert res.pred.mu.shape == (1, 30, 1)


def test_forward_modes(small_config, small_params):
    x = lookback(small_config, B=4)
    a, b = forward(x, small_params), forward(x, small_params)
    np.testing.assert_array_equal(a.pred.mu.data, b.pred.mu.data)
    t1 = forward(x, small_params, "train", make_rng(3, "noise"))
    t2 = forward(x, small_params, "train", make_rng(3, "noise"))
    np.testing.assert_array_equal(t1.pred.sigma.data, t2.pred.sigma.data)
    assert not np.array_equal(t1.pred.mu.data, a.pred.mu.data)
    cfg = small_config
    assert a.recon.mu.shape == a.recon.sigma.shape == (4, cfg.L, cfg.C)
    assert a.pred.mu.shape == a.pred.sigma.shape == (4, cfg.H, cfg.C)
    with pytest.raises(DimensionError):
        forward(np.zeros((cfg.L + 1, cfg.C)), small_params)


def test_horizon_is_never_read(small_config, small_params):
    cfg = small_config
    x = lookback(cfg)
    y = np.random.default_rng(9).normal(size=(cfg.H, cfg.C))
    w1, w2 = SeriesWindow(x, y, 0), SeriesWindow(x, y * 100 + 7, 0)
    r1 = forward(w1, small_params, noise=np.ones((1, cfg.N, cfg.D)))
    r2 = forward(w2, small_params, noise=np.ones((1, cfg.N, cfg.D)))
    for a, b in ((r1.pred.mu, r2.pred.mu), (r1.pred.sigma, r2.pred.sigma),
                 (r1.recon.mu, r2.recon.mu)):
        np.testing.assert_array_equal(a.data, b.data)


def test_decoder_mutation_moves_both_spans(small_config, small_params):
    x = lookback(small_config)
    before = forward(x, small_params)
    W = small_params["dec.out.W"].data
    after = forward(x, small_params.replace({"dec.out.W": W * 1.5}))
    assert not np.array_equal(before.recon.mu.data, after.recon.mu.data)
    assert not np.array_equal(before.pred.mu.data, after.pred.mu.data)


def test_scale_floor(small_config, small_params):
    cfg = small_config
    b = small_params["dec.out.b"].data.copy()
    b[cfg.P:] = -1e3                       # softplus underflows to zero
    crushed = small_params.replace({"dec.out.b": b})
    x = lookback(cfg, B=3) * np.array([1e-3, 50.0])
    res = forward(x, crushed, "train", make_rng(0, "noise"))
    floor = cfg.xi * res.stats.std.min()
    assert res.pred.sigma.data.min() >= floor > 0
    assert res.recon.sigma.data.min() >= floor
    # with a vanishing scale, observation noise no longer spreads the paths
    paths = sample_paths(x[0], crushed, 20, make_rng(1), latent_noise=False)
    mu = forward(x[0], crushed).pred.mu.data[0]
    np.testing.assert_allclose(paths, np.broadcast_to(mu, paths.shape), atol=1e-3)


def test_single_noise_free_path_is_the_mean(small_config, small_params):
    x = lookback(small_config)
    path = sample_paths(x, small_params, 1, make_rng(0), with_obs_noise=False,
                        latent_noise=False)
    np.testing.assert_array_equal(path[0], forward(x, small_params).pred.mu.data[0])


def test_sample_paths_total_variance(small_config, small_params):
    x = lookback(small_config, seed=8)
    S = 10_000
    eps = make_rng(1).standard_normal((S, small_config.N, small_config.D))
    res = forward(np.broadcast_to(x, (S,) + x.shape), small_params, noise=eps)
    mu, sig = res.pred.numpy()
    expected = np.sqrt((sig**2).mean(axis=0) + mu.var(axis=0))
    paths = sample_paths(x, small_params, S, make_rng(2))
    np.testing.assert_allclose(paths.std(axis=0), expected, rtol=0.05)


def test_every_parameter_receives_gradient(small_config, small_params):
    cfg = small_config
    r = np.random.default_rng(0)
    lb, hz = r.normal(size=(8, cfg.L, cfg.C)), r.normal(size=(8, cfg.H, cfg.C))
    total, _ = batch_loss(small_params, lb, hz, beta=1.0, rng=make_rng(0, "noise"))
    grads = ad.grad(total, small_params.tensors)
    for name, g in grads.items():
        assert np.any(g != 0), name
