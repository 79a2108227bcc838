import numpy as np
import pytest
import torch

from oracles import central_difference, rel_err, two_pass_stats
from padkit.mixstyle import (
    FeatureStats,
    MixStyle,
    MixStyleConfig,
    channel_stats,
    insertion_points,
    mix_statistics,
    mixstyle_forward,
    pair_indices,
)

EPS = 1e-6


def rand_map(rng, b=None, c=None, hw=None):
    b = b or int(rng.integers(1, 9))
    c = c or int(rng.integers(1, 17))
    hw = hw or int(rng.integers(2, 15))
    scale = rng.uniform(0.5, 3.0)
    shift = rng.uniform(-2, 2)
    return torch.from_numpy(rng.normal(shift, scale, size=(b, c, hw, hw)))


def test_stats_constant_map():
    s = channel_stats(torch.full((1, 1, 4, 4), 3.0, dtype=torch.float64), EPS)
    assert s.mu.item() == pytest.approx(3.0, abs=1e-12)
    assert s.sigma.item() == pytest.approx(np.sqrt(EPS), rel=1e-9)


def test_stats_two_values():
    x = torch.tensor([[0.0, 2.0], [2.0, 0.0]], dtype=torch.float64).reshape(1, 1, 2, 2)
    s = channel_stats(x, EPS)
    assert s.mu.item() == pytest.approx(1.0, abs=1e-12)
    assert s.sigma.item() == pytest.approx(np.sqrt(1 + EPS), rel=1e-12)


def test_stats_two_pass_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rand_map(rng)
        s = channel_stats(x, EPS)
        mu, sigma = two_pass_stats(x.numpy(), EPS)
        assert np.max(np.abs(s.mu.numpy() - mu)) < 1e-6
        assert np.max(np.abs(s.sigma.numpy() - sigma)) < 1e-6


def test_stats_rejects_bad_rank():
    with pytest.raises(ValueError):
        channel_stats(torch.zeros(2, 3, 4))


def test_mix_statistics_hand_value():
    s = FeatureStats(torch.tensor([[0.0]]), torch.tensor([[2.0]]))
    a = FeatureStats(torch.tensor([[8.0]]), torch.tensor([[4.0]]))
    gamma, beta = mix_statistics(s, a, 0.25)
    assert gamma.item() == pytest.approx(3.5)
    assert beta.item() == pytest.approx(6.0)


def test_mix_statistics_endpoints():
    rng = np.random.default_rng(1)
    s = channel_stats(rand_map(rng, 3, 4, 5))
    a = channel_stats(rand_map(rng, 3, 4, 5))
    g1, b1 = mix_statistics(s, a, 1.0)
    assert torch.equal(g1, s.sigma) and torch.equal(b1, s.mu)
    g0, b0 = mix_statistics(s, a, 0.0)
    assert torch.equal(g0, a.sigma) and torch.equal(b0, a.mu)


def test_mix_statistics_shape_mismatch():
    s = FeatureStats(torch.zeros(2, 3), torch.ones(2, 3))
    a = FeatureStats(torch.zeros(2, 4), torch.ones(2, 4))
    with pytest.raises(ValueError):
        mix_statistics(s, a, 0.5)


def _forward(x_s, x_a, lam, seed=0):
    cfg = MixStyleConfig(apply_probability=1.0, epsilon=EPS)
    rng = np.random.default_rng(seed)
    return mixstyle_forward(x_s, x_a, cfg, rng, lam=lam, force=True)


def _pairing(seed, n_s, n_a):
    # with lam and force given, the pairing is the generator's first draw
    return pair_indices(n_s, n_a, np.random.default_rng(seed))


def test_lambda_one_is_identity():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x_s = rand_map(rng)
        x_a = rand_map(rng, int(rng.integers(1, 9)), x_s.shape[1], x_s.shape[2])
        out = _forward(x_s, x_a, 1.0)
        assert torch.max(torch.abs(out - x_s)).item() < 1e-5


def test_lambda_zero_takes_target_stats():
    rng = np.random.default_rng(3)
    x_s = rand_map(rng, 5, 6, 7)
    x_a = rand_map(rng, 3, 6, 7)
    out = _forward(x_s, x_a, 0.0, seed=9)
    idx = _pairing(9, 5, 3)
    mu_a, sig_a = two_pass_stats(x_a.numpy(), EPS)
    mu_o, sig_o = two_pass_stats(out.numpy(), 0.0)
    assert np.max(np.abs(mu_o - mu_a[idx])) < 1e-4
    # the output carries sigma_a exactly; its variance then reads back without epsilon
    assert np.max(np.abs(sig_o - sig_a[idx])) < 1e-4


def test_general_lambda_output_stats():
    rng = np.random.default_rng(4)
    for _ in range(30):
        c, hw = int(rng.integers(1, 17)), int(rng.integers(2, 15))
        x_s = rand_map(rng, int(rng.integers(1, 9)), c, hw)
        x_a = rand_map(rng, int(rng.integers(1, 9)), c, hw)
        lam = rng.uniform(0, 1, x_s.shape[0])
        seed = int(rng.integers(1 << 30))
        out = _forward(x_s, x_a, lam, seed)
        idx = _pairing(seed, x_s.shape[0], x_a.shape[0])
        mu_s, sig_s = two_pass_stats(x_s.numpy(), EPS)
        mu_a, sig_a = two_pass_stats(x_a.numpy(), EPS)
        beta = lam[:, None] * mu_s + (1 - lam[:, None]) * mu_a[idx]
        gamma = lam[:, None] * sig_s + (1 - lam[:, None]) * sig_a[idx]
        mu_o, sig_o = two_pass_stats(out.numpy(), 0.0)
        assert np.max(np.abs(mu_o - beta)) < 1e-4
        assert np.max(np.abs(sig_o - gamma)) < 1e-4


def test_inference_is_bitwise_identity():
    rng = np.random.default_rng(5)
    x = rand_map(rng, 4, 3, 6).float()
    cfg = MixStyleConfig(apply_probability=1.0)
    out = mixstyle_forward(x, x.flip(0), cfg, np.random.default_rng(0), training=False)
    assert torch.equal(out, x)
    layer = MixStyle(cfg).eval()
    assert torch.equal(layer(x), x)


def test_apply_probability_zero_skips():
    x = torch.randn(4, 3, 5, 5)
    cfg = MixStyleConfig(apply_probability=0.0)
    assert torch.equal(mixstyle_forward(x, x.flip(0), cfg, np.random.default_rng(0)), x)


def test_apply_probability_rate():
    x = torch.randn(2, 2, 3, 3)
    cfg = MixStyleConfig(apply_probability=0.5)
    rng = np.random.default_rng(0)
    applied = sum(not torch.equal(mixstyle_forward(x, x.flip(0), cfg, rng), x) for _ in range(2000))
    assert 0.45 < applied / 2000 < 0.55


def test_empty_target_error():
    with pytest.raises(ValueError):
        _forward(torch.randn(2, 3, 4, 4), torch.randn(0, 3, 4, 4), 0.5)


def test_pairing_reuses_targets():
    idx = pair_indices(7, 3, np.random.default_rng(0))
    assert len(idx) == 7
    assert sorted(idx[:3]) == [0, 1, 2] and sorted(idx[3:6]) == [0, 1, 2]


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    for _ in range(20):
        c, hw = int(rng.integers(1, 4)), int(rng.integers(2, 4))
        x_s = rand_map(rng, int(rng.integers(1, 3)), c, hw)
        x_a = rand_map(rng, 2, c, hw)
        lam = rng.uniform(0, 1, x_s.shape[0])
        w = torch.from_numpy(rng.normal(size=x_s.shape))

        def f(arr):
            return float((_forward(torch.from_numpy(arr), x_a, lam) * w).sum())

        xs = x_s.clone().requires_grad_(True)
        (_forward(xs, x_a, lam) * w).sum().backward()
        fd = central_difference(f, x_s.numpy())
        assert rel_err(xs.grad.numpy(), fd, floor=1e-3) < 1e-4


def test_no_gradient_to_target():
    x_s = torch.randn(3, 2, 4, 4, dtype=torch.float64, requires_grad=True)
    x_a = torch.randn(3, 2, 4, 4, dtype=torch.float64, requires_grad=True)
    _forward(x_s, x_a, 0.3).pow(2).sum().backward()
    assert x_a.grad is None
    assert x_s.grad is not None and torch.any(x_s.grad != 0)


def test_insertion_points():
    assert insertion_points("resnet18_binary") == ["layer1", "layer2"]
    assert insertion_points("pixbis") == ["denseblock1"]
    with pytest.raises(ValueError):
        insertion_points("vgg16")


def test_layer_da_mode_leaves_target_rows():
    layer = MixStyle(MixStyleConfig(apply_probability=1.0), seed=0).train()
    x = torch.randn(6, 3, 5, 5)
    mask = torch.tensor([True, True, True, False, False, False])
    layer.set_domains(mask, "da")
    out = layer(x)
    assert torch.equal(out[~mask], x[~mask])
    assert not torch.equal(out[mask], x[mask])


def test_layer_combined_mode_restyles_both():
    layer = MixStyle(MixStyleConfig(apply_probability=1.0), seed=0).train()
    x = torch.randn(6, 3, 5, 5)
    mask = torch.tensor([True, False, True, False, True, False])
    layer.set_domains(mask, "combined")
    out = layer(x)
    assert not torch.equal(out[~mask], x[~mask])


def test_config_validation():
    with pytest.raises(ValueError):
        MixStyleConfig(alpha=0)
    with pytest.raises(ValueError):
        MixStyleConfig(apply_probability=1.5)
