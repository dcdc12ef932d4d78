import math

import numpy as np
import pytest
import torch

from dada import net
from dada.errors import ConfigError, IndivisibleWindow

TINY = net.NetConfig(window=20, patch_size=5, d_model=8, encoder_layers=3, d_r=16, pool_sizes=(2, 4, 8), k=2)


def test_config_validation():
    with pytest.raises(ConfigError):
        net.NetConfig(k=7)
    with pytest.raises(ConfigError):
        net.NetConfig(d_r=64, pool_sizes=(16, 64))
    with pytest.raises(ConfigError):
        net.NetConfig(encoder_layers=0)
    with pytest.raises(IndivisibleWindow):
        net.NetConfig(window=101)
    full = net.NetConfig.full_scale()
    assert full.pool_sizes == (16, 32, 64, 128, 192, 256) and full.k == 3 and full.n_patches == 20


def test_embed_zero_and_identity():
    m = net.build(net.NetConfig(window=20, patch_size=4, d_model=4, d_r=16, pool_sizes=(2,), k=1))
    with torch.no_grad():
        m.embed.bias.zero_()
        assert torch.all(m.embed_patches(torch.zeros(1, 5, 4)) == 0)
        m.embed.weight.copy_(torch.eye(4))
        x = torch.randn(2, 5, 4)
        assert torch.equal(m.embed_patches(x), x)


def test_embed_hand_matrix():
    m = net.build(net.NetConfig(window=4, patch_size=2, d_model=2, d_r=4, pool_sizes=(2,), k=1, encoder_layers=1))
    with torch.no_grad():
        m.embed.weight.copy_(torch.tensor([[1.0, 2.0], [3.0, 4.0]]))
        m.embed.bias.copy_(torch.tensor([0.5, -1.0]))
        out = m.embed_patches(torch.tensor([[[1.0, -1.0]]]))
    # [1*1 + 2*-1 + 0.5, 3*1 + 4*-1 - 1]
    assert out.flatten().tolist() == [-0.5, -2.0]


@pytest.mark.parametrize("P", [1, 3, 20])
def test_encoder_shape(P):
    cfg = net.NetConfig(window=5 * P, patch_size=5, d_model=8, d_r=16, pool_sizes=(4,), k=1)
    m = net.build(cfg)
    assert m.encode(torch.randn(2, P, 8)).shape == (2, P, 16)


def test_receptive_field_covers_window():
    enc = net.build(net.NetConfig()).encoder
    assert enc.dilations == [1, 2, 4, 8, 16, 20, 20, 20, 20, 20]
    assert enc.receptive_field() >= 20


def test_encoder_deterministic():
    m = net.build(TINY).eval()
    e = torch.randn(3, 4, 8)
    assert torch.equal(m.encode(e), m.encode(e.clone()))


def test_bottleneck_rank_bound():
    m = net.build(TINY)
    z = torch.randn(64, 16)
    for i, width in enumerate(TINY.pool_sizes):
        h = m.pool[i].compress(z)
        assert torch.linalg.matrix_rank(h.detach()) <= width


def test_bottleneck_identity_without_activation():
    b = net.Bottleneck(4, 4, activation=False)
    with torch.no_grad():
        for lin in (b.down, b.up):
            lin.weight.copy_(torch.eye(4))
            lin.bias.zero_()
    z = torch.randn(3, 4)
    assert torch.allclose(b(z), z)


def test_bottleneck_toy_hand():
    b = net.Bottleneck(2, 1, activation=False)
    with torch.no_grad():
        b.down.weight.copy_(torch.tensor([[1.0, -2.0]]))
        b.down.bias.copy_(torch.tensor([0.5]))
        b.up.weight.copy_(torch.tensor([[2.0], [3.0]]))
        b.up.bias.copy_(torch.tensor([1.0, 0.0]))
    out = b(torch.tensor([[1.0, 1.0]]))
    # down: 1 - 2 + 0.5 = -0.5; up: [-1 + 1, -1.5]
    assert out.flatten().tolist() == [0.0, -1.5]


def test_bottleneck_index_error():
    m = net.build(TINY)
    with pytest.raises(IndexError):
        m.bottleneck_apply(3, torch.zeros(1, 16))


def test_route_noise_gating():
    m = net.build(TINY)
    z = torch.rand(5, 16) + 0.1  # positive, so z @ W_noise is very negative below
    assert torch.equal(m.route(z, train_mode=False), z @ m.router.w)
    with torch.no_grad():
        m.router.w_noise.fill_(-1e4)
    assert torch.allclose(m.route(z, train_mode=True), z @ m.router.w)


def test_route_hand_toy():
    r = net.Router(1, 2)
    with torch.no_grad():
        r.w.copy_(torch.tensor([[1.0, -1.0]]))
        r.w_noise.copy_(torch.tensor([[0.0, 2.0]]))
    eps = torch.tensor([[0.5, -1.0]])
    out = r(torch.tensor([[2.0]]), noisy=True, eps=eps)
    expected = [2.0 + 0.5 * math.log(2.0), -2.0 - math.log1p(math.exp(4.0))]
    assert torch.allclose(out, torch.tensor([expected]))


def test_topk_cases():
    w = net.topk_weights(torch.tensor([[2.0, 1.0, 0.0]]), 2)[0]
    e = math.e
    assert torch.allclose(w, torch.tensor([e / (e + 1), 1 / (e + 1), 0.0]))
    assert torch.allclose(net.topk_weights(torch.zeros(1, 4), 4), torch.full((1, 4), 0.25))
    w1 = net.topk_weights(torch.tensor([[0.3, 2.0, -1.0]]), 1)
    assert w1.tolist() == [[0.0, 1.0, 0.0]]


def test_adabn_single_expert_matches_bottleneck():
    cfg = net.NetConfig(window=20, patch_size=5, d_model=8, encoder_layers=2, d_r=16, pool_sizes=(2, 4, 8), k=1)
    m = net.build(cfg).eval()
    z = torch.randn(3, 4, 16)
    w = m.routing_weights(z)
    out = m.adabn(z)
    for n in range(3):
        i = int(w[n].argmax())
        assert torch.allclose(out[n], m.bottleneck_apply(i, z[n : n + 1])[0], atol=1e-6)


def test_decoders_shape_and_disjoint():
    m = net.build(TINY)
    h = torch.randn(2, 4, 16)
    assert m.decode_normal(h).shape == (2, 20)
    assert not torch.allclose(m.decode_normal(h), m.decode_abnormal(h))
    ids_n = {id(p) for p in m.normal_decoder_parameters()}
    assert ids_n.isdisjoint(id(p) for p in m.anomaly_decoder_parameters())


def test_decoder_one_patch_hand():
    dec = net.PatchDecoder(2, 3, normalize_input=False)
    with torch.no_grad():
        dec.head.weight.copy_(torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
        dec.head.bias.copy_(torch.tensor([0.0, 1.0, -1.0]))
    assert dec(torch.tensor([[[2.0, 3.0]]])).tolist() == [[2.0, 4.0, 4.0]]


def test_grl_forward_and_zero_lambda():
    h = torch.randn(4, requires_grad=True)
    assert torch.equal(net.grl(h, 0.7), h)
    net.grl(h, 0.0).sum().backward()
    assert torch.all(h.grad == 0)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_grl_scalar_finite_difference(lam):
    # L(theta) = (w * tanh(theta * x) - y)^2; GRL between theta and w
    x, y, w = 0.7, 0.3, 1.9
    theta = torch.tensor(0.4, dtype=torch.float64, requires_grad=True)
    loss = (w * net.grl(torch.tanh(theta * x), lam) - y) ** 2
    loss.backward()
    f = lambda t: (w * math.tanh(t * x) - y) ** 2
    eps = 1e-6
    fd = (f(0.4 + eps) - f(0.4 - eps)) / (2 * eps)
    assert abs(theta.grad.item() - (-lam * fd)) <= 1e-4 * abs(lam * fd)


def test_full_forward_batch_permutation():
    m = net.build(TINY).eval()
    x = torch.randn(6, 20)
    masks = torch.as_tensor(np.random.default_rng(0).integers(0, 2, (6, 4)), dtype=torch.float32)
    perm = torch.randperm(6)
    out = m.reconstruct(x, masks)
    assert torch.allclose(m.reconstruct(x[perm], masks[perm]), out[perm], atol=1e-6)


def test_no_adabn_and_single_decoder_structure():
    m = net.build(net.NetConfig(use_adabn=False, dual_decoders=False))
    keys = m.state_dict().keys()
    assert not any(k.startswith("router") for k in keys)
    assert not any(k.startswith("dec_a") for k in keys)
    assert m.pool[0].down.out_features == max(net.NetConfig().pool_sizes)


def test_checkpoint_round_trip(tmp_path):
    m = net.build(TINY, seed=3)
    net.save_checkpoint(tmp_path / "c.pt", m, {"note": 1})
    m2, payload = net.load_checkpoint(tmp_path / "c.pt")
    assert payload["format_version"] == net.CHECKPOINT_VERSION and payload["note"] == 1
    keys = set(payload["state"])
    assert {"embed.weight", "encoder.L0.mix.weight", "encoder.L2.mix.weight", "pool.1.down.weight",
            "pool.1.up.weight", "router.w", "router.w_noise", "dec_n.head.weight", "dec_a.head.weight"} <= keys
    x = torch.randn(2, 20)
    masks = torch.ones(2, 4)
    masks[:, :2] = 0
    assert torch.equal(m.eval().reconstruct(x, masks), m2.reconstruct(x, masks))
