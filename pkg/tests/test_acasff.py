import math

import numpy as np
import pytest
import torch

from amsfnet.acasff import (
    CLS,
    FREQUENCY,
    SPATIAL,
    AdaptiveFusion,
    CrossDomainAttention,
    FuseBlock,
    residual_enhance,
    scaled_attention,
)
from conftest import fd_relative_error

D = torch.float64


def softmax_rows(a):
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def loop_attention(q, k, v):
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        logits = [sum(q[i, c] * k[j, c] for c in range(q.shape[1])) / math.sqrt(q.shape[1]) for j in range(k.shape[0])]
        m = max(logits)
        w = [math.exp(x - m) for x in logits]
        w = [x / sum(w) for x in w]
        for j in range(k.shape[0]):
            out[i] += w[j] * v[j]
    return out


def set_identity(cross):
    with torch.no_grad():
        for lin in (cross.q_s, cross.k_f, cross.v_f, cross.q_f, cross.k_s, cross.v_s):
            lin.weight.copy_(torch.eye(lin.weight.shape[0], dtype=lin.weight.dtype))


def zero_fusion(fusion):
    with torch.no_grad():
        fusion.fc2.weight.zero_()
        fusion.fc2.bias.zero_()


def test_single_row_attention_returns_value():
    v = torch.tensor([[0.3, -1.2, 4.0]])
    out = scaled_attention(torch.randn(1, 3), torch.randn(1, 3), v)
    torch.testing.assert_close(out, v)


def test_identical_keys_give_mean_value():
    k = torch.ones(4, 3, dtype=D)
    v = torch.randn(4, 2, dtype=D)
    out = scaled_attention(torch.randn(2, 3, dtype=D), k, v)
    torch.testing.assert_close(out, v.mean(0, keepdim=True).expand(2, 2))


def test_two_by_two_hand_case():
    q = torch.tensor([[1.0, 0.0]], dtype=D)
    eye = torch.eye(2, dtype=D)
    out, w = scaled_attention(q, eye, eye, return_weights=True)
    a = math.exp(1 / math.sqrt(2))
    want = [a / (a + 1), 1 / (a + 1)]
    np.testing.assert_allclose(w.numpy()[0], want, atol=1e-6)
    np.testing.assert_allclose(out.numpy()[0], want, atol=1e-6)


def test_attention_dim_mismatch():
    with pytest.raises(ValueError):
        scaled_attention(torch.zeros(2, 3), torch.zeros(2, 4), torch.zeros(2, 4))
    with pytest.raises(ValueError):
        scaled_attention(torch.zeros(2, 3), torch.zeros(2, 3), torch.zeros(3, 3))


def test_cross_domain_identity_single_token():
    cross = CrossDomainAttention(4).double()
    set_identity(cross)
    s, f = torch.randn(1, 1, 4, dtype=D), torch.randn(1, 1, 4, dtype=D)
    sf, fs = cross(s, f)
    torch.testing.assert_close(sf, f)
    torch.testing.assert_close(fs, s)


def test_cross_domain_zero_values():
    cross = CrossDomainAttention(4, heads=2)
    with torch.no_grad():
        cross.v_f.weight.zero_()
        cross.v_s.weight.zero_()
    sf, fs = cross(torch.randn(2, 3, 4), torch.randn(2, 3, 4))
    assert not sf.any() and not fs.any()


def test_cross_domain_two_token_hand_oracle(rng):
    cross = CrossDomainAttention(3).double()
    mats = {}
    with torch.no_grad():
        for name in ("q_s", "k_f", "v_f", "q_f", "k_s", "v_s"):
            w = np.round(rng.uniform(-0.5, 0.5, (3, 3)), 2)
            mats[name] = w
            getattr(cross, name).weight.copy_(torch.tensor(w))
    s, f = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    sf, fs = cross(torch.tensor(s)[None], torch.tensor(f)[None])
    # nn.Linear computes x @ W^T
    want_sf = loop_attention(s @ mats["q_s"].T, f @ mats["k_f"].T, f @ mats["v_f"].T)
    want_fs = loop_attention(f @ mats["q_f"].T, s @ mats["k_s"].T, s @ mats["v_s"].T)
    np.testing.assert_allclose(sf[0].detach().numpy(), want_sf, atol=1e-6)
    np.testing.assert_allclose(fs[0].detach().numpy(), want_fs, atol=1e-6)


def test_cross_domain_width_mismatch():
    with pytest.raises(ValueError):
        CrossDomainAttention(4)(torch.zeros(1, 2, 4), torch.zeros(1, 2, 5))


def test_residual_enhance_cases(rng):
    s, f = torch.randn(2, 3, 4), torch.randn(2, 3, 4)
    z = torch.zeros(2, 3, 4)
    om_s, om_f = residual_enhance(s, f, z, z)
    assert torch.equal(om_s, s) and torch.equal(om_f, f)
    _, om_f = residual_enhance(s, f, -f, z)
    assert not om_f.any()
    a, b, c, d = (rng.standard_normal((3, 4)) for _ in range(4))
    om_s, om_f = residual_enhance(*(torch.tensor(x) for x in (a, b, c, d)))
    np.testing.assert_allclose(om_s.numpy(), a + d)
    np.testing.assert_allclose(om_f.numpy(), b + c)
    with pytest.raises(ValueError):
        residual_enhance(s, f, z[:, :2], z)


def test_zero_fusion_mlp_averages():
    fusion = AdaptiveFusion(4)
    zero_fusion(fusion)
    of, os_ = torch.randn(2, 3, 4), torch.randn(2, 3, 4)
    out = fusion(of, os_)
    torch.testing.assert_close(fusion.last_weights, torch.full((2, 2), 0.5))
    torch.testing.assert_close(out, (of + os_) / 2)


def test_equal_inputs_are_fixed_points():
    m = torch.randn(2, 3, 4, dtype=D)
    torch.testing.assert_close(AdaptiveFusion(4).double()(m, m), m)


def test_fusion_hand_oracle(rng):
    fusion = AdaptiveFusion(2, hidden=2).double()
    w1 = np.array([[0.3, -0.2, 0.5, 0.1], [-0.4, 0.6, 0.2, -0.3]])
    b1 = np.array([0.1, 0.0])
    w2 = np.array([[0.7, -0.5], [-0.2, 0.9]])
    b2 = np.array([0.0, 0.2])
    with torch.no_grad():
        fusion.fc1.weight.copy_(torch.tensor(w1))
        fusion.fc1.bias.copy_(torch.tensor(b1))
        fusion.fc2.weight.copy_(torch.tensor(w2))
        fusion.fc2.bias.copy_(torch.tensor(b2))
    of, os_ = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    out = fusion(torch.tensor(of)[None], torch.tensor(os_)[None])[0].detach().numpy()
    desc = list(of.mean(0)) + list(os_.mean(0))
    hidden = [max(0.0, sum(w1[i, j] * desc[j] for j in range(4)) + b1[i]) for i in range(2)]
    logits = [sum(w2[i, j] * hidden[j] for j in range(2)) + b2[i] for i in range(2)]
    w = softmax_rows(np.array(logits))
    np.testing.assert_allclose(out, w[0] * of + w[1] * os_, atol=1e-6)


def tagged(n_per_domain):
    return [CLS] + [SPATIAL] * n_per_domain + [FREQUENCY] * n_per_domain


def test_fuse_block_identity_on_equal_tokens():
    block = FuseBlock(4).double()
    set_identity(block.cross)
    tok = torch.randn(1, 1, 4, dtype=D)
    z = torch.cat([torch.randn(1, 1, 4, dtype=D), tok, tok], dim=1)
    out = block(z, tagged(1))
    # Omega_s = Omega_f = 2 * tok, fused = 2 * tok; CLS untouched
    torch.testing.assert_close(out[:, 0], z[:, 0])
    torch.testing.assert_close(out[:, 1], 2 * tok[:, 0])
    torch.testing.assert_close(out[:, 1], out[:, 2])


def test_fuse_block_zero_values_and_fusion():
    block = FuseBlock(6, heads=2).double()
    with torch.no_grad():
        block.cross.v_f.weight.zero_()
        block.cross.v_s.weight.zero_()
    zero_fusion(block.fusion)
    z = torch.randn(2, 7, 6, dtype=D)
    out = block(z, tagged(3))
    mean = (z[:, 1:4] + z[:, 4:7]) / 2
    torch.testing.assert_close(out[:, 1:4], mean)
    torch.testing.assert_close(out[:, 4:7], mean)
    torch.testing.assert_close(out[:, 0], z[:, 0])


@pytest.mark.parametrize("fuse_cls", [False, True])
def test_fuse_block_keeps_shape(fuse_cls):
    block = FuseBlock(8, heads=2, fuse_cls=fuse_cls)
    z = torch.randn(3, 9, 8)
    out = block(z, tagged(4))
    assert out.shape == z.shape
    if not fuse_cls:
        assert torch.equal(out[:, 0], z[:, 0])


def test_fuse_block_requires_both_domains():
    with pytest.raises(ValueError):
        FuseBlock(4)(torch.zeros(1, 3, 4), [CLS, SPATIAL, SPATIAL])


def test_normalization_invariants():
    block = FuseBlock(8, heads=2)
    block(torch.randn(4, 9, 8), tagged(4))
    for w in block.cross.last_weights:
        torch.testing.assert_close(w.sum(-1), torch.ones(w.shape[:-1]))
    omega = block.fusion.last_weights
    assert torch.all(omega >= 0)
    torch.testing.assert_close(omega.sum(-1), torch.ones(4))


def test_fuse_block_gradients_match_finite_differences():
    torch.manual_seed(7)
    block = FuseBlock(8, heads=2, hidden=4).double()
    z = torch.randn(2, 5, 8, dtype=D)
    weights = torch.randn(2, 5, 8, dtype=D)
    err = fd_relative_error(lambda: (block(z, tagged(2)) * weights).sum(), block.parameters())
    assert err < 1e-4
