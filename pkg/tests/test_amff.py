import math

import numpy as np
import pytest
import torch

from amsfnet import wavelet as wv
from amsfnet.amff import (
    AMFF,
    GateMLP,
    directional_descriptors,
    directional_gate,
    fuse_directions,
    fuse_scales,
    scale_gate,
    wavelet_inputs,
)
from conftest import fd_relative_error

D = torch.float64


def hand_mlp(d, w1, b1, w2, b2):
    """Scalar-arithmetic forward of Linear-ReLU-Linear-softmax."""
    hidden = [max(0.0, sum(w * x for w, x in zip(row, d)) + b) for row, b in zip(w1, b1)]
    logits = [sum(w * h for w, h in zip(row, hidden)) + b for row, b in zip(w2, b2)]
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    return [v / sum(e) for v in e]


def set_mlp(mlp, w1, b1, w2, b2):
    with torch.no_grad():
        mlp.fc1.weight.copy_(torch.tensor(w1, dtype=D))
        mlp.fc1.bias.copy_(torch.tensor(b1, dtype=D))
        mlp.fc2.weight.copy_(torch.tensor(w2, dtype=D))
        mlp.fc2.bias.copy_(torch.tensor(b2, dtype=D))


def zero_last(mlp):
    with torch.no_grad():
        mlp.fc2.weight.zero_()
        mlp.fc2.bias.zero_()


def test_descriptor_of_constant():
    assert directional_descriptors(torch.full((3, 4, 4), 5.0)).tolist() == [5.0, 5.0, 5.0]


def test_descriptor_arithmetic_mean():
    h = torch.tensor([[[1.0, 3.0], [5.0, 7.0]]] * 3)
    assert directional_descriptors(h).tolist() == [4.0, 4.0, 4.0]


def test_descriptor_random_matches_sum_over_count(rng):
    h = rng.standard_normal((3, 9, 7))
    got = directional_descriptors(torch.tensor(h)).numpy()
    for c in range(3):
        total = 0.0
        for v in h[c].ravel():
            total += v
        assert got[c] == pytest.approx(total / h[c].size, abs=1e-9)


def test_descriptor_rejects_empty():
    with pytest.raises(ValueError):
        directional_descriptors(torch.zeros((3, 0, 4)))


def test_zero_final_layer_gives_uniform_gate():
    mlp = GateMLP(3, 3).double()
    zero_last(mlp)
    g = directional_gate(torch.tensor([0.3, -2.0, 9.0], dtype=D), mlp)
    np.testing.assert_allclose(g.detach().numpy(), [1 / 3] * 3, atol=1e-15)


def test_gate_is_a_distribution():
    mlp = GateMLP(3, 3)
    g = directional_gate(torch.randn(50, 3) * 10, mlp)
    assert torch.all(g > 0) and torch.all(g < 1)
    torch.testing.assert_close(g.sum(-1), torch.ones(50))


def test_gate_matches_hand_forward_uniform_weights():
    w1, b1 = [[0.1] * 3] * 2, [0.0] * 2
    w2, b2 = [[0.1] * 2] * 3, [0.0] * 3
    mlp = GateMLP(3, 3, hidden=2).double()
    set_mlp(mlp, w1, b1, w2, b2)
    got = directional_gate(torch.tensor([1.0, 2.0, 3.0], dtype=D), mlp)
    np.testing.assert_allclose(got.detach().numpy(), hand_mlp([1, 2, 3], w1, b1, w2, b2), atol=1e-6)


def test_gate_matches_hand_forward_asymmetric():
    w1, b1 = [[0.2, -0.1, 0.3], [-0.4, 0.5, 0.1]], [0.05, -0.2]
    w2, b2 = [[1.0, -0.5], [0.3, 0.8], [-0.7, 0.2]], [0.1, 0.0, -0.1]
    mlp = GateMLP(3, 3, hidden=2).double()
    set_mlp(mlp, w1, b1, w2, b2)
    got = directional_gate(torch.tensor([1.0, 2.0, 3.0], dtype=D), mlp)
    np.testing.assert_allclose(got.detach().numpy(), hand_mlp([1, 2, 3], w1, b1, w2, b2), atol=1e-6)


def test_gate_shape_mismatch():
    with pytest.raises(ValueError):
        directional_gate(torch.zeros(4), GateMLP(3, 3))


def test_one_hot_direction_gate():
    maps = [torch.randn(5, 5) for _ in range(3)]
    out = fuse_directions(*maps, torch.tensor([1.0, 0.0, 0.0]))
    torch.testing.assert_close(out, maps[0])


def test_identical_maps_are_fixed_points():
    m = torch.randn(6, 6, dtype=D)
    out = fuse_directions(m, m, m, torch.tensor([0.2, 0.5, 0.3], dtype=D))
    torch.testing.assert_close(out, m)


def test_direction_fusion_loop_oracle(rng):
    maps = rng.standard_normal((3, 4, 5))
    gate = (0.2, 0.3, 0.5)
    out = fuse_directions(*torch.tensor(maps), torch.tensor(gate, dtype=D)).numpy()
    for i in range(4):
        for j in range(5):
            want = gate[0] * maps[0, i, j] + gate[1] * maps[1, i, j] + gate[2] * maps[2, i, j]
            assert out[i, j] == pytest.approx(want, abs=1e-12)


def test_direction_fusion_shape_mismatch():
    with pytest.raises(ValueError):
        fuse_directions(torch.zeros(2, 2), torch.zeros(2, 2), torch.zeros(2, 3), torch.ones(3) / 3)


def test_scale_gate_uniform_and_singleton():
    mlp = GateMLP(4, 4).double()
    zero_last(mlp)
    np.testing.assert_allclose(scale_gate(torch.randn(4, dtype=D), mlp).detach().numpy(), [0.25] * 4)
    single = GateMLP(1, 1)
    assert scale_gate(torch.tensor([3.7]), single).item() == 1.0


def test_scale_gate_hand_oracle():
    w1, b1 = [[0.5, -0.2, 0.1], [0.3, 0.3, -0.6]], [0.0, 0.1]
    w2, b2 = [[0.4, -1.0], [0.2, 0.5], [-0.3, 0.9]], [0.0, 0.05, -0.05]
    mlp = GateMLP(3, 3, hidden=2).double()
    set_mlp(mlp, w1, b1, w2, b2)
    got = scale_gate(torch.tensor([1.0, 0.0, -1.0], dtype=D), mlp)
    np.testing.assert_allclose(got.detach().numpy(), hand_mlp([1, 0, -1], w1, b1, w2, b2), atol=1e-6)


def test_fuse_scales_cases(rng):
    maps = [torch.tensor(rng.standard_normal((4, 4))) for _ in range(3)]
    torch.testing.assert_close(fuse_scales(maps, torch.tensor([0.0, 1.0, 0.0], dtype=D)), maps[1])
    zeros = [torch.zeros(4, 4, dtype=D)] * 3
    assert not fuse_scales(zeros, torch.tensor([0.2, 0.3, 0.5], dtype=D)).any()
    eta = (0.1, 0.6, 0.3)
    out = fuse_scales(maps, torch.tensor(eta, dtype=D)).numpy()
    for i in range(4):
        for j in range(4):
            want = sum(eta[l] * maps[l][i, j].item() for l in range(3))
            assert out[i, j] == pytest.approx(want, abs=1e-9)
    with pytest.raises(ValueError):
        fuse_scales(maps, torch.ones(2, dtype=D) / 2)


def test_constant_image_has_no_high_frequency():
    amff = AMFF(levels=3).double()
    out = amff(torch.full((2, 1, 16, 16), 0.7, dtype=D))
    assert out.x.shape == (2, 2, 16, 16)
    torch.testing.assert_close(out.high, torch.zeros(2, 1, 16, 16, dtype=D), atol=1e-12, rtol=0)
    torch.testing.assert_close(out.low, torch.full((2, 1, 16, 16), 0.7, dtype=D))


def test_one_hot_lh_gate_reproduces_back_projection(rng):
    x = rng.standard_normal((16, 16))
    amff = AMFF(levels=1).double()
    set_mlp(amff.directional[0], np.zeros((16, 3)), np.zeros(16), np.zeros((3, 16)), [200.0, -200.0, -200.0])
    out = amff(torch.tensor(x)[None, None])
    pyr = wv.dwt_cascade(x, 1)
    want = wv.back_project(pyr.lh[0], "LH", 1, x.shape)
    np.testing.assert_allclose(out.high[0, 0].detach().numpy(), want, atol=1e-12)
    np.testing.assert_allclose(out.low[0, 0].detach().numpy(), wv.lowpass_map(pyr, 1), atol=1e-12)


@pytest.mark.parametrize("levels", [1, 2, 3, 4])
def test_gate_invariants_default_init(levels):
    amff = AMFF(levels=levels, pool="abs_mean")
    out = amff(torch.rand(4, 1, 32, 32))
    g = out.gates
    assert g.directional.shape == (4, levels, 3) and g.scale.shape == (4, levels)
    assert torch.all(g.directional >= 0) and torch.all(g.scale >= 0)
    torch.testing.assert_close(g.directional.sum(-1), torch.ones(4, levels))
    torch.testing.assert_close(g.scale.sum(-1), torch.ones(4))


def test_forward_is_deterministic():
    amff = AMFF(levels=3)
    x = torch.rand(3, 1, 32, 32)
    assert torch.equal(amff(x).x, amff(x).x)


def test_zero_mlp_is_invariant_to_lh_hl_swap():
    amff = AMFF(levels=2).double()
    for mlp in list(amff.directional) + [amff.scale]:
        zero_last(mlp)
    ll, hf = wavelet_inputs(torch.rand(2, 1, 16, 16, dtype=D), 2, dtype=D)
    swapped = hf[:, :, [1, 0, 2]]
    torch.testing.assert_close(amff.fuse(ll, hf).x, amff.fuse(ll, swapped).x)


def test_mean_descriptors_of_detail_maps_vanish():
    # back-projected Haar details have zero mean over an unpadded image
    _, hf = wavelet_inputs(torch.rand(3, 1, 32, 32), 3, dtype=D)
    assert directional_descriptors(hf).abs().max() < 1e-12


@pytest.mark.parametrize("pool", ["mean", "abs_mean"])
def test_gating_gradients_match_finite_differences(pool):
    torch.manual_seed(3)
    amff = AMFF(levels=3, hidden=4, pool=pool).double()
    images = torch.rand(2, 1, 28, 28, dtype=D)  # 28 is padded to 32, so mean descriptors are nonzero
    ll, hf = wavelet_inputs(images, 3, dtype=D)
    weights = torch.randn(2, 2, 28, 28, dtype=D)
    params = list(amff.parameters())
    assert fd_relative_error(lambda: (amff.fuse(ll, hf).x * weights).sum(), params) < 1e-4
    assert fd_relative_error(lambda: (amff.fuse(ll, hf).x ** 2).sum(), params) < 1e-4
