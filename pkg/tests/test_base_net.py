import math

import numpy as np
import pytest
import torch

import oracles
from lapstyle.base_net import BaseNet, SAModule, base_forward, sa_attention
from lapstyle.losses import identity_loss
from lapstyle.pyramid import DimensionError


def identity_sa(channels: int) -> SAModule:
    sa = SAModule(channels).double()
    with torch.no_grad():
        for conv in (sa.w_c, sa.w_s, sa.w_h, sa.w_out):
            conv.weight.copy_(torch.eye(channels, dtype=torch.float64).view(channels, channels, 1, 1))
            conv.bias.zero_()
    return sa


def _standardize(rows):
    out = []
    for row in rows:
        m = sum(row) / len(row)
        s = max(math.sqrt(sum((v - m) ** 2 for v in row) / len(row)), 1e-5)
        out.append([(v - m) / s for v in row])
    return out


def test_tiny_case_matches_enumeration():
    fc = [[0.2, 1.4], [0.9, -0.3]]  # channel x position
    fs = [[1.0, -0.5], [0.1, 0.8]]
    sa = identity_sa(2)
    out = sa_attention(torch.tensor(fc, dtype=torch.float64).view(2, 1, 2), torch.tensor(fs, dtype=torch.float64).view(2, 1, 2), sa)

    fcn, fsn = _standardize(fc), _standardize(fs)
    expected = [[0.0, 0.0], [0.0, 0.0]]
    for i in range(2):
        logits = [sum(fcn[c][i] * fsn[c][j] for c in range(2)) for j in range(2)]
        p = oracles.softmax_row(logits)
        for c in range(2):
            expected[c][i] = fc[c][i] + sum(p[j] * fs[c][j] for j in range(2))
    np.testing.assert_allclose(out.detach().view(2, 2).numpy(), expected, atol=1e-12)


def test_single_style_position():
    torch.manual_seed(0)
    sa = SAModule(4).double()
    f_c = torch.randn(4, 3, 3, dtype=torch.float64)
    f_s = torch.randn(4, 1, 1, dtype=torch.float64)
    out, attn = sa_attention(f_c, f_s, sa, return_attention=True)
    assert torch.equal(attn, torch.ones_like(attn))
    h = sa.w_h(f_s.unsqueeze(0))[0]  # 4 x 1 x 1
    expected = f_c + sa.w_out(h.expand(4, 3, 3).unsqueeze(0))[0]
    assert torch.allclose(out, expected, atol=1e-12)


def test_attention_rows_sum_to_one():
    torch.manual_seed(1)
    sa = SAModule(8)
    _, attn = sa_attention(torch.randn(8, 4, 4), torch.randn(8, 4, 4), sa, return_attention=True)
    assert attn.shape == (16, 16)
    assert (attn.sum(-1) - 1).abs().max() < 1e-5


def test_channel_mismatch():
    with pytest.raises(ValueError, match="channel mismatch"):
        sa_attention(torch.randn(4, 2, 2), torch.randn(3, 2, 2), SAModule(4))


def test_style_permutation_invariance():
    torch.manual_seed(2)
    sa = SAModule(6).double()
    f_c = torch.randn(6, 3, 3, dtype=torch.float64)
    f_s = torch.randn(6, 4, 4, dtype=torch.float64)
    perm = torch.randperm(16)
    f_s_perm = f_s.flatten(1)[:, perm].view(6, 4, 4)
    assert torch.allclose(sa_attention(f_c, f_s, sa), sa_attention(f_c, f_s_perm, sa), atol=1e-5)


def test_sa_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    sa = SAModule(2).double()
    f_c = torch.from_numpy(rng.normal(size=(2, 2, 2)))
    f_s = torch.from_numpy(rng.normal(size=(2, 2, 2)))
    probe = torch.from_numpy(rng.normal(size=(2, 2, 2)))

    for conv in (sa.w_c, sa.w_s, sa.w_h):
        sa.zero_grad()
        (sa_attention(f_c, f_s, sa) * probe).sum().backward()
        analytic = conv.weight.grad.numpy().copy()

        def loss(w, conv=conv):
            with torch.no_grad():
                saved = conv.weight.clone()
                conv.weight.copy_(torch.from_numpy(w))
                value = float((sa_attention(f_c, f_s, sa) * probe).sum())
                conv.weight.copy_(saved)
            return value

        numeric = oracles.central_difference(loss, conv.weight.detach().numpy().copy())
        assert oracles.relative_error(analytic, numeric) < 1e-3


def test_base_forward_shape_and_range(encoder):
    torch.manual_seed(0)
    net = BaseNet()
    with torch.no_grad():
        out = base_forward(torch.rand(3, 128, 128), torch.rand(3, 128, 128), encoder, net)
    assert out.shape == (3, 128, 128)
    assert out.min() >= 0 and out.max() <= 1


def test_base_forward_size_mismatch(encoder):
    with pytest.raises(DimensionError):
        base_forward(torch.rand(3, 32, 32), torch.rand(3, 64, 64), encoder, BaseNet())


def test_identity_overfit_reduces_reconstruction_error(encoder):
    torch.manual_seed(0)
    net = BaseNet()
    # a dark image, far from the untrained sigmoid output of ~0.5
    yy, xx = torch.meshgrid(torch.linspace(0, 1, 32), torch.linspace(0, 1, 32), indexing="ij")
    x = torch.stack([0.1 + 0.2 * yy, 0.1 + 0.2 * xx, 0.2 * yy * xx]).unsqueeze(0)
    opt = torch.optim.Adam(net.parameters(), lr=1e-3)
    errors = []
    for _ in range(60):
        out = base_forward(x, x, encoder, net)
        loss = identity_loss(out, x, out, x, encoder, lambda_pixel=1.0, lambda_feature=0.0)
        errors.append(float(torch.linalg.vector_norm(out.detach() - x)))
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        final = float(torch.linalg.vector_norm(base_forward(x, x, encoder, net) - x))
    assert final < 0.5 * errors[0]
    assert np.mean(errors[-10:]) < np.mean(errors[:10])
