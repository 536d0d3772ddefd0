import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from s2bnet import tensor as T
from conftest import autograd_grads, central_fd, rel_err


def naive_conv(x, w, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for b in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    s = 0.0
                    for c in range(cin):
                        for u in range(k):
                            for v in range(k):
                                r, q = i * stride + u - pad, j * stride + v - pad
                                if 0 <= r < h and 0 <= q < wd:
                                    s += x[b, c, r, q] * w[o, c, u, v]
                    out[b, o, i, j] = s
    return out


def test_conv_identity_kernel():
    x = torch.arange(9.0).reshape(1, 1, 3, 3)
    assert torch.equal(T.conv2d_fp(x, torch.ones(1, 1, 1, 1)), x)


def test_conv_single_pixel_overlap():
    out = T.conv2d_fp(torch.tensor([[[[2.0]]]]), torch.ones(1, 1, 3, 3), pad=1)
    assert out.item() == 2.0


def test_conv_matches_naive_oracle(rng):
    x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    got = T.conv2d_fp(torch.from_numpy(x), torch.from_numpy(w), 1, 1).numpy()
    assert np.abs(got - naive_conv(x, w, 1, 1)).max() < 1e-5


@settings(max_examples=40, deadline=None)
@given(
    h=st.integers(1, 7), w=st.integers(1, 7), cin=st.integers(1, 3), cout=st.integers(1, 3),
    k=st.sampled_from([1, 3]), stride=st.integers(1, 2), seed=st.integers(0, 2**31),
)
def test_conv_oracle_property(h, w, cin, cout, k, stride, seed):
    pad = k // 2
    r = np.random.default_rng(seed)
    x = r.standard_normal((1, cin, h, w)).astype(np.float32)
    wt = r.standard_normal((cout, cin, k, k)).astype(np.float32)
    got = T.conv2d_fp(torch.from_numpy(x), torch.from_numpy(wt), stride, pad).numpy()
    assert np.abs(got - naive_conv(x, wt, stride, pad)).max() < 1e-5


def test_conv_channel_mismatch():
    with pytest.raises(T.ShapeError):
        T.conv2d_fp(torch.zeros(1, 2, 4, 4), torch.zeros(1, 3, 3, 3))


def test_layer_norm_constant_input_is_zero():
    out = T.layer_norm(torch.full((1, 2, 3, 3), 4.0), torch.ones(2), torch.zeros(2))
    assert torch.all(out == 0)


def test_layer_norm_moments(rng):
    x = torch.from_numpy(rng.standard_normal((2, 3, 4, 5)).astype(np.float32)) * 3 + 1
    out = T.layer_norm(x, torch.ones(3), torch.zeros(3))
    for s in out:
        assert abs(s.mean().item()) < 1e-5
        assert abs(s.var(unbiased=False).item() - 1) < 1e-3


def test_layer_norm_two_values():
    x = torch.tensor([1.0, 3.0], dtype=torch.float64).reshape(1, 1, 1, 2)
    out = T.layer_norm(x, torch.ones(1, dtype=torch.float64), torch.zeros(1, dtype=torch.float64), eps=1e-12)
    assert torch.allclose(out.flatten(), torch.tensor([-1.0, 1.0], dtype=torch.float64), atol=1e-9)


def test_elementwise_points():
    assert T.relu(torch.tensor([-2.0, 3.0])).tolist() == [0.0, 3.0]
    assert T.sigmoid(torch.tensor(0.0)).item() == 0.5
    assert T.tanh_op(torch.tensor(0.0)).item() == 0.0


def test_global_avg_pool_constant():
    x = torch.stack([torch.full((4, 4), 2.0), torch.full((4, 4), -1.5)])[None]
    assert T.global_avg_pool(x).tolist() == [[2.0, -1.5]]


def test_shape_errors():
    with pytest.raises(T.ShapeError):
        T.add(torch.zeros(2), torch.zeros(3))
    with pytest.raises(T.ShapeError):
        T.concat_channels(torch.zeros(1, 1, 2, 2), torch.zeros(1, 1, 3, 3))
    with pytest.raises(T.ShapeError):
        T.linear(torch.zeros(2, 3), torch.zeros(4, 5), torch.zeros(4))


def test_upsample_constants():
    assert torch.all(T.bilinear_upsample2x(torch.full((1, 1, 2, 2), 5.0)) == 5.0)
    assert torch.all(T.bilinear_upsample2x(torch.full((1, 1, 1, 1), 3.0)) == 3.0)


def test_upsample_ramp_half_pixel():
    # output centre u maps to input coordinate (u + 0.5) / 2 - 0.5, clamped at the borders:
    # u=0 -> -0.25 (clamp 0), u=1 -> 0.25, u=2 -> 0.75, u=3 -> 1.25 (clamp 1)
    out = T.bilinear_upsample2x(torch.tensor([[[[0.0, 1.0]]]]))
    assert torch.allclose(out[0, 0, 0], torch.tensor([0.0, 0.25, 0.75, 1.0]))


def test_backward_sum():
    x = torch.zeros(3, requires_grad=True)
    T.backward(x.sum())
    assert x.grad.tolist() == [1.0, 1.0, 1.0]


def test_backward_relu():
    x = torch.tensor([-1.0, 2.0], requires_grad=True)
    T.backward(T.relu(x).sum())
    assert x.grad.tolist() == [0.0, 1.0]


def test_backward_rejects_untaped():
    with pytest.raises(RuntimeError):
        T.backward(torch.tensor(1.0))


def test_grads_accumulate():
    x = torch.ones(2, requires_grad=True)
    T.backward((x * 2).sum())
    T.backward((x * 3).sum())
    assert x.grad.tolist() == [5.0, 5.0]


def test_composite_finite_difference(rng):
    x = torch.from_numpy(rng.standard_normal((1, 2, 4, 4)))
    w = torch.from_numpy(rng.standard_normal((3, 2, 3, 3)))
    r = torch.from_numpy(rng.standard_normal((1, 3, 8, 8)))

    def f(x, w):
        return (T.bilinear_upsample2x(T.tanh_op(T.conv2d_fp(x, w, 1, 1))) * r).sum()

    for a, n in zip(autograd_grads(f, [x, w]), central_fd(f, [x, w])):
        assert rel_err(a, n) < 1e-4


def test_forward_determinism(rng):
    x = torch.from_numpy(rng.standard_normal((2, 3, 8, 8)).astype(np.float32))
    w = torch.from_numpy(rng.standard_normal((4, 3, 3, 3)).astype(np.float32))
    a = T.layer_norm(T.conv2d_fp(x, w, 1, 1), torch.ones(4), torch.zeros(4))
    b = T.layer_norm(T.conv2d_fp(x, w, 1, 1), torch.ones(4), torch.zeros(4))
    assert torch.equal(a, b)
