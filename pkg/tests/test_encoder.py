import numpy as np
import pytest

from catrinet import tensor as T
from catrinet.encoder import (
    GatedPositionalSelfAttention,
    PatchEmbed,
    SelfAttention,
    VisualEncoder,
    patchify,
    relative_offsets,
)
from catrinet.errors import ConfigError
from catrinet.nn import Adam, Linear, LSTMCell
from catrinet.tensor import Parameter, Tensor

from helpers import numerical_grad, rel_error


def rng(seed=0):
    return np.random.default_rng(seed)


def weighted_fd_check(module_fn, params, shape, seed, tol=1e-5):
    w = rng(seed).normal(size=shape)
    (module_fn() * w).sum().backward()

    def f():
        with T.no_grad():
            return float((module_fn().data * w).sum())

    for name, p in params:
        assert rel_error(p.grad, numerical_grad(f, p.data)) < tol, name


def test_patch_count():
    assert PatchEmbed(rng(), (32, 32), 8, 16).num_patches == 16
    assert patchify(np.zeros((32, 32)), 8).shape == (1, 16, 64)
    with pytest.raises(ConfigError):
        PatchEmbed(rng(), (30, 32), 8, 16)


def test_patchify_raster_order():
    img = np.arange(16.0).reshape(4, 4)
    p = patchify(img, 2)[0]
    np.testing.assert_array_equal(p[0], [0, 1, 4, 5])
    np.testing.assert_array_equal(p[1], [2, 3, 6, 7])
    np.testing.assert_array_equal(p[2], [8, 9, 12, 13])


def test_zero_image_gives_positional_rows():
    pe = PatchEmbed(rng(), (16, 16), 8, 8)
    out = pe(np.zeros((1, 16, 16)))
    np.testing.assert_array_equal(out.data[0], pe.pos.data)


def test_patch_projection_gradient():
    pe = PatchEmbed(rng(1), (16, 16), 8, 4)
    imgs = rng(2).normal(size=(2, 16, 16))
    weighted_fd_check(lambda: pe(imgs), pe.named_parameters(), (2, 4, 4), 3)


def test_offsets_shape_and_symmetry():
    off = relative_offsets(2, 3)
    assert off.shape == (6, 6, 3)
    np.testing.assert_array_equal(off[:, :, 0], -off[:, :, 0].T)
    assert np.all(np.diagonal(off[:, :, 2]) == 0)


def _gpsa(seed=0, d=8, n=2, grid=(2, 2)):
    return GatedPositionalSelfAttention(rng(seed), d, n, grid)


def test_gpsa_gate_zero_is_plain_self_attention():
    g = _gpsa(4)
    sa = SelfAttention(rng(99), 8, 2)
    sa.norm, sa.qkv, sa.out = g.norm, g.qkv, g.out
    x = Tensor(rng(5).normal(size=(3, 4, 8)))
    assert np.array_equal(g(x, gate=[0.0, 0.0]).data, sa(x).data)


def test_gpsa_gate_one_ignores_content():
    g = _gpsa(6)
    a1, _ = g.attention(Tensor(rng(7).normal(size=(1, 4, 8))), gate=[1.0, 1.0])
    a2, _ = g.attention(Tensor(rng(8).normal(size=(1, 4, 8)) * 5), gate=[1.0, 1.0])
    assert np.array_equal(a1.data, a2.data)


def test_gpsa_rows_sum_to_one():
    g = _gpsa(9)
    r = rng(10)
    for _ in range(20):
        g.gate.data = r.normal(size=2) * 3
        a, _ = g.attention(Tensor(r.normal(size=(2, 4, 8))))
        assert np.all(np.abs(a.data.sum(axis=-1) - 1.0) < 1e-9)


def test_gpsa_gradients():
    g = _gpsa(11)
    x = Parameter(rng(12).normal(size=(2, 4, 8)))
    weighted_fd_check(lambda: g(x), list(g.named_parameters()) + [("x", x)], (2, 4, 8), 13)


def test_fc_projection_examples_and_gradient():
    fc = Linear(rng(), 4, 4)
    x = rng(1).normal(size=(3, 4))
    fc.weight.data = np.eye(4)
    np.testing.assert_array_equal(fc(Tensor(x)).data, x)
    fc.weight.data = np.zeros((4, 4))
    np.testing.assert_array_equal(fc(Tensor(x)).data, np.zeros((3, 4)))
    fc.weight.data = rng(2).normal(size=(4, 4))
    fc.bias.data = rng(3).normal(size=4)
    weighted_fd_check(lambda: fc(Tensor(x)), fc.named_parameters(), (3, 4), 4)


def _encoder(seed=0):
    return VisualEncoder(rng(seed), (16, 16), 8, 8, 2, ffn_mult=2)


def test_bag_of_words_single_patch_is_one_step():
    enc = _encoder()
    patch = Tensor(rng(1).normal(size=(2, 1, 8)))
    step = enc.ife(patch[:, 0, :], enc.ife.zero_state(2))[0]
    assert np.array_equal(enc.bag_of_words(patch).data, step.data)


def test_bag_of_words_zero_weights_is_zero():
    enc = _encoder()
    for p in enc.ife.parameters():
        p.data = np.zeros_like(p.data)
    out = enc.bag_of_words(Tensor(rng(2).normal(size=(1, 4, 8))))
    assert np.all(out.data == 0)


def test_bag_of_words_is_order_sensitive():
    enc = _encoder()
    x = rng(3).normal(size=(1, 4, 8))
    a = enc.bag_of_words(Tensor(x)).data
    b = enc.bag_of_words(Tensor(x[:, ::-1].copy())).data
    assert not np.allclose(a, b)


def test_encoder_shapes_and_gradients():
    enc = _encoder(4)
    imgs = rng(5).normal(size=(2, 16, 16))
    emb, bow = enc(imgs)
    assert emb.shape == (2, 4, 8) and bow.shape == (2, 8)

    def both():
        e, b = enc(imgs)
        return T.concat([e.reshape(2, 32), b], axis=1)

    weighted_fd_check(both, enc.named_parameters(), (2, 40), 6)


def test_lstm_zero_input_zero_weights():
    cell = LSTMCell(rng(), 3, 4)
    cell.w_x.data[:] = 0
    cell.w_h.data[:] = 0
    h, c = cell(Tensor(np.zeros((1, 3))), cell.zero_state(1))
    assert np.all(h.data == 0) and np.all(c.data == 0)


def test_lstm_mask_keeps_previous_state():
    cell = LSTMCell(rng(1), 3, 4)
    state = cell(Tensor(rng(2).normal(size=(2, 3))), cell.zero_state(2))
    h, c = cell(Tensor(rng(3).normal(size=(2, 3))), state, mask=np.array([1.0, 0.0]))
    assert np.array_equal(h.data[1], state[0].data[1])
    assert not np.array_equal(h.data[0], state[0].data[0])


def test_adam_first_step_moves_by_lr():
    p = Parameter([1.0, -2.0])
    opt = Adam([p], lr=0.1)
    p.grad = np.array([3.0, -0.5])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-8)
