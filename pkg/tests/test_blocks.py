import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from torch import nn

from conftest import central_fd
from oracles import conv_loop, dft2, gelu_tanh, irfft2_dense, layernorm_loop
from revdeblur.blocks import (
    Downsample,
    FourierBlock,
    FourierConv,
    FuseBlock,
    NAFBlock,
    Upsample,
    simple_gate,
)


def _np(t):
    return t.detach().double().numpy()


def _randomize(module, seed=0, scale=0.3):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
    return module


def naf_loop(block: NAFBlock, x):
    """Scalar-loop forward of a NAF block on one (c, h, w) sample."""
    xn = layernorm_loop(x, _np(block.norm1.weight), _np(block.norm1.bias))
    t = conv_loop(xn, _np(block.conv1.weight), _np(block.conv1.bias))
    k = block.conv2.kernel_size[0]
    t = conv_loop(t, _np(block.conv2.weight), _np(block.conv2.bias), pad=k // 2, groups=t.shape[0])
    half = t.shape[0] // 2
    t = t[:half] * t[half:]
    pooled = t.mean(axis=(1, 2)).reshape(-1, 1, 1)
    att = conv_loop(pooled, _np(block.sca.conv.weight), _np(block.sca.conv.bias))
    t = t * att
    if block.fourier is not None:
        t = t + fourier_loop(block.fourier, xn)
    y = x + conv_loop(t, _np(block.conv3.weight), _np(block.conv3.bias)) * _np(block.beta)[0]
    yn = layernorm_loop(y, _np(block.norm2.weight), _np(block.norm2.bias))
    t = conv_loop(yn, _np(block.conv4.weight), _np(block.conv4.bias))
    t = t[:half] * t[half:]
    return y + conv_loop(t, _np(block.conv5.weight), _np(block.conv5.bias)) * _np(block.gamma)[0]


def fourier_loop(fc: FourierConv, x):
    c, h, w = x.shape
    nh = w // 2 + 1
    spec = np.stack([dft2(x[k])[:, :nh] for k in range(c)])
    z = np.concatenate([spec.real, spec.imag])
    z = conv_loop(z, _np(fc.mix1.weight), _np(fc.mix1.bias))
    if not fc.linear:
        z = gelu_tanh(z)
    z = conv_loop(z, _np(fc.mix2.weight), _np(fc.mix2.bias))
    comp = z[:c] + 1j * z[c:]
    return np.stack([irfft2_dense(comp[k], h, w) for k in range(c)])


def test_fresh_naf_block_is_identity():
    x = torch.randn(2, 4, 8, 8)
    assert torch.equal(NAFBlock(4)(x), x)
    assert torch.equal(FourierBlock(4)(x), x)


def test_zero_weights_identity():
    blk = NAFBlock(4)
    with torch.no_grad():
        for p in blk.parameters():
            p.zero_()
    x = torch.randn(1, 4, 6, 6)
    assert torch.equal(blk(x), x)


def test_simple_gate_product():
    s = torch.randn(1, 3, 4, 4)
    assert torch.allclose(simple_gate(torch.cat([2 * s, 3 * s], 1)), 6 * s * s)


def test_naf_block_matches_loop_reference():
    blk = _randomize(NAFBlock(4), seed=1)
    x = torch.randn(1, 4, 5, 6, generator=torch.Generator().manual_seed(2))
    ref = naf_loop(blk, _np(x[0]))
    assert np.abs(_np(blk(x)[0]) - ref).max() < 1e-5


def test_fourier_block_matches_loop_reference():
    blk = _randomize(FourierBlock(2), seed=3)
    x = torch.randn(1, 2, 4, 6, generator=torch.Generator().manual_seed(4))
    ref = naf_loop(blk, _np(x[0]))
    assert np.abs(_np(blk(x)[0]) - ref).max() < 1e-5


def test_channel_mismatch_rejected():
    with pytest.raises(ValueError):
        NAFBlock(4)(torch.randn(1, 3, 4, 4))


def _identity_fourier(c):
    fc = FourierConv(c, linear=True)
    with torch.no_grad():
        for m in (fc.mix1, fc.mix2):
            m.weight.copy_(torch.eye(2 * c).view(2 * c, 2 * c, 1, 1))
            m.bias.zero_()
    return fc


@pytest.mark.parametrize("shape", [(8, 8), (5, 7), (6, 9), (12, 10)])
def test_fourier_identity_round_trip(shape):
    x = torch.randn(1, 3, *shape)
    assert torch.allclose(_identity_fourier(3)(x), x, atol=1e-5)


def test_fourier_zero_weights_gives_zero():
    fc = FourierConv(2)
    with torch.no_grad():
        for p in fc.parameters():
            p.zero_()
    assert torch.count_nonzero(fc(torch.randn(1, 2, 6, 6))) == 0


@pytest.mark.parametrize("shape", [(8, 8), (4, 6), (5, 5), (3, 8)])
def test_fourier_conv_matches_dense_dft(shape):
    fc = _randomize(FourierConv(4), seed=5, scale=0.2)
    x = torch.randn(1, 4, *shape, generator=torch.Generator().manual_seed(6))
    ref = fourier_loop(fc, _np(x[0]))
    out = _np(fc(x)[0])
    assert np.abs(out - ref).max() <= 1e-4 * max(1.0, np.abs(ref).max())


def test_fourier_branch_ablation():
    torch.manual_seed(0)
    fb = _randomize(FourierBlock(4), seed=7)
    plain = NAFBlock(4)
    plain.load_state_dict({k: v for k, v in fb.state_dict().items() if not k.startswith("fourier.")})
    with torch.no_grad():
        for p in fb.fourier.parameters():
            p.zero_()
    x = torch.randn(1, 4, 6, 6)
    assert torch.equal(fb(x), plain(x))


def test_fourier_branch_isolation():
    # NAF spatial path and FFN zeroed; the Fourier branch is an identity map of the normed input
    fb = FourierBlock(3)
    fb.fourier = _identity_fourier(3)
    with torch.no_grad():
        fb.conv2.weight.zero_()
        fb.conv2.bias.zero_()
        fb.conv3.weight.copy_(torch.eye(3).view(3, 3, 1, 1))
        fb.conv3.bias.zero_()
        fb.beta.fill_(1.0)
    x = torch.randn(1, 3, 8, 8)
    assert torch.allclose(fb(x), x + fb.norm1(x), atol=1e-5)


@pytest.mark.parametrize("cls,args", [(NAFBlock, (2,)), (FourierBlock, (2,))])
def test_blocks_pass_gradient_check(cls, args):
    blk = _randomize(cls(*args), seed=8).double()
    x = torch.randn(1, 2, 4, 4, dtype=torch.float64, requires_grad=True)
    w = torch.randn(1, 2, 4, 4, dtype=torch.float64)
    (blk(x) * w).sum().backward()
    with torch.no_grad():
        fd = central_fd(lambda t: (blk(t) * w).sum(), x.detach().clone())
    assert float((x.grad - fd).abs().max() / fd.abs().max()) < 1e-6


def test_fuse_block_gradient_check():
    fb = _randomize(FuseBlock(4), seed=9).double()
    up = torch.randn(1, 8, 2, 2, dtype=torch.float64, requires_grad=True)
    down = torch.randn(1, 2, 8, 8, dtype=torch.float64)
    fb(up, down).pow(2).sum().backward()
    with torch.no_grad():
        fd = central_fd(lambda t: fb(t, down).pow(2).sum(), up.detach().clone())
    assert float((up.grad - fd).abs().max() / fd.abs().max()) < 1e-6


@pytest.mark.parametrize("c", [2, 4, 8])
def test_fuse_block_shapes(c):
    fb = FuseBlock(c)
    out = fb(torch.randn(1, 2 * c, 4, 4), torch.randn(1, c // 2, 16, 16))
    assert out.shape == (1, c, 8, 8)
    top = FuseBlock(c, with_down=False)
    assert top(torch.randn(1, 2 * c, 4, 4)).shape == (1, c, 8, 8)


def test_fuse_block_errors_and_zero():
    fb = FuseBlock(4)
    with pytest.raises(ValueError):
        fb(torch.randn(1, 8, 4, 4), torch.randn(1, 2, 8, 8))
    with pytest.raises(ValueError):
        fb(torch.randn(1, 8, 4, 4))
    with pytest.raises(ValueError):
        FuseBlock(4, with_down=False)(torch.randn(1, 8, 4, 4), torch.randn(1, 2, 16, 16))
    with torch.no_grad():
        fb.fuse.weight.zero_()
        fb.fuse.bias.zero_()
    assert torch.count_nonzero(fb(torch.randn(1, 8, 4, 4), torch.randn(1, 2, 16, 16))) == 0


def test_sampling_contracts():
    x = torch.randn(1, 4, 8, 6)
    d = Downsample(4)(x)
    assert d.shape == (1, 8, 4, 3)
    assert Upsample(8)(d).shape == x.shape
    assert torch.count_nonzero(Upsample(8)(torch.zeros(1, 8, 4, 3))) == 0
    with pytest.raises(ValueError):
        Downsample(4)(torch.randn(1, 4, 7, 6))


@given(
    c=st.sampled_from([2, 4, 6]),
    h=st.integers(1, 6),
    w=st.integers(1, 6),
    fourier=st.booleans(),
)
def test_blocks_preserve_shape(c, h, w, fourier):
    blk = _randomize(NAFBlock(c, fourier=fourier), seed=c)
    x = torch.randn(2, c, 2 * h, 2 * w)
    assert blk(x).shape == x.shape
    assert Upsample(2 * c)(Downsample(c)(x)).shape == (2, c, 2 * h, 2 * w)
