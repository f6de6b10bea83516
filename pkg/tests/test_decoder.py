import pytest
import torch

from revdeblur.autodiff import count_live_activations, forward
from revdeblur.backbone import BackboneConfig
from revdeblur.decoder import ALPHA_MIN, DecoderStack, SubDecoder, column_forward, column_inverse


def _cfg(c=4):
    return BackboneConfig(base_channels=c)


def _feats(cfg, h=16, w=16, dtype=torch.float32, seed=0):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(1, cfg.channels(i), h >> (i - 1), w >> (i - 1), generator=g, dtype=dtype) for i in range(1, cfg.levels + 1)]


def _randomize(mod, seed=0, scale=0.2):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in mod.named_parameters():
            if "alpha" in name:
                p.copy_(0.5 + torch.rand(p.shape, generator=g, dtype=p.dtype))
            else:
                p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
    return mod


def _zero_levels(col, alpha):
    with torch.no_grad():
        for name, p in col.named_parameters():
            p.fill_(alpha if "alpha" in name else 0.0)


def test_zero_levels_alpha_one_is_identity():
    cfg = _cfg()
    col = SubDecoder(cfg)
    _zero_levels(col, 1.0)
    feats = _feats(cfg)
    out = column_forward(feats[:4], feats[4], col)
    assert all(torch.equal(a, b) for a, b in zip(out, feats[:4]))


def test_fresh_column_is_identity():
    cfg = _cfg()
    feats = _feats(cfg)
    out = column_forward(feats[:4], feats[4], SubDecoder(cfg))
    assert all(torch.equal(a, b) for a, b in zip(out, feats[:4]))


def test_zero_levels_scaling_and_inverse():
    cfg = _cfg()
    col = SubDecoder(cfg)
    _zero_levels(col, 0.5)
    feats = _feats(cfg)
    out = column_forward(feats[:4], feats[4], col)
    assert all(torch.equal(a, 0.5 * b) for a, b in zip(out, feats[:4]))
    _zero_levels(col, 2.0)
    back = column_inverse(column_forward(feats[:4], feats[4], col), feats[4], col)
    assert all(torch.equal(a, b) for a, b in zip(back, feats[:4]))


def test_matches_straight_line_evaluation():
    cfg = _cfg()
    col = _randomize(SubDecoder(cfg), seed=1)
    e1, e2, e3, e4, e5 = _feats(cfg, dtype=torch.float32, seed=2)
    col.requires_grad_(False)
    d4 = col.level4(e5, e3) + col.alpha4 * e4
    d3 = col.level3(d4, e2) + col.alpha3 * e3
    d2 = col.level2(d3, e1) + col.alpha2 * e2
    d1 = col.level1(d2) + col.alpha1 * e1
    out = column_forward([e1, e2, e3, e4], e5, col)
    for a, b in zip(out, [d1, d2, d3, d4]):
        assert float((a - b).abs().max()) <= 1e-6


@pytest.mark.parametrize("dtype,tol", [(torch.float32, 1e-4), (torch.float64, 1e-9)])
def test_round_trip(dtype, tol):
    cfg = _cfg()
    for seed in range(10):
        col = _randomize(SubDecoder(cfg).to(dtype), seed=seed)
        feats = _feats(cfg, dtype=dtype, seed=100 + seed)
        with torch.no_grad():
            back = column_inverse(column_forward(feats[:4], feats[4], col), feats[4], col)
        for a, b in zip(back, feats[:4]):
            assert float((a - b).abs().max() / b.abs().max()) <= tol


def test_wrong_inverse_order_fails():
    cfg = _cfg()
    col = _randomize(SubDecoder(cfg), seed=3)
    feats = _feats(cfg, seed=4)
    with torch.no_grad():
        nxt = column_forward(feats[:4], feats[4], col)
        # coarse-to-fine inverse uses d_{i-1}^j where d_{i-1}^{j-1} is needed
        prev = [None] * 4
        for i in range(4, 0, -1):
            up = feats[4] if i == 4 else nxt[i]
            down = nxt[i - 2] if i > 1 else None
            prev[i - 1] = (nxt[i - 1] - col.level(i)(up, down)) / col.alpha(i)
    err = max(float((a - b).abs().max()) for a, b in zip(prev, feats[:4]))
    assert err > 1e-2


def test_alpha_bound_enforced():
    cfg = _cfg()
    col = SubDecoder(cfg)
    with torch.no_grad():
        col.alpha2.fill_(1e-5)
    feats = _feats(cfg)
    with pytest.raises(ValueError):
        column_inverse(feats[:4], feats[4], col)
    with torch.no_grad():
        col.alpha3.fill_(-1e-6)
    col.clamp_alphas()
    assert float(col.alpha2.detach()) == pytest.approx(ALPHA_MIN)
    assert float(col.alpha3.detach()) == pytest.approx(-ALPHA_MIN)


def test_shape_violation():
    cfg = _cfg()
    col = SubDecoder(cfg)
    feats = _feats(cfg)
    with pytest.raises(ValueError):
        column_forward(feats[:3], feats[4], col)


def test_nonfinite_output_rejected():
    cfg = _cfg()
    col = SubDecoder(cfg)
    feats = _feats(cfg)
    feats[0][0, 0, 0, 0] = float("inf")
    with pytest.raises(FloatingPointError):
        column_forward(feats[:4], feats[4], col)


def test_stack_upto_zero_returns_encoder_features():
    cfg = _cfg()
    stack = DecoderStack(cfg, 3)
    feats = _feats(cfg)
    d1, state = stack(feats, 0)
    assert d1 == [] and all(a is b for a, b in zip(state, feats[:4]))


def test_dual_mode_identical_forward_and_grads():
    torch.manual_seed(0)
    cfg = _cfg()
    stack = _randomize(DecoderStack(cfg, 4), seed=5)
    feats = [f.requires_grad_(True) for f in _feats(cfg, seed=6)]
    results = []
    for rev in (False, True):
        stack.zero_grad()
        for f in feats:
            f.grad = None
        d1, state = stack(feats, reversible=rev)
        loss = sum((d ** 2).mean() for d in d1) + sum(s.sum() for s in state)
        loss.backward()
        results.append(([s.detach() for s in state], [p.grad.clone() for p in stack.parameters()], [f.grad.clone() for f in feats]))
    (s0, g0, f0), (s1, g1, f1) = results
    assert all(torch.equal(a, b) for a, b in zip(s0, s1))
    for a, b in zip(g0 + f0, g1 + f1):
        assert float((a - b).abs().max()) <= 1e-5 * max(float(b.abs().max()), 1e-12)


def test_reversible_mode_retains_less():
    cfg = _cfg()
    stack = _randomize(DecoderStack(cfg, 4), seed=7)
    feats = _feats(cfg, seed=8)
    params = list(stack.parameters())
    sizes = {}
    for rev in (False, True):
        _, tape = forward(lambda *f: stack(list(f), reversible=rev)[0], feats, exclude=params)
        sizes[rev] = count_live_activations(tape).total_bytes
    assert sizes[True] < sizes[False] / 2
