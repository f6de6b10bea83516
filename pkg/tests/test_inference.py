import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from revdeblur.exit_policy import ExitPolicy
from revdeblur.inference import InferenceConfig, TileConfig, blend_weights, deblur_image, tile_plan, write_exit_map
from revdeblur.model import DeblurNet, ModelConfig


def _trained_like(seed=0, columns=3):
    torch.manual_seed(seed)
    model = DeblurNet(ModelConfig(columns=columns))
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for n, p in model.named_parameters():
            if n.startswith(("tail", "dec")) and "alpha" not in n:
                p.add_(torch.randn(p.shape, generator=g) * 0.05)
    model.eval()
    return model


def test_tile_plan_examples():
    cfg = TileConfig()
    assert [(w.x, w.y) for w in tile_plan(384, 384, cfg)] == [(0, 0)]
    assert sorted({w.x for w in tile_plan(384, 736, cfg)}) == [0, 352]
    assert sorted({w.x for w in tile_plan(384, 800, cfg)}) == [0, 352, 416]
    assert cfg.overlap == 32
    with pytest.raises(ValueError):
        TileConfig(64, 80)


@given(st.integers(16, 200), st.integers(16, 200), st.integers(16, 96), st.integers(1, 96))
def test_blend_weights_partition_of_unity(h, w, window, stride):
    if stride > window:
        return
    cfg = TileConfig(window, stride)
    wins = tile_plan(h, w, cfg)
    total = np.zeros((h, w))
    for win, wt in zip(wins, blend_weights(h, w, wins)):
        assert wt.shape == (win.h, win.w) and wt.min() > 0
        total[win.y : win.y + win.h, win.x : win.x + win.w] += wt
    assert np.abs(total - 1).max() <= 1e-6


@pytest.mark.parametrize("shape,tiles", [((3, 40, 70), TileConfig(32, 24)), ((3, 64, 64), TileConfig(64, 64)), ((3, 50, 33), TileConfig(16, 5))])
def test_zero_tail_model_is_neutral(shape, tiles):
    torch.manual_seed(0)
    model = DeblurNet(ModelConfig(columns=2)).eval()
    img = np.random.default_rng(0).random(shape).astype(np.float32)
    out, exits = deblur_image(model, img, InferenceConfig(tiles=tiles))
    assert np.array_equal(out, img)
    assert all(e == 2 for _, _, e in exits)


def test_adaptive_with_full_policy_equals_fixed():
    model = _trained_like()
    img = np.random.default_rng(1).random((3, 48, 80)).astype(np.float32)
    tiles = TileConfig(32, 24)
    fixed, _ = deblur_image(model, img, InferenceConfig("fixed", tiles=tiles))
    ada, exits = deblur_image(model, img, InferenceConfig("adaptive", policy=ExitPolicy((3,) * 6, columns=3), tiles=tiles))
    assert np.array_equal(fixed, ada)
    assert {e for _, _, e in exits} == {3}


def test_fixed_j_runs_requested_columns():
    model = _trained_like()
    img = np.random.default_rng(2).random((3, 32, 32)).astype(np.float32)
    out, exits = deblur_image(model, img, InferenceConfig(fixed_j=1, tiles=TileConfig(32, 32)))
    assert exits == [(0, 0, 1)]
    with torch.no_grad():
        ref = model.restore(torch.from_numpy(img)[None], 1)[0].numpy()
    assert np.abs(out - ref).max() < 1e-6


def test_adaptive_exit_follows_class():
    model = _trained_like()
    img = np.random.default_rng(3).random((3, 32, 32)).astype(np.float32)
    with torch.no_grad():
        c = int(model.classify(torch.from_numpy(img)[None]).argmax()) + 1
    exits = [3] * 6
    exits[c - 1] = 2
    out, ex = deblur_image(model, img, InferenceConfig("adaptive", policy=ExitPolicy(tuple(exits), columns=3), tiles=TileConfig(32, 32)))
    assert ex == [(0, 0, 2)]
    ref, _ = deblur_image(model, img, InferenceConfig(fixed_j=2, tiles=TileConfig(32, 32)))
    assert np.array_equal(out, ref)


def test_errors():
    model = _trained_like()
    with pytest.raises(ValueError):
        deblur_image(model, np.zeros((3, 8, 40), np.float32), InferenceConfig())
    with pytest.raises(ValueError):
        deblur_image(model, np.zeros((3, 32, 32), np.float32), InferenceConfig(fixed_j=4))
    with pytest.raises(ValueError):
        deblur_image(model, np.zeros((3, 32, 32), np.float32), InferenceConfig("adaptive", policy=ExitPolicy((1, 2, 3), columns=3)))
    with pytest.raises(ValueError):
        InferenceConfig("adaptive")
    with pytest.raises(ValueError):
        InferenceConfig("sometimes")


def test_non_multiple_image_sizes():
    model = _trained_like()
    img = np.random.default_rng(4).random((3, 37, 53)).astype(np.float32)
    out, _ = deblur_image(model, img, InferenceConfig(tiles=TileConfig(24, 20)))
    assert out.shape == img.shape and np.isfinite(out).all()


def test_exit_map_format(tmp_path):
    write_exit_map(tmp_path / "e.tsv", [(0, 0, 4), (352, 0, 2)])
    assert (tmp_path / "e.tsv").read_text() == "x\ty\tE\n0\t0\t4\n352\t0\t2\n"
