import numpy as np
import pytest

from harmlab.errors import CheckpointError, ShapeError
from harmlab.imaging import Mask
from harmlab.synthdata import GenConfig, generate_sample
from harmlab.unet import (
    GeneratorModel, UNetConfig, downsample_mask, downsample_planar,
    load_checkpoint, save_checkpoint, unet_forward,
)


def formula_param_count(config: UNetConfig) -> int:
    """Hand-derived parameter count (see docs/checkpoint-format.md)."""
    chans = [4] + config.stage_channels()
    total = 0
    for i in range(1, len(chans)):
        total += chans[i] * chans[i - 1] * 9 + chans[i]  # encoder convs
    if config.block == "srin":
        c = chans[-1]
        total += 4 * c * c + 8 * c
    for i in range(config.stages, 0, -1):
        c_i = chans[i]
        skip = chans[i - 1]
        out = chans[i - 1] if i >= 2 else config.base_channels
        total += out * (c_i + skip) * 9 + out  # decoder convs
    total += 3 * config.base_channels * 9 + 3  # output head
    return total


def sample_inputs(size=32, seed=0):
    s = generate_sample(GenConfig(seed=seed, size=size), 0)
    return s


class TestConfig:
    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            UNetConfig(size=48)

    def test_rejects_too_deep(self):
        with pytest.raises(ValueError):
            UNetConfig(size=16, stages=3)

    def test_rejects_unknown_block(self):
        with pytest.raises(ValueError):
            UNetConfig(block="other")


class TestForward:
    def test_zero_head_is_identity(self):
        model = GeneratorModel.build(UNetConfig(size=32, stages=2, block="srin"), seed=1)
        model.head[0].data[:] = 0.0
        model.head[1].data[:] = 0.0
        s = sample_inputs()
        out = unet_forward(model, s.composite, s.mask, s.semantic)
        assert np.array_equal(out.pixels, s.composite.pixels)

    def test_zero_mask_returns_composite(self):
        model = GeneratorModel.build(UNetConfig(size=32, stages=2, block="rain"), seed=2)
        s = sample_inputs()
        empty = Mask(np.zeros((32, 32), dtype=np.uint8))
        out = unet_forward(model, s.composite, empty, s.semantic)
        assert np.array_equal(out.pixels, s.composite.pixels)

    def test_background_identity_for_any_parameters(self):
        for block in ("none", "rain", "srin"):
            model = GeneratorModel.build(UNetConfig(size=32, stages=2, block=block), seed=3)
            s = sample_inputs(seed=4)
            out = unet_forward(model, s.composite, s.mask, s.semantic)
            bg = ~s.mask.values.astype(bool)
            assert np.array_equal(out.pixels[bg], s.composite.pixels[bg])

    def test_forward_is_deterministic(self):
        model = GeneratorModel.build(UNetConfig(size=32, stages=2, block="srin"), seed=5)
        s = sample_inputs(seed=6)
        a = unet_forward(model, s.composite, s.mask, s.semantic)
        b = unet_forward(model, s.composite, s.mask, s.semantic)
        assert np.array_equal(a.pixels, b.pixels)

    def test_same_seed_builds_identical_models(self):
        cfg = UNetConfig(size=32, stages=2, block="srin")
        m1 = GeneratorModel.build(cfg, seed=7)
        m2 = GeneratorModel.build(cfg, seed=7)
        for (n1, t1), (n2, t2) in zip(m1.named_parameters(), m2.named_parameters()):
            assert n1 == n2
            assert np.array_equal(t1.data, t2.data)

    def test_size_mismatch_raises(self):
        model = GeneratorModel.build(UNetConfig(size=64), seed=0)
        s = sample_inputs(size=32)
        with pytest.raises(ShapeError):
            unet_forward(model, s.composite, s.mask, s.semantic)

    def test_output_in_unit_range(self):
        model = GeneratorModel.build(UNetConfig(size=32, stages=2, block="none"), seed=8)
        s = sample_inputs(seed=9)
        out = unet_forward(model, s.composite, s.mask, s.semantic)
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0


class TestResampling:
    def test_mask_downsample_keeps_binary(self):
        rng = np.random.default_rng(0)
        mask = (rng.uniform(size=(32, 32)) < 0.5).astype(np.float64)
        small = downsample_mask(mask, 8)
        assert small.shape == (8, 8)
        assert set(np.unique(small)) <= {0.0, 1.0}

    def test_site_takes_nearest_source_pixel(self):
        mask = np.zeros((8, 8))
        mask[2:4, 2:4] = 1.0  # factor 4: site (0,0) samples source (2,2)
        small = downsample_mask(mask, 2)
        assert small[0, 0] == 1.0
        assert small[1, 1] == 0.0

    def test_planar_downsample_keeps_flat_colors(self):
        sem = np.zeros((3, 16, 16))
        sem[:, :8] = np.array([0.25, 0.5, 0.75])[:, None, None]
        small = downsample_planar(sem, 4)
        values = {tuple(small[:, y, x]) for y in range(4) for x in range(4)}
        assert values <= {(0.25, 0.5, 0.75), (0.0, 0.0, 0.0)}


class TestParamCount:
    @pytest.mark.parametrize(
        "config",
        [
            UNetConfig(size=16, stages=1, base_channels=4, block="srin"),
            UNetConfig(size=32, stages=2, base_channels=16, block="none"),
            UNetConfig(size=64, stages=3, base_channels=16, block="srin"),
            UNetConfig(size=64, stages=3, base_channels=16, block="rain"),
        ],
    )
    def test_matches_hand_formula(self, config):
        model = GeneratorModel.build(config, seed=0)
        assert model.param_count() == formula_param_count(config)

    def test_rain_and_none_have_equal_counts(self):
        rain = GeneratorModel.build(UNetConfig(size=32, stages=2, block="rain"), seed=0)
        none = GeneratorModel.build(UNetConfig(size=32, stages=2, block="none"), seed=0)
        assert rain.param_count() == none.param_count()


class TestCheckpoints:
    def test_roundtrip_is_bit_exact(self, tmp_path):
        model = GeneratorModel.build(UNetConfig(size=32, stages=2, block="srin"), seed=10)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        back = load_checkpoint(path)
        assert back.config == model.config
        for (n1, t1), (n2, t2) in zip(model.named_parameters(), back.named_parameters()):
            assert n1 == n2
            assert np.array_equal(t1.data, t2.data)
        s = sample_inputs()
        a = unet_forward(model, s.composite, s.mask, s.semantic)
        b = unet_forward(back, s.composite, s.mask, s.semantic)
        assert np.array_equal(a.pixels, b.pixels)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"JUNKxxxx")
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncation_names_tensor_index(self, tmp_path):
        model = GeneratorModel.build(UNetConfig(size=32, stages=2, block="none"), seed=11)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError, match=r"tensor \d+"):
            load_checkpoint(path)

    def test_config_mismatch_rejected(self, tmp_path):
        model = GeneratorModel.build(UNetConfig(size=32, stages=2, block="srin"), seed=12)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        with pytest.raises(CheckpointError, match="does not match"):
            load_checkpoint(path, expected_config=UNetConfig(size=32, stages=2, block="rain"))

    def test_trailing_bytes_rejected(self, tmp_path):
        model = GeneratorModel.build(UNetConfig(size=32, stages=2, block="none"), seed=13)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)
