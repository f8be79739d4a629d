import json

import numpy as np
import pytest

from stformer_sci import io
from stformer_sci.forward import gen_masks
from stformer_sci.model import ConfigError, ModelConfig, build_model
from stformer_sci.pipeline import (
    Augment,
    Stage,
    TrainConfig,
    TrainingError,
    augment_clip,
    encode_video,
    load_checkpoint,
    load_dataset,
    load_video,
    reconstruct,
    save_checkpoint,
    synthetic_video,
    train,
)

MICRO = {"channels": 8, "blocks_per_stage": [2], "heads": 2, "frames": 2, "dtype": "float64"}


def micro_config(tmp_path, **kw):
    base = dict(preset="custom", model=dict(MICRO), stages=[Stage(16, 1, 1e-3)], steps_per_epoch=2,
                augment=Augment(False, False, False), dataset="synthetic", out_dir=str(tmp_path / "run"))
    return TrainConfig(**{**base, **kw})


class TestTrainConfig:
    def test_json_round_trip(self):
        cfg = TrainConfig(preset="B", model={"frames": 4}, stages=[Stage(64, 3, 2e-4)], seed=5,
                          augment=Augment(True, False, True, (0.9, 1.1)), random_masks=True)
        assert TrainConfig.from_json(cfg.to_json()) == cfg

    def test_defaults_round_trip(self):
        assert TrainConfig.from_json(TrainConfig().to_json()) == TrainConfig()

    @pytest.mark.parametrize("bad", [{"epochs": 3}, {"stages": [{"spatial": 32, "epochs": 1, "lr": 1e-3, "x": 1}]},
                                     {"augment": {"rotate": True}}])
    def test_unknown_keys(self, bad):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict(bad)

    def test_unknown_model_key(self):
        with pytest.raises(ConfigError):
            TrainConfig(model={"depth": 2}).model_config()

    def test_preset_override(self):
        assert TrainConfig(preset="B", model={"frames": 4}).model_config().frames == 4

    @pytest.mark.parametrize("stage", [dict(spatial=31, epochs=1, lr=1e-3), dict(spatial=32, epochs=-1, lr=1e-3),
                                       dict(spatial=32, epochs=1, lr=0.0)])
    def test_invalid_stage(self, stage):
        with pytest.raises(ConfigError):
            Stage(**stage)

    def test_stage_order(self):
        with pytest.raises(ConfigError):
            TrainConfig(stages=[Stage(256, 1, 1e-4), Stage(128, 1, 1e-4)])

    def test_digest_tracks_content(self):
        assert TrainConfig().digest() == TrainConfig().digest()
        assert TrainConfig(seed=1).digest() != TrainConfig().digest()

    def test_toy_file_parses(self):
        from pathlib import Path

        text = (Path(__file__).parents[1] / "configs" / "toy.json").read_text()
        cfg = TrainConfig.from_json(text)
        assert cfg.model_config().channels == 16 and cfg.steps_per_epoch == 500


class TestData:
    def test_synthetic_range(self):
        v = synthetic_video(16, 4)
        assert v.shape == (16, 16, 1, 4) and 0 <= v.min() and v.max() <= 1
        assert synthetic_video(8, 2, color=True).shape == (8, 8, 3, 2)

    def test_load_frames_directory(self, tmp_path, rng):
        frames = rng.integers(0, 256, (3, 6, 5), dtype=np.uint8)
        for f in range(3):
            io.write_pnm(tmp_path / f"f{f:02d}.pgm", frames[f])
        v = load_video(tmp_path)
        assert v.shape == (6, 5, 1, 3)
        np.testing.assert_allclose(v[:, :, 0, 2], frames[2] / 255.0)

    def test_load_stf1_gray(self, tmp_path, rng):
        cube = rng.random((4, 4, 6)).astype(np.float32)
        io.write_stf1(tmp_path / "c.stf", cube)
        assert load_video(tmp_path / "c.stf").shape == (4, 4, 1, 6)
        assert len(load_dataset(tmp_path)) == 1

    def test_missing_dataset(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope")
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path)

    def test_augment_shapes(self, rng):
        clip = synthetic_video(40, 6)
        out = augment_clip(clip, 4, 32, Augment(), rng)
        assert out.shape == (32, 32, 1, 4) and 0 <= out.min() and out.max() <= 1

    def test_augment_off_is_center(self, rng):
        clip = synthetic_video(32, 4)
        np.testing.assert_array_equal(augment_clip(clip, 4, 32, Augment(False, False, False), rng), clip)

    def test_augment_short_clip(self, rng):
        with pytest.raises(TrainingError):
            augment_clip(synthetic_video(16, 2), 4, 16, Augment(), rng)


class TestEncodeVideo:
    def test_four_measurements(self, rng):
        ys = encode_video(rng.random((16, 16, 32)), gen_masks(16, 16, 8, 0).values)
        assert ys.shape == (16, 16, 4)

    def test_single(self, rng):
        assert encode_video(rng.random((16, 16, 8)), gen_masks(16, 16, 8, 0).values).shape == (16, 16)

    def test_deterministic(self, rng):
        v, m = rng.random((8, 8, 8)), gen_masks(8, 8, 4, 0).values
        assert encode_video(v, m).tobytes() == encode_video(v, m).tobytes()

    def test_not_multiple(self, rng):
        with pytest.raises(ValueError):
            encode_video(rng.random((8, 8, 6)), gen_masks(8, 8, 4, 0).values)

    def test_color(self, rng):
        y = encode_video(rng.random((8, 8, 3, 8)), gen_masks(8, 8, 4, 0).values, color=True)
        assert y.shape == (8, 8, 2)


class TestTrain:
    def test_zero_epochs_keeps_init(self, tmp_path):
        cfg = micro_config(tmp_path, stages=[Stage(16, 0, 1e-3)])
        params, manifest = train(cfg)
        init = build_model(cfg.model_config(), cfg.seed)
        stored = load_checkpoint(manifest.checkpoint)
        assert all(np.array_equal(stored[k].data, init[k].data) for k in init.tensors)
        assert manifest.loss_curve == []

    def test_same_seed_same_curve(self, tmp_path):
        _, a = train(micro_config(tmp_path / "a", random_masks=True))
        _, b = train(micro_config(tmp_path / "b", random_masks=True))
        assert a.loss_curve == b.loss_curve and len(a.loss_curve) == 1
        assert a.report == b.report

    def test_loss_decreases(self, tmp_path):
        _, m = train(micro_config(tmp_path, stages=[Stage(16, 4, 3e-3)], steps_per_epoch=5))
        assert m.loss_curve[-1] < m.loss_curve[0]

    def test_manifest_written(self, tmp_path):
        _, m = train(micro_config(tmp_path))
        on_disk = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert on_disk["config_hash"] == micro_config(tmp_path).digest()
        assert set(on_disk["report"]) == {"psnr_db", "ssim", "mean_psnr_db", "mean_ssim"}

    def test_channel_mismatch(self, tmp_path):
        with pytest.raises(TrainingError):
            train(micro_config(tmp_path), clips=[synthetic_video(16, 2, color=True)])

    def test_no_dataset(self, tmp_path):
        with pytest.raises(ConfigError):
            train(micro_config(tmp_path, dataset=""))

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_non_finite_aborts(self, tmp_path):
        cfg = micro_config(tmp_path)
        params = build_model(cfg.model_config(), 0)
        params["tg.0.w"].data[:] = 1e300
        with pytest.raises(TrainingError, match="non-finite"):
            train(cfg, params=params)


@pytest.fixture(scope="module")
def gray():
    return build_model(ModelConfig(**MICRO), 0)


class TestReconstruct:
    def test_single(self, gray, rng):
        out = reconstruct(rng.random((16, 16)), gen_masks(16, 16, 2, 0).values, gray)
        assert out.shape == (16, 16, 1, 2)

    def test_stack(self, gray, rng):
        out = reconstruct(rng.random((16, 16, 3)), gen_masks(16, 16, 2, 0).values, gray)
        assert out.shape == (16, 16, 1, 6)

    def test_color(self, rng):
        params = build_model(ModelConfig(**{**MICRO, "in_channels": 4, "out_channels": 3}), 0)
        assert reconstruct(rng.random((16, 16)), gen_masks(16, 16, 2, 0).values, params).shape == (16, 16, 3, 2)

    def test_checkpoint_round_trip(self, gray, tmp_path, rng):
        save_checkpoint(tmp_path / "m.stfc", gray)
        again = load_checkpoint(tmp_path / "m.stfc")
        y, m = rng.random((16, 16)), gen_masks(16, 16, 2, 0).values
        assert reconstruct(y, m, again).tobytes() == reconstruct(y, m, gray).tobytes()
