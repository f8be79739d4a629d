"""Training and end-to-end workflows: config parsing, data loading, staged Adam training."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import forward as fwd
from . import io
from .metrics import QualityReport, eval_dataset
from .model import ConfigError, ModelConfig, ModelParams, build_model, cube_to_field, network, prepare_input, stformer_forward
from .optim import Adam
from .tensor import Tensor, backward, mse_loss

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class Stage:
    spatial: int
    epochs: int
    lr: float

    def __post_init__(self):
        if self.spatial < 2 or self.spatial % 2:
            raise ConfigError(f"stage spatial size must be even and >= 2, got {self.spatial}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")


@dataclass
class Augment:
    hflip: bool = True
    scale: bool = True
    crop: bool = True
    scale_range: tuple = (0.8, 1.2)


_DEFAULT_STAGES = [Stage(128, 100, 1e-4), Stage(256, 20, 1e-5)]


@dataclass
class TrainConfig:
    preset: str = "S"
    model: dict = field(default_factory=dict)
    stages: list = field(default_factory=lambda: list(_DEFAULT_STAGES))
    batch_size: int = 1
    steps_per_epoch: int | None = None
    seed: int = 0
    dataset: str = ""
    augment: Augment = field(default_factory=Augment)
    mask_seed: int = 0
    random_masks: bool = False
    sigma: float = 0.0
    out_dir: str = "run"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        sizes = [s.spatial for s in self.stages]
        if sizes != sorted(sizes):
            raise ConfigError("stages must be ordered by increasing spatial size")

    def model_config(self) -> ModelConfig:
        if self.preset == "custom":
            cfg = ModelConfig.from_dict(self.model)
        else:
            unknown = set(self.model) - set(ModelConfig.__dataclass_fields__)
            if unknown:
                raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
            cfg = ModelConfig.preset(self.preset, **self.model)
        return cfg.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"]["scale_range"] = list(self.augment.scale_range)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "stages" in d:
            stages = []
            for s in d["stages"]:
                extra = set(s) - {"spatial", "epochs", "lr"}
                if extra:
                    raise ConfigError(f"unknown stage keys: {sorted(extra)}")
                stages.append(Stage(**s))
            d["stages"] = stages
        if "augment" in d:
            extra = set(d["augment"]) - set(Augment.__dataclass_fields__)
            if extra:
                raise ConfigError(f"unknown augment keys: {sorted(extra)}")
            aug = dict(d["augment"])
            if "scale_range" in aug:
                aug["scale_range"] = tuple(aug["scale_range"])
            d["augment"] = Augment(**aug)
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> TrainConfig:
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    checkpoint: str
    loss_curve: list
    report: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


# -- data ---------------------------------------------------------------------------------
def _normalize(arr: np.ndarray) -> np.ndarray:
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64)


def load_video(path) -> np.ndarray:
    """Load a clip as ``(n_x, n_y, C, F)`` floats in [0, 1].

    ``path`` is an STF1 file (3-D grayscale or 4-D cube) or a directory of
    binary PGM/PPM frames read in name order.
    """
    path = Path(path)
    if path.is_dir():
        frames = sorted(p for p in path.iterdir() if p.suffix.lower() in (".pgm", ".ppm"))
        if not frames:
            raise FileNotFoundError(f"no .pgm/.ppm frames in {path}")
        imgs = [io.read_pnm(p) for p in frames]
        imgs = [im[:, :, None] if im.ndim == 2 else im for im in imgs]
        return _normalize(np.stack(imgs, axis=-1))
    return fwd.as_cube(_normalize(io.read_stf1(path)))


def load_dataset(path) -> list[np.ndarray]:
    root = Path(path)
    if not root.exists():
        raise FileNotFoundError(f"dataset not found: {root}")
    if root.is_file():
        return [load_video(root)]
    entries = sorted(p for p in root.iterdir() if p.is_dir() or p.suffix.lower() in (".stf", ".stf1"))
    if not entries:
        raise FileNotFoundError(f"dataset {root} holds no STF1 cubes or frame directories")
    return [load_video(p) for p in entries]


def synthetic_video(n: int = 32, frames: int = 4, color: bool = False) -> np.ndarray:
    """Smooth drifting texture plus a moving Gaussian blob, ``(n, n, C, frames)`` in [0, 1]."""
    yy, xx = np.mgrid[0:n, 0:n] / n
    out = []
    for f in range(frames):
        t = f / frames
        img = 0.5 + 0.25 * np.sin(2 * np.pi * (xx + 0.3 * t)) * np.cos(2 * np.pi * (yy - 0.2 * t))
        img = img + 0.3 * np.exp(-((xx - 0.3 - 0.3 * t) ** 2 + (yy - 0.5) ** 2) / 0.01)
        if color:
            img = np.stack([img, 0.8 * img + 0.1, 1.0 - 0.6 * img], axis=-1)
        else:
            img = img[:, :, None]
        out.append(img)
    return np.clip(np.stack(out, axis=-1), 0.0, 1.0)


def augment_clip(clip: np.ndarray, frames: int, size: int, aug: Augment, rng) -> np.ndarray:
    """Random temporal window, flip, scale and crop to ``(size, size, C, frames)``."""
    total = clip.shape[3]
    if total < frames:
        raise TrainingError(f"clip has {total} frames, need {frames}")
    start = int(rng.integers(0, total - frames + 1))
    x = clip[:, :, :, start:start + frames]
    if aug.hflip and rng.random() < 0.5:
        x = x[:, ::-1]
    factor = float(rng.uniform(*aug.scale_range)) if aug.scale else 1.0
    factor = max(factor, size / x.shape[0], size / x.shape[1])
    if factor != 1.0:
        x = ndimage.zoom(x, (factor, factor, 1, 1), order=1)
    if aug.crop:
        i = int(rng.integers(0, x.shape[0] - size + 1))
        j = int(rng.integers(0, x.shape[1] - size + 1))
    else:
        i, j = (x.shape[0] - size) // 2, (x.shape[1] - size) // 2
    return np.clip(x[i:i + size, j:j + size], 0.0, 1.0)


def center_clip(clip: np.ndarray, frames: int, size: int) -> np.ndarray:
    factor = max(1.0, size / clip.shape[0], size / clip.shape[1])
    x = clip[:, :, :, :frames]
    if factor != 1.0:
        x = ndimage.zoom(x, (factor, factor, 1, 1), order=1)
    i, j = (x.shape[0] - size) // 2, (x.shape[1] - size) // 2
    return x[i:i + size, j:j + size]


def _simulate(clip, masks, cfg: ModelConfig, sigma, noise_seed):
    meas = fwd.encode(clip, masks, sigma, noise_seed, color=cfg.color)
    return prepare_input(meas, masks, cfg)[0]


# -- training -------------------------------------------------------------------------------
def save_checkpoint(path, params: ModelParams):
    io.write_checkpoint(path, params.state_dict(), params.config.to_dict())


def load_checkpoint(path) -> ModelParams:
    config, arrays = io.read_checkpoint(path)
    return ModelParams.from_state(ModelConfig.from_dict(config), arrays)


def train(config: TrainConfig, clips: list[np.ndarray] | None = None,
          params: ModelParams | None = None) -> tuple[ModelParams, RunManifest]:
    """Staged Adam training on MSE between reconstruction and ground truth."""
    cfg = config.model_config()
    if clips is None:
        if config.dataset == "synthetic":
            size = max((s.spatial for s in config.stages), default=32)
            clips = [synthetic_video(size, cfg.frames, cfg.color)]
        elif not config.dataset:
            raise ConfigError('no dataset given; set "dataset" to a path or "synthetic"')
        else:
            clips = load_dataset(config.dataset)
    want = 3 if cfg.color else 1
    for c in clips:
        if c.shape[2] != want:
            raise TrainingError(f"clip has {c.shape[2]} channels, model expects {want}")
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = build_model(cfg, config.seed)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "checkpoint.stfc"
    save_checkpoint(ckpt, params)
    opt = Adam(params.parameters())
    curve = []
    steps = config.steps_per_epoch or math.ceil(len(clips) / config.batch_size)
    for stage in config.stages:
        opt.state.lr = stage.lr
        fixed = fwd.gen_masks(stage.spatial, stage.spatial, cfg.frames, config.mask_seed)
        for epoch in range(stage.epochs):
            losses = []
            for _ in range(steps):
                inputs, truths = [], []
                for _ in range(config.batch_size):
                    clip = clips[int(rng.integers(len(clips)))]
                    x = augment_clip(clip, cfg.frames, stage.spatial, config.augment, rng)
                    masks = fwd.gen_masks(stage.spatial, stage.spatial, cfg.frames,
                                          int(rng.integers(2**63))) if config.random_masks else fixed
                    inputs.append(_simulate(x, masks, cfg, config.sigma, int(rng.integers(2**63))))
                    truths.append(cube_to_field(x.astype(cfg.dtype))[0])
                opt.zero_grad()
                try:
                    loss = mse_loss(network(params, np.stack(inputs)), Tensor(np.stack(truths)))
                except FloatingPointError as exc:
                    raise TrainingError(f"non-finite loss at stage {stage.spatial}, epoch {epoch}: {exc}") from exc
                backward(loss)
                opt.step()
                losses.append(float(loss.data))
            curve.append(float(np.mean(losses)))
            log.info("stage %d epoch %d loss %.6g", stage.spatial, epoch, curve[-1])
            save_checkpoint(ckpt, params)
    report = None
    if config.stages:
        size = config.stages[-1].spatial
        x = center_clip(clips[0], cfg.frames, size)
        masks = fwd.gen_masks(size, size, cfg.frames, config.mask_seed)
        meas = fwd.encode(x, masks, config.sigma, config.seed, color=cfg.color)
        report = asdict(eval_dataset(stformer_forward(meas, masks, params), x))
    manifest = RunManifest(config.digest(), config.seed, str(ckpt), curve, report)
    (out_dir / "manifest.json").write_text(manifest.to_json())
    return params, manifest


def reconstruct(measurement: np.ndarray, masks: np.ndarray, params: ModelParams) -> np.ndarray:
    """One measurement ``(n_x, n_y)`` or a stack ``(n_x, n_y, K)`` -> ``(n_x, n_y, OC, K*B)``."""
    y = np.asarray(measurement)
    if y.ndim == 2:
        return stformer_forward(y, masks, params)
    return np.concatenate([stformer_forward(y[:, :, k], masks, params) for k in range(y.shape[2])],
                          axis=3)


def encode_video(video: np.ndarray, masks: np.ndarray, sigma: float = 0.0, seed: int = 0,
                 color: bool = False) -> np.ndarray:
    """Encode each run of B consecutive frames; returns ``(n_x, n_y)`` or ``(n_x, n_y, K)``."""
    video = fwd.as_cube(video)
    b = masks.shape[2]
    total = video.shape[3]
    if total % b:
        raise ValueError(f"video length {total} is not a multiple of B={b}")
    if color and video.shape[2] != 3:
        raise ValueError("color encoding needs an RGB cube")
    ys = [fwd.encode(video[:, :, :, k * b:(k + 1) * b], masks, sigma, seed + k, color).values
          for k in range(total // b)]
    return ys[0] if len(ys) == 1 else np.stack(ys, axis=2)


def quality_report(recon, truth) -> QualityReport:
    return eval_dataset(recon, truth)
