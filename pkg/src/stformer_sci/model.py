"""STFormer: token generation, spatial-temporal transformer blocks, video reconstruction.

Token fields are ``(batch, D, H, W, C)`` tensors with ``D`` the number of
frames. Weights live in a flat ``name -> Tensor`` mapping; each sub-network
reads the entries under its own prefix.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from . import forward as fwd
from .tensor import (
    Tensor,
    ShapeError,
    add,
    concat,
    conv3d,
    conv3d_transposed,
    getitem,
    layer_norm,
    leaky_relu,
    matmul,
    mul,
    no_grad,
    pad,
    permute,
    reshape,
    roll,
    softmax,
    take,
)

PRESETS = {
    "S": dict(channels=64, blocks_per_stage=(2, 2, 2, 2), heads=2),
    "B": dict(channels=256, blocks_per_stage=(2, 2, 2, 2), heads=8),
    "L": dict(channels=256, blocks_per_stage=(4, 4, 4, 4), heads=8),
}

MASK_VALUE = -1e9


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    channels: int = 64
    blocks_per_stage: tuple = (2, 2, 2, 2)
    heads: int = 2
    window: tuple = (7, 7)
    frames: int = 8
    in_channels: int = 1
    out_channels: int = 1
    slope: float = 0.1
    dtype: str = "float32"

    def __post_init__(self):
        self.blocks_per_stage = tuple(int(b) for b in self.blocks_per_stage)
        self.window = tuple(int(g) for g in self.window)

    @classmethod
    def preset(cls, name: str, **overrides) -> ModelConfig:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    @classmethod
    def from_dict(cls, d: Mapping) -> ModelConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks_per_stage"] = list(self.blocks_per_stage)
        d["window"] = list(self.window)
        return d

    @property
    def num_blocks(self) -> int:
        return sum(self.blocks_per_stage)

    @property
    def color(self) -> bool:
        return self.in_channels == 4

    @property
    def tg_channels(self) -> list[int]:
        c = self.channels
        return [self.in_channels, c // 4, c // 4, c // 2, c // 2, c]

    def validate(self):
        c, n = self.channels, self.heads
        if c < 4 or c % 4:
            raise ConfigError(f"channels must be a positive multiple of 4, got {c}")
        if n < 1 or c % (2 * n):
            raise ConfigError(f"channels {c} must be divisible by 2*heads ({2 * n})")
        if len(self.window) != 2 or min(self.window) < 1:
            raise ConfigError(f"window must be two positive extents, got {self.window}")
        if self.frames < 1 or self.num_blocks < 1:
            raise ConfigError("frames and block count must be >= 1")
        if self.in_channels not in (1, 4):
            raise ConfigError("in_channels must be 1 (grayscale) or 4 (Bayer quads)")
        if self.out_channels not in (1, 3):
            raise ConfigError("out_channels must be 1 or 3")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        return self


# -- parameters ------------------------------------------------------------------------
def _param_specs(cfg: ModelConfig):
    """Yield (name, shape, init) for every learnable tensor."""
    c, n, (gh, gw), d = cfg.channels, cfg.heads, cfg.window, cfg.frames
    half = c // 2
    chans = cfg.tg_channels
    for i in range(5):
        yield f"tg.{i}.w", (3, 3, 3, chans[i], chans[i + 1]), "conv"
        yield f"tg.{i}.b", (chans[i + 1],), "zeros"
    for z in range(cfg.num_blocks):
        pre = f"blocks.{z}"
        yield f"{pre}.norm1.g", (c,), "ones"
        yield f"{pre}.norm1.b", (c,), "zeros"
        for name in ("wq", "wk", "wv", "wp"):
            yield f"{pre}.ssa.{name}", (c, c), "trunc"
        yield f"{pre}.ssa.bias_table", ((2 * gh - 1) * (2 * gw - 1), n), "zeros"
        for name in ("wq", "wk", "wv"):
            yield f"{pre}.tsa.{name}", (c, half), "trunc"
        yield f"{pre}.tsa.wp", (half, c), "trunc"
        yield f"{pre}.tsa.bias_table", (2 * d - 1, n), "zeros"
        yield f"{pre}.norm2.g", (c,), "ones"
        yield f"{pre}.norm2.b", (c,), "zeros"
        for r in ("r1", "r2"):
            for k in ("c1", "c2"):
                yield f"{pre}.grff.{r}.{k}.w", (3, 3, 3, half, half), "conv"
                yield f"{pre}.grff.{r}.{k}.b", (half,), "zeros"
    yield "vr.up.w", (1, 4, 4, c, c), "conv"
    yield "vr.up.b", (c,), "zeros"
    yield "vr.c1.w", (3, 3, 3, c, half), "conv"
    yield "vr.c1.b", (half,), "zeros"
    yield "vr.c2.w", (3, 3, 3, half, cfg.out_channels), "conv"
    yield "vr.c2.b", (cfg.out_channels,), "zeros"


def _truncated_normal(rng, shape, std=0.02):
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def _init(rng, shape, kind):
    if kind == "zeros":
        return np.zeros(shape)
    if kind == "ones":
        return np.ones(shape)
    if kind == "trunc":
        return _truncated_normal(rng, shape)
    fan_in = int(np.prod(shape[:3])) * shape[3]
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ModelParams:
    """All learnable tensors of one STFormer, keyed by dotted name."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def scope(self, prefix: str) -> dict[str, Tensor]:
        cut = len(prefix) + 1
        return {k[cut:]: v for k, v in self.tensors.items() if k.startswith(prefix + ".")}

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    @classmethod
    def from_state(cls, config: ModelConfig, arrays: Mapping[str, np.ndarray]) -> ModelParams:
        config.validate()
        expected = {name: shape for name, shape, _ in _param_specs(config)}
        if set(arrays) != set(expected):
            missing, extra = set(expected) - set(arrays), set(arrays) - set(expected)
            raise ConfigError(f"parameter set mismatch; missing={sorted(missing)[:5]} extra={sorted(extra)[:5]}")
        tensors = {}
        for name, shape in expected.items():
            arr = np.asarray(arrays[name])
            if arr.shape != tuple(shape):
                raise ShapeError(f"{name}: stored {arr.shape}, expected {tuple(shape)}")
            tensors[name] = Tensor(arr.astype(config.dtype), requires_grad=True)
        return cls(config, tensors)


def build_model(config: ModelConfig, seed: int = 0) -> ModelParams:
    config.validate()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape, kind in _param_specs(config):
        tensors[name] = Tensor(_init(rng, shape, kind).astype(config.dtype), requires_grad=True)
    return ModelParams(config, tensors)


# -- window geometry --------------------------------------------------------------------
class WindowGeometry(NamedTuple):
    batch: int
    frames: int
    height: int
    width: int
    padded_height: int
    padded_width: int
    window: tuple
    shift: tuple


def _as5(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 4:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 5:
        raise ShapeError(f"token field must be (D,H,W,C) or (batch,D,H,W,C), got {x.shape}")
    return x, False


def window_partition(x: Tensor, gh: int, gw: int, shift=(0, 0)) -> tuple[Tensor, WindowGeometry]:
    """Group a token field into ``(L, gh*gw, C)`` non-overlapping windows.

    H and W are zero-padded up to window multiples first. A nonzero ``shift``
    rolls the field by ``(-s_h, -s_w)`` before grouping; an axis that fits in
    a single window is never shifted.
    """
    x5, _ = _as5(x)
    bt, d, h, w, c = x5.shape
    hp, wp = -(-h // gh) * gh, -(-w // gw) * gw
    if (hp, wp) != (h, w):
        x5 = pad(x5, ((0, 0), (0, 0), (0, hp - h), (0, wp - w), (0, 0)))
    sh = shift[0] if hp > gh else 0
    sw = shift[1] if wp > gw else 0
    if not (0 <= sh < gh and 0 <= sw < gw):
        raise ShapeError(f"shift {shift} must lie in [0, window)")
    if sh or sw:
        x5 = roll(x5, (-sh, -sw), (2, 3))
    t = reshape(x5, (bt, d, hp // gh, gh, wp // gw, gw, c))
    t = permute(t, (0, 1, 2, 4, 3, 5, 6))
    windows = reshape(t, (-1, gh * gw, c))
    return windows, WindowGeometry(bt, d, h, w, hp, wp, (gh, gw), (sh, sw))


def window_reverse(windows: Tensor, geo: WindowGeometry, squeeze: bool = False) -> Tensor:
    gh, gw = geo.window
    c = windows.shape[-1]
    t = reshape(windows, (geo.batch, geo.frames, geo.padded_height // gh,
                          geo.padded_width // gw, gh, gw, c))
    t = permute(t, (0, 1, 2, 4, 3, 5, 6))
    t = reshape(t, (geo.batch, geo.frames, geo.padded_height, geo.padded_width, c))
    if geo.shift != (0, 0):
        t = roll(t, geo.shift, (2, 3))
    if (geo.padded_height, geo.padded_width) != (geo.height, geo.width):
        t = getitem(t, (slice(None), slice(None), slice(0, geo.height), slice(0, geo.width)))
    if squeeze:
        t = reshape(t, t.shape[1:])
    return t


def spatial_relative_index(gh: int, gw: int) -> np.ndarray:
    coords = np.stack(np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    return (rel[0] + gh - 1) * (2 * gw - 1) + (rel[1] + gw - 1)


def temporal_relative_index(d: int) -> np.ndarray:
    i = np.arange(d)
    return i[:, None] - i[None, :] + d - 1


def shift_attention_mask(hp: int, wp: int, window, shift) -> np.ndarray:
    """``(num_windows, J, J)`` additive mask; blocks pairs that wrapped across the roll."""
    gh, gw = window
    sh, sw = shift
    region = np.zeros((hp, wp), dtype=np.int64)
    hs = [slice(0, hp - gh), slice(hp - gh, hp - sh), slice(hp - sh, hp)] if sh else [slice(0, hp)]
    ws = [slice(0, wp - gw), slice(wp - gw, wp - sw), slice(wp - sw, wp)] if sw else [slice(0, wp)]
    label = 0
    for a in hs:
        for b in ws:
            region[a, b] = label
            label += 1
    per_window = region.reshape(hp // gh, gh, wp // gw, gw).transpose(0, 2, 1, 3).reshape(-1, gh * gw)
    differ = per_window[:, :, None] != per_window[:, None, :]
    return np.where(differ, MASK_VALUE, 0.0)


# -- attention branches --------------------------------------------------------------------
def _heads(t: Tensor, n: int) -> Tensor:
    # (S, T, C) -> (S, n, T, C/n)
    s, length, c = t.shape
    return permute(reshape(t, (s, length, n, c // n)), (0, 2, 1, 3))


def _merge_heads(t: Tensor) -> Tensor:
    s, n, length, dh = t.shape
    return reshape(permute(t, (0, 2, 1, 3)), (s, length, n * dh))


def _attend(q, k, v, bias, extra_mask=None, probe=None):
    scale = 1.0 / math.sqrt(q.shape[-1])
    logits = mul(matmul(q, permute(k, (0, 1, 3, 2))), scale)
    logits = add(logits, bias)
    if extra_mask is not None:
        logits = add(logits, extra_mask)
    attn = softmax(logits)
    if probe is not None:
        probe.append(attn.data)
    return matmul(attn, v)


def slw_msa(x: Tensor, w: Mapping[str, Tensor], heads: int, window=(7, 7),
            shifted: bool = False, probe: list | None = None) -> Tensor:
    """Spatial local-window multi-head self-attention with relative position bias."""
    x5, squeeze = _as5(x)
    c = x5.shape[-1]
    if c % heads:
        raise ConfigError(f"channels {c} not divisible by heads {heads}")
    gh, gw = window
    shift = (gh // 2, gw // 2) if shifted else (0, 0)
    win, geo = window_partition(x5, gh, gw, shift)
    num = win.shape[0]
    q = _heads(matmul(win, w["wq"]), heads)
    k = _heads(matmul(win, w["wk"]), heads)
    v = _heads(matmul(win, w["wv"]), heads)
    bias = permute(take(w["bias_table"], spatial_relative_index(gh, gw)), (2, 0, 1))
    mask = None
    if geo.shift != (0, 0):
        m = shift_attention_mask(geo.padded_height, geo.padded_width, window, geo.shift)
        m = np.tile(m, (geo.batch * geo.frames, 1, 1)).reshape(num, 1, gh * gw, gh * gw)
        mask = Tensor(m.astype(x5.dtype), dtype=x5.dtype)
    out = _merge_heads(_attend(q, k, v, bias, mask, probe))
    out = matmul(out, w["wp"])
    return window_reverse(out, geo, squeeze)


def tw_msa(x: Tensor, w: Mapping[str, Tensor], heads: int, probe: list | None = None) -> Tensor:
    """Temporal self-attention across the D tokens at each spatial site (width C/2)."""
    x5, squeeze = _as5(x)
    bt, d, h, wd, c = x5.shape
    half = w["wq"].shape[1]
    if half % heads:
        raise ConfigError(f"temporal width {half} not divisible by heads {heads}")
    if w["bias_table"].shape[0] != 2 * d - 1:
        raise ConfigError(f"temporal bias table built for D={(w['bias_table'].shape[0] + 1) // 2}, got D={d}")
    seq = reshape(permute(x5, (0, 2, 3, 1, 4)), (bt * h * wd, d, c))
    q = _heads(matmul(seq, w["wq"]), heads)
    k = _heads(matmul(seq, w["wk"]), heads)
    v = _heads(matmul(seq, w["wv"]), heads)
    bias = permute(take(w["bias_table"], temporal_relative_index(d)), (2, 0, 1))
    out = matmul(_merge_heads(_attend(q, k, v, bias, None, probe)), w["wp"])
    out = permute(reshape(out, (bt, h, wd, d, c)), (0, 3, 1, 2, 4))
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out


def _resnet(x: Tensor, w: Mapping[str, Tensor], prefix: str, slope: float) -> Tensor:
    y = conv3d(x, w[f"{prefix}.c1.w"], w[f"{prefix}.c1.b"], 1, 1)
    y = conv3d(leaky_relu(y, slope), w[f"{prefix}.c2.w"], w[f"{prefix}.c2.b"], 1, 1)
    return add(x, y)


def grff(x: Tensor, w: Mapping[str, Tensor], slope: float = 0.1) -> Tensor:
    """Grouping resnet feed-forward: split channels, chain two residual conv units."""
    c = x.shape[-1]
    if c % 2:
        raise ConfigError(f"GRFF needs an even channel count, got {c}")
    lead = (slice(None),) * (x.ndim - 1)
    xs1 = getitem(x, lead + (slice(0, c // 2),))
    xs2 = getitem(x, lead + (slice(c // 2, c),))
    yr1 = _resnet(xs1, w, "r1", slope)
    yr2 = _resnet(add(xs2, yr1), w, "r2", slope)
    return concat([yr1, yr2], axis=-1)


def _subscope(w: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    cut = len(prefix) + 1
    return {k[cut:]: v for k, v in w.items() if k.startswith(prefix + ".")}


def stformer_block(x: Tensor, w: Mapping[str, Tensor], cfg: ModelConfig,
                   shifted: bool = False, probe: dict | None = None) -> Tensor:
    xu = layer_norm(x, w["norm1.g"], w["norm1.b"])
    xs = slw_msa(xu, _subscope(w, "ssa"), cfg.heads, cfg.window, shifted,
                 None if probe is None else probe.setdefault("ssa", []))
    xt = tw_msa(xu, _subscope(w, "tsa"), cfg.heads,
                None if probe is None else probe.setdefault("tsa", []))
    xst = add(x, add(xs, xt))
    xg = grff(layer_norm(xst, w["norm2.g"], w["norm2.b"]), _subscope(w, "grff"), cfg.slope)
    return add(xst, xg)


# -- stem and head ------------------------------------------------------------------------
def token_gen(xhat: Tensor, w: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Five 3x3x3 convs with LeakyReLU; grayscale input is halved spatially by the first."""
    x5, _ = _as5(xhat)
    if not cfg.color and (x5.shape[2] % 2 or x5.shape[3] % 2):
        raise ShapeError(f"spatial extents must be even, got {x5.shape[2:4]}")
    t = x5
    for i in range(5):
        stride = (1, 2, 2) if (i == 0 and not cfg.color) else 1
        t = leaky_relu(conv3d(t, w[f"{i}.w"], w[f"{i}.b"], stride, 1), cfg.slope)
    return t


def video_reconstruct(t: Tensor, w: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Transposed conv (x2 in H, W) then two 3x3x3 convs down to ``out_channels``."""
    x5, _ = _as5(t)
    y = conv3d_transposed(x5, w["up.w"], w["up.b"], (1, 2, 2), (0, 1, 1))
    y = leaky_relu(y, cfg.slope)
    y = leaky_relu(conv3d(y, w["c1.w"], w["c1.b"], 1, 1), cfg.slope)
    return conv3d(y, w["c2.w"], w["c2.b"], 1, 1)


def network(params: ModelParams, xhat) -> Tensor:
    """Differentiable path: ``(batch, B, n, m, IC)`` estimate -> ``(batch, B, n', m', OC)`` video."""
    cfg = params.config
    if not isinstance(xhat, Tensor):
        xhat = Tensor(np.asarray(xhat, dtype=cfg.dtype), dtype=cfg.dtype)
    if xhat.shape[-1] != cfg.in_channels:
        raise ShapeError(f"estimate has {xhat.shape[-1]} channels, model expects {cfg.in_channels}")
    t = token_gen(xhat, params.scope("tg"), cfg)
    for z in range(cfg.num_blocks):
        t = stformer_block(t, params.scope(f"blocks.{z}"), cfg, shifted=bool(z % 2))
    return video_reconstruct(t, params.scope("vr"), cfg)


def cube_to_field(cube: np.ndarray) -> np.ndarray:
    """``(n_x, n_y, C, B)`` or batched ``(N, n_x, n_y, C, B)`` -> ``(N, B, n_x, n_y, C)``."""
    cube = np.asarray(cube)
    if cube.ndim == 4:
        cube = cube[None]
    return np.ascontiguousarray(cube.transpose(0, 4, 1, 2, 3))


def field_to_cube(field: np.ndarray) -> np.ndarray:
    """Inverse of :func:`cube_to_field` (batch axis kept)."""
    return np.ascontiguousarray(np.asarray(field).transpose(0, 2, 3, 4, 1))


def prepare_input(y, masks, cfg: ModelConfig) -> np.ndarray:
    """Measurement and masks -> network input field ``(1, B, ., ., IC)``."""
    mask = masks.values if isinstance(masks, fwd.MaskCube) else np.asarray(masks)
    if mask.shape[2] != cfg.frames:
        raise ConfigError(f"model trained for B={cfg.frames}, masks have B={mask.shape[2]}")
    est = fwd.init_estimate(y, mask, color=cfg.color)
    return cube_to_field(est.astype(cfg.dtype))


def stformer_forward(y, masks, params: ModelParams) -> np.ndarray:
    """Inference: returns the reconstructed cube ``(n_x, n_y, OC, B)``."""
    with no_grad():
        out = network(params, prepare_input(y, masks, params.config))
    return field_to_cube(out.data)[0]
