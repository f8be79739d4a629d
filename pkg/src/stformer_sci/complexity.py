"""Closed-form attention costs and their check against instrumented MAC counts.

Counting convention: one multiply-accumulate is one unit. Softmax, norms,
residual adds, scaling and position-bias adds are not counted.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import ModelConfig, build_model, network, slw_msa, tw_msa
from .tensor import Tensor, count_macs, no_grad

# published model sizes: parameters (M) and FLOPs (G) at 256x256x8
REFERENCE = {
    "S": {"params_m": 1.22, "gflops": 193.47},
    "B": {"params_m": 19.48, "gflops": 3060.75},
    "L": {"params_m": 36.81, "gflops": 5363.98},
}


def _positive(**dims):
    for name, v in dims.items():
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v}")


def flops_slw(H, W, D, C, G_h=7, G_w=7) -> int:
    _positive(H=H, W=W, D=D, C=C, G_h=G_h, G_w=G_w)
    return 4 * H * W * D * C * C + 2 * G_h * G_w * H * W * D * C


def flops_tw(H, W, D, C) -> int:
    _positive(H=H, W=W, D=D, C=C)
    return 2 * H * W * D * C * C + H * W * D * D * C


def flops_st(H, W, D, C, G_h=7, G_w=7) -> int:
    _positive(H=H, W=W, D=D, C=C, G_h=G_h, G_w=G_w)
    return 6 * H * W * D * C * C + 2 * G_h * G_w * H * W * D * C + H * W * D * D * C


def flops_gmsa(H, W, D, C) -> int:
    _positive(H=H, W=W, D=D, C=C)
    return 4 * H * W * D * C * C + 2 * (H * W * D) ** 2 * C


@dataclass
class CostBreakdown:
    dims: dict
    analytic_macs: dict = field(default_factory=dict)
    measured_macs: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _field(D, H, W, C, seed):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal((1, D, H, W, C)), dtype=np.float64)


def _weights(shapes: dict, seed):
    rng = np.random.default_rng(seed)
    return {k: Tensor(rng.standard_normal(s) * 0.1, dtype=np.float64) for k, s in shapes.items()}


def measure_slw(H, W, D, C, heads=1, G_h=7, G_w=7, shifted=False, seed=0) -> int:
    """Run the real SLW-MSA kernel under a MAC counter and return the count."""
    _positive(H=H, W=W, D=D, C=C, heads=heads, G_h=G_h, G_w=G_w)
    w = _weights({"wq": (C, C), "wk": (C, C), "wv": (C, C), "wp": (C, C),
                  "bias_table": ((2 * G_h - 1) * (2 * G_w - 1), heads)}, seed)
    x = _field(D, H, W, C, seed + 1)
    with no_grad(), count_macs() as counter:
        slw_msa(x, w, heads, (G_h, G_w), shifted)
    return counter.total


def measure_tw(H, W, D, C, heads=1, seed=0) -> int:
    _positive(H=H, W=W, D=D, C=C, heads=heads)
    half = C // 2
    if half < 1 or half % heads:
        raise ValueError(f"C/2={half} must be a positive multiple of heads={heads}")
    w = _weights({"wq": (C, half), "wk": (C, half), "wv": (C, half), "wp": (half, C),
                  "bias_table": (2 * D - 1, heads)}, seed)
    x = _field(D, H, W, C, seed + 1)
    with no_grad(), count_macs() as counter:
        tw_msa(x, w, heads)
    return counter.total


def count_macs_attention(H, W, D, C, heads=1, G_h=7, G_w=7) -> CostBreakdown:
    """Analytic and measured costs of SLW-MSA, TW-MSA and their sum."""
    dims = dict(H=H, W=W, D=D, C=C, G_h=G_h, G_w=G_w, N=heads)
    slw, tw = measure_slw(H, W, D, C, heads, G_h, G_w), measure_tw(H, W, D, C, heads)
    return CostBreakdown(
        dims,
        analytic_macs={"slw_msa": flops_slw(H, W, D, C, G_h, G_w), "tw_msa": flops_tw(H, W, D, C),
                       "st_msa": flops_st(H, W, D, C, G_h, G_w), "g_msa": flops_gmsa(H, W, D, C)},
        measured_macs={"slw_msa": slw, "tw_msa": tw, "st_msa": slw + tw},
    )


def _conv_macs(positions, k, cin, cout):
    return positions * k * cin * cout


def network_macs(cfg: ModelConfig, n_x: int, n_y: int) -> dict:
    """Per-stage MAC totals of the full model for one measurement.

    SLW-MSA is costed on the window-padded token grid, as executed.
    """
    _positive(n_x=n_x, n_y=n_y)
    c, d, half = cfg.channels, cfg.frames, cfg.channels // 2
    gh, gw = cfg.window
    if cfg.color:
        h, w = n_x // 2, n_y // 2
    else:
        h, w = (n_x - 1) // 2 + 1, (n_y - 1) // 2 + 1
    tokens = d * h * w
    chans = cfg.tg_channels
    tg = sum(_conv_macs(tokens, 27, chans[i], chans[i + 1]) for i in range(5))
    hp, wp = -(-h // gh) * gh, -(-w // gw) * gw
    slw = flops_slw(hp, wp, d, c, gh, gw)
    tw = flops_tw(h, w, d, c)
    grff = 4 * _conv_macs(tokens, 27, half, half)
    full = d * 2 * h * 2 * w
    vr = (_conv_macs(tokens, 16, c, c) + _conv_macs(full, 27, c, half)
          + _conv_macs(full, 27, half, cfg.out_channels))
    blocks = cfg.num_blocks * (slw + tw + grff)
    return {"token_gen": tg, "slw_msa": cfg.num_blocks * slw, "tw_msa": cfg.num_blocks * tw,
            "grff": cfg.num_blocks * grff, "video_reconstruct": vr, "total": tg + blocks + vr}


def measure_network_macs(cfg: ModelConfig, n_x: int, n_y: int, seed: int = 0) -> int:
    """Instrumented MAC count of one full forward pass."""
    params = build_model(cfg, seed)
    xhat = np.zeros((1, cfg.frames, n_x, n_y, cfg.in_channels), dtype=cfg.dtype)
    if cfg.color:
        xhat = np.zeros((1, cfg.frames, n_x // 2, n_y // 2, 4), dtype=cfg.dtype)
    with no_grad(), count_macs() as counter:
        network(params, xhat)
    return counter.total


def param_count(cfg: ModelConfig) -> int:
    from .model import _param_specs

    return int(sum(np.prod(shape) for _, shape, _ in _param_specs(cfg)))


def preset_report(name: str, n_x: int = 256, n_y: int = 256, frames: int = 8) -> dict:
    cfg = ModelConfig.preset(name, frames=frames)
    macs = network_macs(cfg, n_x, n_y)
    report = {"preset": name, "input": [n_x, n_y, frames], "params": param_count(cfg),
              "macs": macs, "gmacs_total": macs["total"] / 1e9}
    if name in REFERENCE and (n_x, n_y, frames) == (256, 256, 8):
        ref = REFERENCE[name]
        report["reference"] = ref
        report["params_rel_diff"] = report["params"] / (ref["params_m"] * 1e6) - 1.0
        report["gflops_rel_diff"] = report["gmacs_total"] / ref["gflops"] - 1.0
    return report
