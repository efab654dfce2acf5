"""Text infiltration with local awareness.

Per pyramid level: a channel gate built from pooled image statistics and
the pooled text projection, a spatial gate convolved from channel-wise
maps, mask-weighted instance-normalized fusion with a residual path, and
the pooled multi-level composition into the final retrieval feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import LEVELS, LEVEL_CHANNELS, TEXT_HIDDEN_DIM, uniform_param, zeros_param
from .tensor import Tensor, apply_primitive

FINAL_DIM = 256
SUPERVISION_DIM = 128
CHANNEL_MLP_REDUCTION = 4
SPATIAL_KERNEL = 7
POOLED_CONCAT_DIM = sum(LEVEL_CHANNELS.values())            # 112
CONCAT_FUSION_DIM = POOLED_CONCAT_DIM + TEXT_HIDDEN_DIM     # 240


@dataclass
class TilaConfig:
    """Fusion behaviour switches shared by training and evaluation."""

    alpha: float = 1e-4
    levels: tuple = LEVELS
    disable_mask: bool = False              # drop the localization-mask term
    disable_cross_attention: bool = False   # bypass both attention gates
    concat_fallback: bool = False           # replace fusion with concatenation
    unbounded_text_gate: bool = False       # raw affine text factor in the channel gate

    def validate(self) -> None:
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError(f"alpha must be finite and non-negative, got {self.alpha}")
        if not self.levels:
            raise ValueError("at least one pyramid level must be enabled")
        for level in self.levels:
            if level not in LEVELS:
                raise ValueError(f"unknown level {level!r}")


def init_tila_params(rng: np.random.Generator, config: TilaConfig) -> dict:
    """Fusion parameters; the concatenation arm carries none of them."""
    params = {}
    if config.concat_fallback:
        params["fuse.cat.w"] = uniform_param(rng, (FINAL_DIM, CONCAT_FUSION_DIM), CONCAT_FUSION_DIM)
        params["fuse.cat.b"] = zeros_param((FINAL_DIM,))
    else:
        for level in config.levels:
            c = LEVEL_CHANNELS[level]
            hidden = c // CHANNEL_MLP_REDUCTION
            params[f"tila.{level}.mlp1.w"] = uniform_param(rng, (hidden, c), c)
            params[f"tila.{level}.mlp1.b"] = zeros_param((hidden,))
            params[f"tila.{level}.mlp2.w"] = uniform_param(rng, (c, hidden), hidden)
            params[f"tila.{level}.mlp2.b"] = zeros_param((c,))
            params[f"tila.{level}.gate.w"] = uniform_param(rng, (c, c), c)
            params[f"tila.{level}.gate.b"] = zeros_param((c,))
            params[f"tila.{level}.spatial.w"] = uniform_param(
                rng, (1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL), 2 * SPATIAL_KERNEL**2
            )
            params[f"tila.{level}.spatial.b"] = zeros_param((1,))
        in_dim = sum(LEVEL_CHANNELS[lv] for lv in config.levels)
        params["compose.w"] = uniform_param(rng, (FINAL_DIM, in_dim), in_dim)
        params["compose.b"] = zeros_param((FINAL_DIM,))
    for level in config.levels:
        c = LEVEL_CHANNELS[level]
        params[f"sup.{level}.w"] = uniform_param(rng, (SUPERVISION_DIM, c), c)
        params[f"sup.{level}.b"] = zeros_param((SUPERVISION_DIM,))
    return params


def _pool_to_rows(x: Tensor) -> Tensor:
    pooled = apply_primitive("avg_pool_global", [x])
    return apply_primitive("reshape", [pooled], {"shape": (x.shape[0], x.shape[1])})


def _shared_mlp(params: dict, level: str, rows: Tensor) -> Tensor:
    hid = apply_primitive(
        "linear", [rows, params[f"tila.{level}.mlp1.w"], params[f"tila.{level}.mlp1.b"]]
    )
    hid = apply_primitive("relu", [hid])
    return apply_primitive(
        "linear", [hid, params[f"tila.{level}.mlp2.w"], params[f"tila.{level}.mlp2.b"]]
    )


def channel_attention(
    params: dict,
    level: str,
    ref_feats: Tensor,
    text_feats: Tensor,
    unbounded_text_gate: bool = False,
) -> Tensor:
    """Channel gate (N, c, 1, 1) from pooled image stats and the text projection."""
    if ref_feats.shape != text_feats.shape:
        raise ValueError(
            f"channel_attention: image {ref_feats.shape} vs text {text_feats.shape}"
        )
    n, c = ref_feats.shape[0], ref_feats.shape[1]
    avg_rows = _pool_to_rows(ref_feats)
    max_pooled = apply_primitive("max_pool_global", [ref_feats])
    max_rows = apply_primitive("reshape", [max_pooled], {"shape": (n, c)})
    image_gate = apply_primitive(
        "sigmoid",
        [apply_primitive("add", [_shared_mlp(params, level, avg_rows),
                                 _shared_mlp(params, level, max_rows)])],
    )
    text_rows = _pool_to_rows(text_feats)
    text_gate = apply_primitive(
        "linear", [text_rows, params[f"tila.{level}.gate.w"], params[f"tila.{level}.gate.b"]]
    )
    if not unbounded_text_gate:
        text_gate = apply_primitive("sigmoid", [text_gate])
    gated = apply_primitive("hadamard", [image_gate, text_gate])
    return apply_primitive("reshape", [gated], {"shape": (n, c, 1, 1)})


def spatial_attention(params: dict, level: str, weighted: Tensor) -> Tensor:
    """Spatial gate (N, 1, h, w) from channel-mean and channel-max maps."""
    mean_map = apply_primitive("avg_pool_spatial", [weighted])
    max_map = apply_primitive("max_pool_spatial", [weighted])
    stacked = apply_primitive("concat", [mean_map, max_map], {"axis": 1})
    conv = apply_primitive(
        "conv2d",
        [stacked, params[f"tila.{level}.spatial.w"], params[f"tila.{level}.spatial.b"]],
        {"stride": 1, "padding": SPATIAL_KERNEL // 2},
    )
    return apply_primitive("sigmoid", [conv])


def cross_modal_weighted(ref_feats: Tensor, channel_gate: Tensor, spatial_gate: Tensor,
                         channel_weighted: Tensor = None) -> Tensor:
    """Gated feature map: channel gate and spatial gate applied multiplicatively."""
    if channel_weighted is None:
        channel_weighted = apply_primitive("hadamard", [ref_feats, channel_gate])
    return apply_primitive("hadamard", [channel_weighted, spatial_gate])


def infiltrate_level(
    ref_feats: Tensor,
    mask_feats,
    text_feats: Tensor,
    attended: Tensor,
    config: TilaConfig,
) -> Tensor:
    """Residual fusion: IN(alpha * ref*mask + attended) * text + ref."""
    config.validate()
    for name, t_ in (("text", text_feats), ("attended", attended)):
        if t_.shape != ref_feats.shape:
            raise ValueError(
                f"infiltrate_level: {name} shape {t_.shape} != ref {ref_feats.shape}"
            )
    if config.disable_mask or mask_feats is None:
        pre = attended
    else:
        if mask_feats.shape != ref_feats.shape:
            raise ValueError(
                f"infiltrate_level: mask shape {mask_feats.shape} != ref {ref_feats.shape}"
            )
        masked = apply_primitive(
            "scalar_scale",
            [apply_primitive("hadamard", [ref_feats, mask_feats])],
            {"scale": config.alpha},
        )
        pre = apply_primitive("add", [masked, attended])
    normed = apply_primitive("instance_norm", [pre])
    fused = apply_primitive("hadamard", [normed, text_feats])
    return apply_primitive("add", [fused, ref_feats])


def pooled_level_rows(feats: Tensor) -> Tensor:
    """Global average pooling to (N, c) rows, shared by fusion and the loss."""
    return _pool_to_rows(feats)


def compose_final(params: dict, pooled_levels: dict, levels: tuple = LEVELS) -> Tensor:
    """Concatenate pooled per-level rows and map to the final feature."""
    missing = [lv for lv in levels if lv not in pooled_levels]
    if missing:
        raise ValueError(f"compose_final: missing levels {missing}")
    rows = [pooled_levels[lv] for lv in levels]
    cat = rows[0] if len(rows) == 1 else apply_primitive("concat", rows, {"axis": 1})
    return apply_primitive("linear", [cat, params["compose.w"], params["compose.b"]])


def concat_fusion(params: dict, pooled_levels: dict, text_state: Tensor,
                  levels: tuple = LEVELS) -> Tensor:
    """Baseline fusion: affine over [pooled image levels; text state]."""
    rows = [pooled_levels[lv] for lv in levels] + [text_state]
    cat = apply_primitive("concat", rows, {"axis": 1})
    return apply_primitive("linear", [cat, params["fuse.cat.w"], params["fuse.cat.b"]])
