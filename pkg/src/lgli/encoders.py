"""Image and text encoders plus the per-level text projections.

The image encoder is a three-stage CNN whose stage outputs form the
low/mid/high feature pyramid; the same parameters encode reference
images, localization-mask images, and gallery targets.  Text runs
through an embedding table and a single gated recurrent layer.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, apply_primitive

LEVELS = ("L", "M", "H")
LEVEL_CHANNELS = {"L": 16, "M": 32, "H": 64}
LEVEL_HW = {"L": 32, "M": 16, "H": 8}
IMAGE_SHAPE = (3, 64, 64)
TEXT_EMBED_DIM = 64
TEXT_HIDDEN_DIM = 128

# stage layout: (name, in_ch, out_ch, stride)
_STAGES = (
    (("s1a", 3, 16, 1), ("s1b", 16, 16, 2)),
    (("s2a", 16, 32, 1), ("s2b", 32, 32, 2)),
    (("s3a", 32, 64, 1), ("s3b", 64, 64, 2)),
)


def uniform_param(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    a = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def init_image_encoder_params(rng: np.random.Generator) -> dict:
    params = {}
    for stage in _STAGES:
        for name, cin, cout, _stride in stage:
            params[f"image.{name}.w"] = uniform_param(rng, (cout, cin, 3, 3), cin * 9)
            params[f"image.{name}.b"] = zeros_param((cout,))
    return params


def init_text_encoder_params(rng: np.random.Generator, vocab_size: int) -> dict:
    d, h = TEXT_EMBED_DIM, TEXT_HIDDEN_DIM
    params = {"text.emb": uniform_param(rng, (vocab_size, d), d)}
    for gate in ("z", "r", "h"):
        params[f"text.w{gate}"] = uniform_param(rng, (h, d), d)
        params[f"text.u{gate}"] = uniform_param(rng, (h, h), h)
        params[f"text.b{gate}"] = zeros_param((h,))
    return params


def init_projection_params(rng: np.random.Generator) -> dict:
    params = {}
    for level in LEVELS:
        out = LEVEL_CHANNELS[level] * LEVEL_HW[level] * LEVEL_HW[level]
        params[f"proj.{level}.w"] = uniform_param(rng, (out, TEXT_HIDDEN_DIM), TEXT_HIDDEN_DIM)
        params[f"proj.{level}.b"] = zeros_param((out,))
    return params


def encode_image(params: dict, images: Tensor) -> dict:
    """(N,3,64,64) -> {"L": (N,16,32,32), "M": (N,32,16,16), "H": (N,64,8,8)}."""
    if images.ndim != 4 or images.shape[1:] != IMAGE_SHAPE:
        raise ValueError(f"expected (N, 3, 64, 64) images, got {images.shape}")
    x = images
    pyramid = {}
    for level, stage in zip(LEVELS, _STAGES):
        for name, _cin, _cout, stride in stage:
            x = apply_primitive(
                "conv2d",
                [x, params[f"image.{name}.w"], params[f"image.{name}.b"]],
                {"stride": stride, "padding": 1},
            )
            x = apply_primitive("relu", [x])
        pyramid[level] = x
    return pyramid


def _recurrent_inputs(params: dict):
    return [params[f"text.{k}{g}"] for g in ("z", "r", "h") for k in ("w", "u", "b")]


def encode_text(params: dict, token_ids: list) -> Tensor:
    """Batch of token-id lists -> (B, 128) final hidden states.

    Sequences are grouped by length so each group runs one batched
    recurrence, then rows are gathered back into input order.
    """
    if not token_ids:
        raise ValueError("encode_text needs at least one sequence")
    for seq in token_ids:
        if not seq:
            raise ValueError("encode_text: empty token sequence")
    emb = params["text.emb"]
    wz, uz, bz, wr, ur, br, wh, uh, bh = _recurrent_inputs(params)

    groups: dict = {}
    for i, seq in enumerate(token_ids):
        groups.setdefault(len(seq), []).append(i)

    chunks = []
    row_of_input = {}
    row = 0
    for length in sorted(groups):
        members = groups[length]
        ids = np.asarray([token_ids[i] for i in members], dtype=np.intp)
        h = Tensor(np.zeros((len(members), TEXT_HIDDEN_DIM)))
        for t in range(length):
            x_t = apply_primitive("embedding_lookup", [emb], {"ids": ids[:, t].tolist()})
            h = apply_primitive(
                "recurrent_step", [x_t, h, wz, uz, bz, wr, ur, br, wh, uh, bh]
            )
        chunks.append(h)
        for i in members:
            row_of_input[i] = row
            row += 1
    stacked = chunks[0] if len(chunks) == 1 else apply_primitive(
        "concat", chunks, {"axis": 0}
    )
    order = [row_of_input[i] for i in range(len(token_ids))]
    if order == list(range(len(token_ids))):
        return stacked
    return apply_primitive("embedding_lookup", [stacked], {"ids": order})


def project_text_to_level(params: dict, state: Tensor, level: str) -> Tensor:
    """(B, 128) -> (B, c_level, h_level, w_level) via one affine map."""
    if level not in LEVELS:
        raise ValueError(f"unknown pyramid level {level!r}")
    c, hw = LEVEL_CHANNELS[level], LEVEL_HW[level]
    flat = apply_primitive(
        "linear", [state, params[f"proj.{level}.w"], params[f"proj.{level}.b"]]
    )
    return apply_primitive(
        "reshape", [flat], {"shape": (state.shape[0], c, hw, hw)}
    )
