"""Full retrieval model: encoders, localization masks, fusion, final features.

A model bundles every learnable parameter (the localizer towers ride
along frozen) plus the fusion configuration, and exposes the two forward
paths: compose a (reference image, text) query and encode a gallery
image, both returning the final feature and the pooled per-level rows
used for layer-wise supervision.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import tila as tila_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .encoders import (
    LEVELS,
    encode_image,
    encode_text,
    init_image_encoder_params,
    init_projection_params,
    init_text_encoder_params,
    project_text_to_level,
)
from .lpvl import TwoTowerEmbedder, localize, mask_from_box, propose_regions
from .scenes import Dataset
from .tensor import Tensor, apply_primitive, no_grad
from .tila import TilaConfig, init_tila_params


@dataclass
class ModelConfig:
    alpha: float = 1e-4
    levels: tuple = LEVELS
    disable_mask: bool = False
    disable_cross_attention: bool = False
    concat_fallback: bool = False
    unbounded_text_gate: bool = False
    normalize: bool = True
    similarity_scale: float = 4.0
    proposer_mode: str = "oracle"
    seed: int = 0
    vocabulary: list = field(default_factory=list)

    def tila_config(self) -> TilaConfig:
        return TilaConfig(
            alpha=self.alpha,
            levels=tuple(self.levels),
            disable_mask=self.disable_mask,
            disable_cross_attention=self.disable_cross_attention,
            concat_fallback=self.concat_fallback,
            unbounded_text_gate=self.unbounded_text_gate,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["levels"] = tuple(d.get("levels", LEVELS))
        d["vocabulary"] = list(d.get("vocabulary", []))
        return ModelConfig(**d)


class LGLIModel:
    """Parameters plus forward paths; evaluation helpers run graph-free."""

    def __init__(self, config: ModelConfig, params: dict):
        self.config = config
        self.params = params
        config.tila_config().validate()

    # -- construction --------------------------------------------------------

    @staticmethod
    def initialize(config: ModelConfig, localizer_params: Optional[dict] = None) -> "LGLIModel":
        if not config.vocabulary:
            raise ValueError("model config needs the dataset vocabulary")
        rng = np.random.default_rng(config.seed)
        params: dict = {}
        params.update(init_image_encoder_params(rng))
        params.update(init_text_encoder_params(rng, len(config.vocabulary)))
        tcfg = config.tila_config()
        if not config.concat_fallback:
            params.update(init_projection_params(rng))
        params.update(init_tila_params(rng, tcfg))
        if config.concat_fallback:
            # gallery images still need a head into the final feature space
            from .encoders import uniform_param, zeros_param

            params["fuse.tgt.w"] = uniform_param(
                rng, (tila_mod.FINAL_DIM, tila_mod.POOLED_CONCAT_DIM),
                tila_mod.POOLED_CONCAT_DIM,
            )
            params["fuse.tgt.b"] = zeros_param((tila_mod.FINAL_DIM,))
        if localizer_params:
            for name, tensor in localizer_params.items():
                frozen = Tensor(tensor.data.copy())
                params[name] = frozen
        return LGLIModel(config, params)

    def localizer(self) -> Optional[TwoTowerEmbedder]:
        loc = {k: v for k, v in self.params.items() if k.startswith("loc.")}
        if not loc:
            return None
        return TwoTowerEmbedder(loc, self.config.vocabulary)

    # -- persistence ----------------------------------------------------------

    def save(self, path, extra_config: Optional[dict] = None) -> None:
        config = {"kind": "lgli", "model": self.config.to_dict()}
        if extra_config:
            config.update(extra_config)
        save_checkpoint(path, self.params, config)

    @staticmethod
    def load(path) -> "LGLIModel":
        from .checkpoint import CheckpointError

        params, config = load_checkpoint(path)
        model_cfg = ModelConfig.from_dict(config["model"])
        emb = params.get("text.emb")
        if emb is not None and emb.shape[0] != len(model_cfg.vocabulary):
            raise CheckpointError(
                f"{path}: embedding table has {emb.shape[0]} rows but the "
                f"config vocabulary lists {len(model_cfg.vocabulary)} tokens"
            )
        trainable = {
            k: Tensor(v.data, requires_grad=not k.startswith("loc."))
            for k, v in params.items()
        }
        return LGLIModel(model_cfg, trainable)

    # -- mask pipeline ---------------------------------------------------------

    def localize_box(self, dataset: Dataset, reference_scene, loc_tokens,
                     image: Optional[np.ndarray] = None) -> Optional[tuple]:
        """Argmax region box for a query, or None for empty localization text."""
        if self.config.disable_mask:
            return None
        embedder = self.localizer()
        if embedder is None:
            raise ValueError("model has no localizer towers; train one first")
        regions = propose_regions(
            reference_scene, mode=self.config.proposer_mode, image=image
        )
        chosen = localize(regions, list(loc_tokens), embedder)
        return None if chosen is None else tuple(chosen.box)

    # -- forward paths ----------------------------------------------------------

    def compose_query(
        self,
        ref_images: np.ndarray,
        token_ids: list,
        mask_images: Optional[np.ndarray],
        mask_ids: Optional[list],
    ) -> dict:
        """Compose (reference, text) batches into retrieval features.

        mask_images holds the unique mask renders for the batch and
        mask_ids maps each query row to one of them; both are None when
        the mask path is disabled.
        """
        cfg = self.config
        refs = Tensor(ref_images)
        ref_pyr = encode_image(self.params, refs)
        text_state = encode_text(self.params, token_ids)

        if cfg.concat_fallback:
            pooled = {lv: tila_mod.pooled_level_rows(ref_pyr[lv]) for lv in cfg.levels}
            final = tila_mod.concat_fusion(self.params, pooled, text_state, cfg.levels)
            return {"final": final, "levels": {}}

        mask_pyr = None
        if not cfg.disable_mask:
            if mask_images is None or mask_ids is None:
                raise ValueError("mask images are required unless the mask path is disabled")
            unique_masks = encode_image(self.params, Tensor(mask_images))
            mask_pyr = {
                lv: apply_primitive("embedding_lookup", [unique_masks[lv]],
                                    {"ids": list(mask_ids)})
                for lv in cfg.levels
            }

        tcfg = cfg.tila_config()
        pooled_levels = {}
        for lv in cfg.levels:
            f_r = ref_pyr[lv]
            f_t = project_text_to_level(self.params, text_state, lv)
            if cfg.disable_cross_attention:
                attended = f_r
            else:
                a_c = tila_mod.channel_attention(
                    self.params, lv, f_r, f_t, cfg.unbounded_text_gate
                )
                weighted = apply_primitive("hadamard", [f_r, a_c])
                a_s = tila_mod.spatial_attention(self.params, lv, weighted)
                attended = tila_mod.cross_modal_weighted(
                    f_r, a_c, a_s, channel_weighted=weighted
                )
            f_in = tila_mod.infiltrate_level(
                f_r, None if mask_pyr is None else mask_pyr[lv], f_t, attended, tcfg
            )
            pooled_levels[lv] = tila_mod.pooled_level_rows(f_in)
        final = tila_mod.compose_final(self.params, pooled_levels, cfg.levels)
        return {"final": final, "levels": pooled_levels}

    def encode_targets(self, images: np.ndarray) -> dict:
        """Gallery-side features through the shared encoder and head."""
        pyr = encode_image(self.params, Tensor(images))
        pooled = {lv: tila_mod.pooled_level_rows(pyr[lv]) for lv in self.config.levels}
        if self.config.concat_fallback:
            cat_rows = [pooled[lv] for lv in self.config.levels]
            cat = cat_rows[0] if len(cat_rows) == 1 else apply_primitive(
                "concat", cat_rows, {"axis": 1}
            )
            final = apply_primitive(
                "linear", [cat, self.params["fuse.tgt.w"], self.params["fuse.tgt.b"]]
            )
        else:
            final = tila_mod.compose_final(self.params, pooled, self.config.levels)
        return {"final": final, "levels": pooled}

    # -- evaluation helpers -------------------------------------------------------

    def final_feature(self, composed: dict) -> np.ndarray:
        """Processed final features as numpy rows (normalized when configured)."""
        f = composed["final"].data
        if self.config.normalize:
            norms = np.linalg.norm(f, axis=1, keepdims=True)
            norms[norms == 0.0] = 1.0
            f = f / norms
        return f

    def compose_eval(self, dataset: Dataset, triplets: list, batch_size: int = 64,
                     boxes: Optional[list] = None) -> np.ndarray:
        """Graph-free query features for a list of triplets."""
        feats = []
        for start in range(0, len(triplets), batch_size):
            chunk = triplets[start : start + batch_size]
            refs = np.stack([dataset.render(tp.reference.scene_id) for tp in chunk])
            tokens = [dataset.tokenize(tp.modification.text_tokens) for tp in chunk]
            if self.config.disable_mask:
                masks, ids = None, None
            else:
                chunk_boxes = []
                for j, tp in enumerate(chunk):
                    if boxes is not None:
                        chunk_boxes.append(boxes[start + j])
                    else:
                        chunk_boxes.append(self.localize_box(
                            dataset, tp.reference,
                            tp.modification.localization_text_tokens,
                            image=refs[j],
                        ))
                masks, ids = build_mask_batch(chunk_boxes)
            with no_grad():
                composed = self.compose_query(refs, tokens, masks, ids)
            feats.append(self.final_feature(composed))
        return np.concatenate(feats, axis=0)


def build_mask_batch(boxes: list) -> tuple:
    """Deduplicate per-query mask boxes into unique renders plus row indices."""
    unique: dict = {}
    ids = []
    for box in boxes:
        key = tuple(box) if box is not None else None
        if key not in unique:
            unique[key] = len(unique)
        ids.append(unique[key])
    masks = np.stack([mask_from_box(key) for key in unique])
    return masks, ids
