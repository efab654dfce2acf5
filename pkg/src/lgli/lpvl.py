"""Language-prompted visual localization.

Regions come from either the symbolic scene (oracle) or connected
components of non-background pixels (heuristic).  A trained two-tower
embedder scores region crops against the localization text; the argmax
region becomes a binary mask image consumed by the fusion stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .encoders import uniform_param, zeros_param
from .scenes import (
    CANVAS,
    COLOR_NAMES,
    COLORS,
    Dataset,
    POSITION_WORDS,
    SIZES,
    SceneSpec,
    render_scene,
)
from .tensor import Tensor, apply_primitive, backward, no_grad

CROP_SIZE = 16
REGION_EMBED_DIM = 64
TEXT_TOWER_EMBED = 32
MAX_REGIONS = 9


class LocalizationError(Exception):
    pass


class InsufficientPositivesError(LocalizationError):
    pass


@dataclass
class Region:
    box: tuple                      # (x0, y0, x1, y1) in pixels
    crop: np.ndarray                # (3, 16, 16) resized patch
    source: str                     # "oracle" | "heuristic"
    object: object = None           # SceneObject when the oracle proposed it

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (0 <= x0 < x1 <= CANVAS and 0 <= y0 < y1 <= CANVAS):
            raise LocalizationError(f"invalid region box {self.box}")


def crop_and_resize(image: np.ndarray, box: tuple) -> np.ndarray:
    """Nearest-neighbor resize of the boxed patch to (3, 16, 16)."""
    x0, y0, x1, y1 = box
    patch = image[:, y0:y1, x0:x1]
    h, w = patch.shape[1], patch.shape[2]
    ys = np.minimum((np.arange(CROP_SIZE) + 0.5) * h / CROP_SIZE, h - 1).astype(int)
    xs = np.minimum((np.arange(CROP_SIZE) + 0.5) * w / CROP_SIZE, w - 1).astype(int)
    return patch[:, ys][:, :, xs]


def propose_regions(scene, mode: str = "oracle", image: Optional[np.ndarray] = None) -> list:
    """One region per object (oracle) or per connected component (heuristic)."""
    if mode == "oracle":
        if not isinstance(scene, SceneSpec):
            raise LocalizationError("oracle proposer needs a SceneSpec")
        if image is None:
            image = render_scene(scene)
        regions = []
        for obj in sorted(scene.objects, key=lambda o: o.cell):
            box = obj.box()
            regions.append(Region(box, crop_and_resize(image, box), "oracle", obj))
        return regions
    if mode == "heuristic":
        if image is None:
            if not isinstance(scene, SceneSpec):
                image = np.asarray(scene, dtype=np.float64)
            else:
                image = render_scene(scene)
        mask = ~np.all(image == 1.0, axis=0)
        labels, count = ndimage.label(mask)
        slices = ndimage.find_objects(labels)
        boxes = []
        for sl in slices[:MAX_REGIONS]:
            ysl, xsl = sl
            boxes.append((xsl.start, ysl.start, xsl.stop, ysl.stop))
        boxes.sort(key=lambda b: (b[1], b[0]))
        return [Region(b, crop_and_resize(image, b), "heuristic") for b in boxes]
    raise LocalizationError(f"unknown proposer mode {mode!r}")


def render_mask(region: Optional[Region]) -> np.ndarray:
    """Binary (3, 64, 64) mask of the selected box; all zeros when none."""
    mask = np.zeros((3, CANVAS, CANVAS))
    if region is not None:
        x0, y0, x1, y1 = region.box
        mask[:, y0:y1, x0:x1] = 1.0
    return mask


def mask_from_box(box: Optional[tuple]) -> np.ndarray:
    mask = np.zeros((3, CANVAS, CANVAS))
    if box is not None:
        x0, y0, x1, y1 = box
        mask[:, y0:y1, x0:x1] = 1.0
    return mask


# ---------------------------------------------------------------------------
# two-tower embedder
# ---------------------------------------------------------------------------

@dataclass
class LocalizerConfig:
    epochs: int = 25
    batch_size: int = 32
    lr: float = 0.1
    scale: float = 10.0     # cosine logits are in [-1, 1]; sharpen the softmax
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 2 or self.lr <= 0 or self.scale <= 0:
            raise ValueError(f"invalid localizer config {self}")


def init_localizer_params(rng: np.random.Generator, vocab_size: int) -> dict:
    params = {
        "loc.r1.w": uniform_param(rng, (8, 3, 3, 3), 27),
        "loc.r1.b": zeros_param((8,)),
        "loc.r2.w": uniform_param(rng, (16, 8, 3, 3), 72),
        "loc.r2.b": zeros_param((16,)),
        "loc.rout.w": uniform_param(rng, (REGION_EMBED_DIM, 16 * 4 * 4), 16 * 4 * 4),
        "loc.rout.b": zeros_param((REGION_EMBED_DIM,)),
        "loc.emb": uniform_param(rng, (vocab_size, TEXT_TOWER_EMBED), TEXT_TOWER_EMBED),
        "loc.tout.w": uniform_param(rng, (REGION_EMBED_DIM, TEXT_TOWER_EMBED), TEXT_TOWER_EMBED),
        "loc.tout.b": zeros_param((REGION_EMBED_DIM,)),
    }
    return params


def embed_crops(params: dict, crops: np.ndarray) -> Tensor:
    """(K, 3, 16, 16) crops -> unit-norm (K, 64) region features."""
    x = crops if isinstance(crops, Tensor) else Tensor(np.asarray(crops, dtype=np.float64))
    x = apply_primitive("conv2d", [x, params["loc.r1.w"], params["loc.r1.b"]],
                        {"stride": 2, "padding": 1})
    x = apply_primitive("relu", [x])
    x = apply_primitive("conv2d", [x, params["loc.r2.w"], params["loc.r2.b"]],
                        {"stride": 2, "padding": 1})
    x = apply_primitive("relu", [x])
    x = apply_primitive("reshape", [x], {"shape": (x.shape[0], 16 * 4 * 4)})
    x = apply_primitive("linear", [x, params["loc.rout.w"], params["loc.rout.b"]])
    return apply_primitive("l2_normalize", [x])


def embed_token_batch(params: dict, token_ids: list) -> Tensor:
    """Mean token embedding -> affine -> unit-norm (B, 64) text features."""
    groups: dict = {}
    for i, seq in enumerate(token_ids):
        if not seq:
            raise LocalizationError("cannot embed an empty localization text")
        groups.setdefault(len(seq), []).append(i)
    chunks = []
    row_of = {}
    row = 0
    for length in sorted(groups):
        members = groups[length]
        flat = [tid for i in members for tid in token_ids[i]]
        emb = apply_primitive("embedding_lookup", [params["loc.emb"]], {"ids": flat})
        shaped = apply_primitive(
            "reshape", [emb], {"shape": (len(members), length, TEXT_TOWER_EMBED, 1)}
        )
        pooled = apply_primitive("avg_pool_spatial", [shaped])
        chunks.append(apply_primitive(
            "reshape", [pooled], {"shape": (len(members), TEXT_TOWER_EMBED)}
        ))
        for i in members:
            row_of[i] = row
            row += 1
    cat = chunks[0] if len(chunks) == 1 else apply_primitive("concat", chunks, {"axis": 0})
    order = [row_of[i] for i in range(len(token_ids))]
    if order != list(range(len(token_ids))):
        cat = apply_primitive("embedding_lookup", [cat], {"ids": order})
    out = apply_primitive("linear", [cat, params["loc.tout.w"], params["loc.tout.b"]])
    return apply_primitive("l2_normalize", [out])


class TwoTowerEmbedder:
    """Joint region/text embedding with unit-norm towers."""

    def __init__(self, params: dict, vocabulary: list):
        self.params = params
        self.vocabulary = list(vocabulary)
        self._tok = {t: i for i, t in enumerate(self.vocabulary)}

    def embed_regions(self, regions: list) -> np.ndarray:
        crops = np.stack([r.crop for r in regions])
        with no_grad():
            return embed_crops(self.params, crops).data

    def embed_text(self, tokens: list) -> np.ndarray:
        ids = [self._tok[t] for t in tokens]
        with no_grad():
            return embed_token_batch(self.params, [ids]).data[0]


class OneHotEmbedder:
    """Synthetic perfectly-discriminative embedder for harness self-tests.

    Encodes the (position, size, color) descriptor as a one-hot vector:
    the text side parses the tokens, the region side reads position from
    the box geometry, size from the box extent, and color from the crop.
    """

    dim = len(POSITION_WORDS) * len(SIZES) * len(COLOR_NAMES)

    def _index(self, pos: str, size: str, color: str) -> int:
        p = POSITION_WORDS.index(pos)
        s = SIZES.index(size)
        c = COLOR_NAMES.index(color)
        return (p * len(SIZES) + s) * len(COLOR_NAMES) + c

    def _one_hot(self, idx: int) -> np.ndarray:
        v = np.zeros(self.dim)
        v[idx] = 1.0
        return v

    def embed_regions(self, regions: list) -> np.ndarray:
        out = np.zeros((len(regions), self.dim))
        for i, region in enumerate(regions):
            x0, y0, x1, y1 = region.box
            row = int((y0 + y1) / 2) // 21
            col = int((x0 + x1) / 2) // 21
            size = "large" if max(x1 - x0, y1 - y0) > 12 else "small"
            colored = region.crop[:, ~np.all(region.crop == 1.0, axis=0)]
            rgb = colored.mean(axis=1) if colored.size else np.ones(3)
            color = min(COLOR_NAMES, key=lambda c: float(np.sum((np.array(COLORS[c]) - rgb) ** 2)))
            pos = POSITION_WORDS[row * 3 + col]
            out[i] = self._one_hot(self._index(pos, size, color))
        return out

    def embed_text(self, tokens: list) -> np.ndarray:
        pos, size, color = tokens[0], tokens[1], tokens[2]
        return self._one_hot(self._index(pos, size, color))


def localize(regions: list, loc_tokens: list, embedder) -> Optional[Region]:
    """Cosine-argmax region for the localization text; ties go to the lowest index."""
    if not regions or not loc_tokens:
        return None
    region_feats = embedder.embed_regions(regions)
    text_feat = embedder.embed_text(loc_tokens)
    scores = region_feats @ text_feat
    return regions[int(np.argmax(scores))]


# ---------------------------------------------------------------------------
# contrastive training
# ---------------------------------------------------------------------------

def _positive_pairs(dataset: Dataset, split: str = "train") -> list:
    pairs = []
    for tp in dataset.split_triplets(split):
        if tp.modification.op not in ("Remove", "ChangeColor", "ChangeSize"):
            continue
        image = dataset.render(tp.reference.scene_id)
        crop = crop_and_resize(image, tp.gt_box)
        ids = dataset.tokenize(tp.modification.localization_text_tokens)
        pairs.append((crop, ids))
    return pairs


def localizer_batch_loss(params: dict, crops: np.ndarray, token_ids: list, scale: float) -> Tensor:
    """Symmetric in-batch softmax over scaled cosine similarities."""
    r = embed_crops(params, crops)
    t = embed_token_batch(params, token_ids)
    sim_rt = apply_primitive("scalar_scale", [apply_primitive("linear", [r, t])],
                             {"scale": scale})
    sim_tr = apply_primitive("scalar_scale", [apply_primitive("linear", [t, r])],
                             {"scale": scale})
    ce_rt = apply_primitive("softmax_cross_entropy_rows", [sim_rt])
    ce_tr = apply_primitive("softmax_cross_entropy_rows", [sim_tr])
    return apply_primitive("scalar_scale", [apply_primitive("add", [ce_rt, ce_tr])],
                           {"scale": 0.5})


def train_localizer(dataset: Dataset, config: LocalizerConfig = None) -> tuple:
    """Fit the two towers on (crop, localization-text) positives.

    Returns (params, loss_history).  Raises when the dataset carries no
    Remove/Change triplets to learn from.
    """
    config = config or LocalizerConfig()
    config.validate()
    pairs = _positive_pairs(dataset)
    if len(pairs) < config.batch_size:
        raise InsufficientPositivesError(
            f"need at least {config.batch_size} Remove/Change pairs, found {len(pairs)}"
        )
    rng = np.random.default_rng(config.seed)
    params = init_localizer_params(rng, len(dataset.vocabulary))
    history = []
    order = np.arange(len(pairs))
    for _epoch in range(config.epochs):
        rng.shuffle(order)
        epoch_losses = []
        for start in range(0, len(order) - config.batch_size + 1, config.batch_size):
            batch = order[start : start + config.batch_size]
            crops = np.stack([pairs[i][0] for i in batch])
            ids = [pairs[i][1] for i in batch]
            loss = localizer_batch_loss(params, crops, ids, config.scale)
            backward(loss)
            for p in params.values():
                if p.grad is not None:
                    p.data -= config.lr * p.grad
                    p.grad.fill(0.0)
            epoch_losses.append(loss.item())
        history.append(float(np.mean(epoch_losses)))
    return params, history


def localization_accuracy(dataset: Dataset, embedder, split: str = "test",
                          mode: str = "oracle") -> float:
    """Fraction of Remove/Change queries whose argmax region is the true box."""
    total = 0
    hit = 0
    for tp in dataset.split_triplets(split):
        if tp.gt_box is None:
            continue
        image = dataset.render(tp.reference.scene_id)
        regions = propose_regions(tp.reference, mode=mode, image=image)
        chosen = localize(regions, tp.modification.localization_text_tokens, embedder)
        total += 1
        if chosen is not None and tuple(chosen.box) == tuple(tp.gt_box):
            hit += 1
    if total == 0:
        raise InsufficientPositivesError("split has no localizable queries")
    return hit / total
