"""Synthetic desk-scale scene dataset: specs, rendering, text, and splits.

Scenes live on a 3x3 grid of a 64x64 canvas.  Each modification is a
templated sentence whose object-descriptor span doubles as the
localization text, so every query carries its own grounding target.
"""

from __future__ import annotations

import json
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

SHAPES = ("circle", "square", "triangle")
SIZES = ("small", "large")
COLORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 0.8, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "gray": (0.5, 0.5, 0.5),
    "yellow": (1.0, 0.9, 0.0),
    "purple": (0.55, 0.0, 0.75),
    "cyan": (0.0, 0.85, 0.85),
    "brown": (0.55, 0.27, 0.07),
}
COLOR_NAMES = tuple(sorted(COLORS))

CANVAS = 64
CELL = 21          # cell pitch; 20x20 drawable region at offset 1
CELL_REGION = 20
SIZE_EXTENT = {"small": 8, "large": 16}

_ROW_WORDS = ("top", "middle", "bottom")
_COL_WORDS = ("left", "center", "right")

OPS = ("Add", "Remove", "ChangeColor", "ChangeSize")


def position_word(row: int, col: int) -> str:
    return f"{_ROW_WORDS[row]}-{_COL_WORDS[col]}"


def cell_from_position_word(word: str):
    r, c = word.split("-")
    return _ROW_WORDS.index(r), _COL_WORDS.index(c)


POSITION_WORDS = tuple(position_word(r, c) for r in range(3) for c in range(3))

VOCABULARY = tuple(sorted(
    {"make", "remove", "add", "to", "object"}
    | set(POSITION_WORDS) | set(SIZES) | set(COLOR_NAMES) | set(SHAPES)
))


class SceneError(Exception):
    pass


class InfeasibleConfigError(SceneError):
    pass


class HoldoutOverlapError(SceneError):
    pass


class NoValidModificationError(SceneError):
    pass


class VocabularyError(SceneError):
    def __init__(self, tokens):
        self.tokens = list(tokens)
        super().__init__(f"tokens not in vocabulary: {self.tokens}")


IMAGE_ERROR_HINT = "expected images shaped (N, 3, 64, 64), got {got}"


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    size: str
    cell: tuple  # (row, col)

    def box(self) -> tuple:
        """Tight pixel box (x0, y0, x1, y1) of the drawn object."""
        extent = SIZE_EXTENT[self.size]
        inset = (CELL_REGION - extent) // 2
        row, col = self.cell
        x0 = 1 + CELL * col + inset
        y0 = 1 + CELL * row + inset
        return (x0, y0, x0 + extent, y0 + extent)


@dataclass
class SceneSpec:
    objects: list
    scene_id: int = -1

    def canonical(self) -> tuple:
        return tuple(sorted(
            (o.shape, o.color, o.size, o.cell[0], o.cell[1]) for o in self.objects
        ))

    def occupied_cells(self) -> set:
        return {o.cell for o in self.objects}

    def object_at(self, cell) -> Optional[SceneObject]:
        for o in self.objects:
            if o.cell == tuple(cell):
                return o
        return None


@dataclass
class Modification:
    op: str
    text_tokens: list
    localization_text_tokens: list
    target_cell: Optional[tuple]


@dataclass
class QueryTriplet:
    reference: SceneSpec
    modification: Modification
    target: SceneSpec
    split: str
    gt_box: Optional[tuple] = None


@dataclass
class GenerationConfig:
    train_triplets: int = 2000
    test_triplets: int = 500
    min_objects: int = 2
    max_objects: int = 6
    seed: int = 0
    # (shape, color) pairs excluded from each split's scenes
    holdout: dict = field(default_factory=lambda: {
        "train": [("triangle", "purple"), ("circle", "brown")],
        "test": [("square", "cyan"), ("triangle", "red")],
    })

    def validate(self) -> None:
        if not (1 <= self.min_objects <= self.max_objects <= 9):
            raise InfeasibleConfigError(
                f"object count range [{self.min_objects}, {self.max_objects}] "
                "must fit the 9-cell grid"
            )
        train_h = {tuple(p) for p in self.holdout.get("train", [])}
        test_h = {tuple(p) for p in self.holdout.get("test", [])}
        overlap = train_h & test_h
        if overlap:
            raise HoldoutOverlapError(f"hold-out pairs appear in both splits: {sorted(overlap)}")
        for split, pairs in ((("train"), train_h), (("test"), test_h)):
            for shape, color in pairs:
                if shape not in SHAPES or color not in COLORS:
                    raise InfeasibleConfigError(f"unknown hold-out pair ({shape}, {color})")
            if len(pairs) >= len(SHAPES) * len(COLOR_NAMES):
                raise InfeasibleConfigError(f"{split} split excludes every attribute combination")

    def allowed_pairs(self, split: str) -> list:
        held = {tuple(p) for p in self.holdout.get(split, [])}
        return [(s, c) for s in SHAPES for c in COLOR_NAMES if (s, c) not in held]


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

ALL_CELLS = tuple((r, c) for r in range(3) for c in range(3))


def sample_scene(rng: random.Random, config: GenerationConfig, split: str) -> SceneSpec:
    """Uniform scene draw without cell collisions; deterministic per rng state."""
    config.validate()
    k = rng.randint(config.min_objects, config.max_objects)
    cells = rng.sample(ALL_CELLS, k)
    allowed = config.allowed_pairs(split)
    objects = []
    for cell in cells:
        shape, color = rng.choice(allowed)
        size = rng.choice(SIZES)
        objects.append(SceneObject(shape=shape, color=color, size=size, cell=cell))
    return SceneSpec(objects=objects)


def _descriptor_tokens(obj: SceneObject) -> list:
    return [position_word(*obj.cell), obj.size, obj.color, "object"]


def _unique_descriptor_objects(spec: SceneSpec) -> list:
    """Objects whose (size, color) pair is unique in the scene.

    Region crops cannot see grid position, so queries prefer objects a
    crop-level matcher can disambiguate; position words still make every
    sentence unambiguous.
    """
    counts: dict = {}
    for o in spec.objects:
        counts[(o.size, o.color)] = counts.get((o.size, o.color), 0) + 1
    return [o for o in spec.objects if counts[(o.size, o.color)] == 1]


def generate_triplet(
    rng: random.Random, spec: SceneSpec, split: str, config: GenerationConfig
) -> QueryTriplet:
    """Draw one modification for ``spec`` and build its (ref, text, target) unit."""
    feasible = []
    if len(spec.objects) < 9:
        feasible.append("Add")
    if spec.objects:
        feasible.extend(["Remove", "ChangeColor", "ChangeSize"])
    if not feasible:
        raise NoValidModificationError("scene admits no modification")
    allowed = set(config.allowed_pairs(split))

    ops = feasible[:]
    rng.shuffle(ops)
    for op in ops:
        if op == "Add":
            empty = sorted(set(ALL_CELLS) - spec.occupied_cells())
            cell = rng.choice(empty)
            shape, color = rng.choice(sorted(allowed))
            size = rng.choice(SIZES)
            new_obj = SceneObject(shape=shape, color=color, size=size, cell=cell)
            tokens = ["add", size, color, shape, "to", position_word(*cell)]
            mod = Modification("Add", tokens, [], cell)
            target = SceneSpec(objects=spec.objects + [new_obj])
            return QueryTriplet(spec, mod, target, split, gt_box=None)

        candidates = _unique_descriptor_objects(spec) or spec.objects
        obj = rng.choice(sorted(candidates, key=lambda o: o.cell))
        if op == "Remove":
            tokens = ["remove"] + _descriptor_tokens(obj)
            mod = Modification("Remove", tokens, _descriptor_tokens(obj), obj.cell)
            target = SceneSpec(objects=[o for o in spec.objects if o.cell != obj.cell])
            return QueryTriplet(spec, mod, target, split, gt_box=obj.box())
        if op == "ChangeSize":
            new_size = "large" if obj.size == "small" else "small"
            tokens = ["make"] + _descriptor_tokens(obj) + [new_size]
            mod = Modification("ChangeSize", tokens, _descriptor_tokens(obj), obj.cell)
            swapped = SceneObject(obj.shape, obj.color, new_size, obj.cell)
            target = SceneSpec(objects=[swapped if o.cell == obj.cell else o
                                        for o in spec.objects])
            return QueryTriplet(spec, mod, target, split, gt_box=obj.box())
        if op == "ChangeColor":
            options = [c for c in COLOR_NAMES
                       if c != obj.color and (obj.shape, c) in allowed]
            if not options:
                continue
            new_color = rng.choice(options)
            tokens = ["make"] + _descriptor_tokens(obj) + [new_color]
            mod = Modification("ChangeColor", tokens, _descriptor_tokens(obj), obj.cell)
            swapped = SceneObject(obj.shape, new_color, obj.size, obj.cell)
            target = SceneSpec(objects=[swapped if o.cell == obj.cell else o
                                        for o in spec.objects])
            return QueryTriplet(spec, mod, target, split, gt_box=obj.box())
    raise NoValidModificationError("no modification satisfies the split constraints")


def apply_modification(spec: SceneSpec, mod: Modification) -> SceneSpec:
    """Re-derive the target scene from a modification's tokens and cell."""
    if mod.op == "Add":
        size, color, shape = mod.text_tokens[1], mod.text_tokens[2], mod.text_tokens[3]
        cell = cell_from_position_word(mod.text_tokens[5])
        return SceneSpec(objects=spec.objects + [SceneObject(shape, color, size, cell)])
    obj = spec.object_at(mod.target_cell)
    if obj is None:
        raise NoValidModificationError(f"no object at cell {mod.target_cell}")
    if mod.op == "Remove":
        return SceneSpec(objects=[o for o in spec.objects if o.cell != obj.cell])
    new_attr = mod.text_tokens[-1]
    if mod.op == "ChangeSize":
        new_obj = SceneObject(obj.shape, obj.color, new_attr, obj.cell)
    elif mod.op == "ChangeColor":
        new_obj = SceneObject(obj.shape, new_attr, obj.size, obj.cell)
    else:
        raise NoValidModificationError(f"unknown op {mod.op}")
    return SceneSpec(objects=[new_obj if o.cell == obj.cell else o for o in spec.objects])


def extract_localization_text(mod: Modification) -> list:
    """Object-descriptor span of the sentence; empty when nothing exists yet."""
    if mod.op == "Add":
        return []
    return list(mod.text_tokens[1:5])


def localization_tokens_from_text(tokens: list) -> list:
    """Best-effort descriptor span from raw tokens; empty when none applies."""
    if len(tokens) >= 5 and tokens[0] in ("make", "remove"):
        pos, size, color, obj = tokens[1:5]
        if (pos in POSITION_WORDS and size in SIZES
                and color in COLORS and obj == "object"):
            return list(tokens[1:5])
    return []


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _shape_mask(shape: str, extent: int) -> np.ndarray:
    yy, xx = np.mgrid[0:extent, 0:extent]
    yc, xc = yy + 0.5, xx + 0.5
    center = extent / 2.0
    if shape == "square":
        return np.ones((extent, extent), dtype=bool)
    if shape == "circle":
        return (yc - center) ** 2 + (xc - center) ** 2 <= center**2
    if shape == "triangle":
        # widens by half a pixel per row; apex up, full base at the bottom
        return np.abs(xc - center) <= (yy + 1) / 2.0
    raise SceneError(f"unknown shape {shape}")


_MASK_CACHE = {
    (s, e): _shape_mask(s, e) for s in SHAPES for e in SIZE_EXTENT.values()
}


def render_scene(spec: SceneSpec) -> np.ndarray:
    """Rasterize to a (3, 64, 64) float image on a white background."""
    img = np.ones((3, CANVAS, CANVAS))
    for obj in spec.objects:
        x0, y0, x1, y1 = obj.box()
        mask = _MASK_CACHE[(obj.shape, x1 - x0)]
        rgb = COLORS[obj.color]
        for ch in range(3):
            region = img[ch, y0:y1, x0:x1]
            region[mask] = rgb[ch]
    return img


# ---------------------------------------------------------------------------
# raw image files: 8-byte little-endian header (ndim, d0, d1, d2) as uint16,
# then float64 payload in row-major order
# ---------------------------------------------------------------------------

def write_image_raw(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim > 3:
        raise SceneError("raw image files store at most 3 dimensions")
    dims = list(arr.shape) + [1] * (3 - arr.ndim)
    header = struct.pack("<4H", arr.ndim, *dims)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype("<f8").tobytes(order="C"))


def read_image_raw(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise SceneError(f"{path}: truncated header")
    ndim, d0, d1, d2 = struct.unpack("<4H", blob[:8])
    dims = [d0, d1, d2][:ndim]
    expected = 8 + int(np.prod(dims)) * 8
    if len(blob) != expected:
        raise SceneError(f"{path}: expected {expected} bytes, found {len(blob)}")
    return np.frombuffer(blob[8:], dtype="<f8").reshape(dims).copy()


# ---------------------------------------------------------------------------
# manifest / dataset
# ---------------------------------------------------------------------------

@dataclass
class Manifest:
    config: GenerationConfig
    vocabulary: list
    scenes: dict            # scene_id -> SceneSpec
    triplets: list          # QueryTriplet with hydrated scene references
    scene_splits: dict      # scene_id -> split

    def to_json_dict(self) -> dict:
        return {
            "version": 1,
            "config": {
                "train_triplets": self.config.train_triplets,
                "test_triplets": self.config.test_triplets,
                "min_objects": self.config.min_objects,
                "max_objects": self.config.max_objects,
                "seed": self.config.seed,
                "holdout": {k: [list(p) for p in v] for k, v in self.config.holdout.items()},
            },
            "vocabulary": list(self.vocabulary),
            "scenes": {
                str(sid): {
                    "split": self.scene_splits[sid],
                    "objects": [
                        {"shape": o.shape, "color": o.color, "size": o.size,
                         "cell": list(o.cell)}
                        for o in spec.objects
                    ],
                }
                for sid, spec in sorted(self.scenes.items())
            },
            "triplets": [
                {
                    "reference": tp.reference.scene_id,
                    "target": tp.target.scene_id,
                    "split": tp.split,
                    "op": tp.modification.op,
                    "text": list(tp.modification.text_tokens),
                    "localization_text": list(tp.modification.localization_text_tokens),
                    "target_cell": list(tp.modification.target_cell)
                    if tp.modification.target_cell is not None else None,
                    "gt_box": list(tp.gt_box) if tp.gt_box is not None else None,
                }
                for tp in self.triplets
            ],
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "Manifest":
        cfg_doc = doc["config"]
        config = GenerationConfig(
            train_triplets=cfg_doc["train_triplets"],
            test_triplets=cfg_doc["test_triplets"],
            min_objects=cfg_doc["min_objects"],
            max_objects=cfg_doc["max_objects"],
            seed=cfg_doc["seed"],
            holdout={k: [tuple(p) for p in v] for k, v in cfg_doc["holdout"].items()},
        )
        scenes = {}
        scene_splits = {}
        for sid_str, entry in doc["scenes"].items():
            sid = int(sid_str)
            objs = [
                SceneObject(o["shape"], o["color"], o["size"], tuple(o["cell"]))
                for o in entry["objects"]
            ]
            scenes[sid] = SceneSpec(objects=objs, scene_id=sid)
            scene_splits[sid] = entry["split"]
        triplets = []
        for rec in doc["triplets"]:
            mod = Modification(
                op=rec["op"],
                text_tokens=list(rec["text"]),
                localization_text_tokens=list(rec["localization_text"]),
                target_cell=tuple(rec["target_cell"]) if rec["target_cell"] else None,
            )
            triplets.append(QueryTriplet(
                reference=scenes[rec["reference"]],
                modification=mod,
                target=scenes[rec["target"]],
                split=rec["split"],
                gt_box=tuple(rec["gt_box"]) if rec["gt_box"] else None,
            ))
        return Manifest(config, list(doc["vocabulary"]), scenes, triplets, scene_splits)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1))

    @staticmethod
    def load(path) -> "Manifest":
        return Manifest.from_json_dict(json.loads(Path(path).read_text()))


def build_splits(config: GenerationConfig) -> Manifest:
    """Generate the train/test triplet pools and register deduplicated scenes."""
    config.validate()
    scenes: dict = {}
    scene_splits: dict = {}
    key_to_id: dict = {}
    next_id = [0]

    def register(spec: SceneSpec, split: str) -> SceneSpec:
        key = (split, spec.canonical())
        sid = key_to_id.get(key)
        if sid is None:
            sid = next_id[0]
            next_id[0] += 1
            key_to_id[key] = sid
            spec.scene_id = sid
            scenes[sid] = spec
            scene_splits[sid] = split
        return scenes[sid]

    triplets = []
    for split, count in (("train", config.train_triplets), ("test", config.test_triplets)):
        rng = random.Random((config.seed, split).__repr__())
        made = 0
        while made < count:
            spec = sample_scene(rng, config, split)
            try:
                tp = generate_triplet(rng, spec, split, config)
            except NoValidModificationError:
                continue
            tp.reference = register(tp.reference, split)
            tp.target = register(tp.target, split)
            triplets.append(tp)
            made += 1
    return Manifest(config, list(VOCABULARY), scenes, triplets, scene_splits)


class Dataset:
    """Manifest wrapper with render caching and tokenization."""

    def __init__(self, manifest: Manifest):
        self.manifest = manifest
        self.vocabulary = list(manifest.vocabulary)
        self.token_to_id = {tok: i for i, tok in enumerate(self.vocabulary)}
        self._render_cache: dict = {}

    @staticmethod
    def load(path) -> "Dataset":
        p = Path(path)
        if p.is_dir():
            p = p / "manifest.json"
        return Dataset(Manifest.load(p))

    @property
    def scenes(self) -> dict:
        return self.manifest.scenes

    def split_triplets(self, split: str) -> list:
        return [tp for tp in self.manifest.triplets if tp.split == split]

    def scene_ids(self, split: Optional[str] = None) -> list:
        if split is None:
            return sorted(self.manifest.scenes)
        return sorted(
            sid for sid, sp in self.manifest.scene_splits.items() if sp == split
        )

    def target_pool(self, split: str) -> list:
        return sorted({tp.target.scene_id for tp in self.split_triplets(split)})

    def render(self, scene_id: int) -> np.ndarray:
        cached = self._render_cache.get(scene_id)
        if cached is None:
            cached = render_scene(self.manifest.scenes[scene_id])
            self._render_cache[scene_id] = cached
        return cached

    def tokenize(self, tokens) -> list:
        if isinstance(tokens, str):
            tokens = tokens.strip().lower().split()
        unknown = [tok for tok in tokens if tok not in self.token_to_id]
        if unknown:
            raise VocabularyError(unknown)
        return [self.token_to_id[tok] for tok in tokens]
