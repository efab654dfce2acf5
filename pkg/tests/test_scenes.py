"""Dataset generation: sampling, rendering, grammar, and split hygiene."""

import random

import numpy as np
import pytest

from lgli.scenes import (
    COLORS,
    GenerationConfig,
    HoldoutOverlapError,
    InfeasibleConfigError,
    Manifest,
    SceneObject,
    SceneSpec,
    VOCABULARY,
    Dataset,
    build_splits,
    extract_localization_text,
    generate_triplet,
    read_image_raw,
    render_scene,
    sample_scene,
    write_image_raw,
)


def small_config(**kw):
    defaults = dict(train_triplets=40, test_triplets=10, seed=3)
    defaults.update(kw)
    return GenerationConfig(**defaults)


# ---------------------------------------------------------------------------
# independent symbolic interpreter (oracle): re-applies a modification by
# parsing the sentence from scratch
# ---------------------------------------------------------------------------

_ROWS = {"top": 0, "middle": 1, "bottom": 2}
_COLS = {"left": 0, "center": 1, "right": 2}


def interpret(reference: SceneSpec, tokens: list) -> set:
    objs = {(o.shape, o.color, o.size, o.cell) for o in reference.objects}
    if tokens[0] == "add":
        size, color, shape = tokens[1], tokens[2], tokens[3]
        row_w, col_w = tokens[5].split("-")
        objs.add((shape, color, size, (_ROWS[row_w], _COLS[col_w])))
        return objs
    row_w, col_w = tokens[1].split("-")
    cell = (_ROWS[row_w], _COLS[col_w])
    victim = next(o for o in objs if o[3] == cell)
    objs.remove(victim)
    if tokens[0] == "remove":
        return objs
    new_attr = tokens[5]
    if new_attr in ("small", "large"):
        objs.add((victim[0], victim[1], new_attr, cell))
    else:
        objs.add((victim[0], new_attr, victim[2], cell))
    return objs


def as_set(spec: SceneSpec) -> set:
    return {(o.shape, o.color, o.size, o.cell) for o in spec.objects}


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_single_object_config_yields_single_object():
    cfg = small_config(min_objects=1, max_objects=1)
    spec = sample_scene(random.Random(0), cfg, "train")
    assert len(spec.objects) == 1


def test_same_seed_same_scene():
    cfg = small_config()
    a = sample_scene(random.Random(9), cfg, "train")
    b = sample_scene(random.Random(9), cfg, "train")
    assert a.canonical() == b.canonical()


def test_train_samples_never_contain_held_out_pairs():
    cfg = small_config()
    held = {tuple(p) for p in cfg.holdout["train"]}
    rng = random.Random(1)
    for _ in range(10_000):
        spec = sample_scene(rng, cfg, "train")
        assert not any((o.shape, o.color) in held for o in spec.objects)


def test_infeasible_object_count_rejected():
    with pytest.raises(InfeasibleConfigError):
        small_config(min_objects=1, max_objects=10).validate()


def test_overlapping_holdouts_rejected():
    cfg = small_config(holdout={"train": [("circle", "red")], "test": [("circle", "red")]})
    with pytest.raises(HoldoutOverlapError):
        cfg.validate()


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def test_empty_cells_are_pure_white():
    spec = SceneSpec(objects=[SceneObject("square", "red", "large", (0, 0))])
    img = render_scene(spec)
    # everything right of column 21 is untouched background
    assert np.all(img[:, :, 22:] == 1.0)
    assert np.all(img[:, 22:, :] == 1.0)


def test_large_red_square_paints_only_its_cell():
    spec = SceneSpec(objects=[SceneObject("square", "red", "large", (0, 0))])
    img = render_scene(spec)
    colored = np.argwhere(~np.all(img == 1.0, axis=0))
    assert colored.size > 0
    ys, xs = colored[:, 0], colored[:, 1]
    assert ys.min() >= 1 and ys.max() <= 20 and xs.min() >= 1 and xs.max() <= 20
    rr = img[:, ys[0], xs[0]]
    assert tuple(rr) == COLORS["red"]


def _pixel_count(shape, size):
    spec = SceneSpec(objects=[SceneObject(shape, "blue", size, (1, 1))])
    img = render_scene(spec)
    return int((~np.all(img == 1.0, axis=0)).sum())


def _enumerated_count(shape, extent):
    # independent geometric enumeration over pixel centers
    count = 0
    c = extent / 2.0
    for y in range(extent):
        for x in range(extent):
            yc, xc = y + 0.5, x + 0.5
            if shape == "square":
                count += 1
            elif shape == "circle":
                count += (yc - c) ** 2 + (xc - c) ** 2 <= c * c
            else:
                count += abs(xc - c) <= (y + 1) / 2.0
    return count


@pytest.mark.parametrize("shape,small,large,ratio", [
    ("square", 64, 256, 4.0),
    ("circle", 52, 208, 4.0),
    ("triangle", 40, 144, 3.6),
])
def test_small_large_pixel_counts_and_area_ratio(shape, small, large, ratio):
    assert _enumerated_count(shape, 8) == small
    assert _enumerated_count(shape, 16) == large
    assert _pixel_count(shape, "small") == small
    assert _pixel_count(shape, "large") == large
    assert _pixel_count(shape, "large") / _pixel_count(shape, "small") == pytest.approx(ratio)


def test_rendering_is_pure():
    spec = SceneSpec(objects=[
        SceneObject("triangle", "cyan", "small", (2, 1)),
        SceneObject("circle", "brown", "large", (0, 2)),
    ])
    assert np.array_equal(render_scene(spec), render_scene(spec))


# ---------------------------------------------------------------------------
# triplets and grammar
# ---------------------------------------------------------------------------

def test_change_size_sentence_matches_template():
    cfg = small_config(min_objects=1, max_objects=1)
    spec = SceneSpec(objects=[SceneObject("circle", "gray", "small", (1, 0))])
    for seed in range(60):
        tp = generate_triplet(random.Random(seed), spec, "train", cfg)
        if tp.modification.op == "ChangeSize":
            assert tp.modification.text_tokens == [
                "make", "middle-left", "small", "gray", "object", "large",
            ]
            assert tp.modification.localization_text_tokens == [
                "middle-left", "small", "gray", "object",
            ]
            return
    pytest.fail("no ChangeSize modification drawn in 60 seeds")


def test_remove_only_object_empties_scene():
    cfg = small_config(min_objects=1, max_objects=1)
    spec = SceneSpec(objects=[SceneObject("square", "blue", "large", (2, 2))])
    for seed in range(60):
        tp = generate_triplet(random.Random(seed), spec, "train", cfg)
        if tp.modification.op == "Remove":
            assert tp.target.objects == []
            return
    pytest.fail("no Remove modification drawn in 60 seeds")


def test_thousand_triplets_round_trip_through_interpreter():
    cfg = small_config()
    rng = random.Random(17)
    done = 0
    while done < 1000:
        spec = sample_scene(rng, cfg, "train")
        tp = generate_triplet(rng, spec, "train", cfg)
        assert interpret(tp.reference, tp.modification.text_tokens) == as_set(tp.target)
        done += 1


def _assert_contiguous_descriptor(tp):
    loc = extract_localization_text(tp.modification)
    assert loc == tp.modification.localization_text_tokens
    if tp.modification.op == "Add":
        assert loc == []
        return
    text = tp.modification.text_tokens
    n = len(loc)
    assert any(text[i:i + n] == loc for i in range(len(text) - n + 1))


def test_localization_text_is_contiguous_subsequence():
    cfg = small_config()
    rng = random.Random(5)
    for _ in range(300):
        spec = sample_scene(rng, cfg, "train")
        _assert_contiguous_descriptor(generate_triplet(rng, spec, "train", cfg))


def test_localization_text_contiguous_across_whole_manifest(manifest):
    for tp in manifest.triplets:
        _assert_contiguous_descriptor(tp)


def test_every_emitted_token_is_in_vocabulary():
    cfg = small_config()
    rng = random.Random(11)
    vocab = set(VOCABULARY)
    for _ in range(500):
        spec = sample_scene(rng, cfg, "test")
        tp = generate_triplet(rng, spec, "test", cfg)
        assert set(tp.modification.text_tokens) <= vocab


# ---------------------------------------------------------------------------
# splits / manifest
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def manifest():
    return build_splits(small_config(train_triplets=120, test_triplets=40))


def test_manifest_counts_echo_config(manifest):
    assert len([t for t in manifest.triplets if t.split == "train"]) == 120
    assert len([t for t in manifest.triplets if t.split == "test"]) == 40


def test_no_split_leakage(manifest):
    cfg = manifest.config
    for split in ("train", "test"):
        held = {tuple(p) for p in cfg.holdout[split]}
        for sid, s in manifest.scene_splits.items():
            if s != split:
                continue
            spec = manifest.scenes[sid]
            assert not any((o.shape, o.color) in held for o in spec.objects)


def test_target_pool_holds_each_target_exactly_once(manifest):
    ds = Dataset(manifest)
    pool = ds.target_pool("test")
    assert len(pool) == len(set(pool))
    canon = [manifest.scenes[sid].canonical() for sid in pool]
    assert len(canon) == len(set(canon))


def test_triplet_targets_match_symbolic_application(manifest):
    for tp in manifest.triplets:
        assert interpret(tp.reference, tp.modification.text_tokens) == as_set(tp.target)


def test_manifest_json_round_trip(tmp_path, manifest):
    path = tmp_path / "manifest.json"
    manifest.save(path)
    loaded = Manifest.load(path)
    assert loaded.to_json_dict() == manifest.to_json_dict()


def test_build_splits_deterministic():
    a = build_splits(small_config(train_triplets=30, test_triplets=10))
    b = build_splits(small_config(train_triplets=30, test_triplets=10))
    assert a.to_json_dict() == b.to_json_dict()


def test_dataset_tokenize_rejects_unknown_tokens(manifest):
    ds = Dataset(manifest)
    with pytest.raises(Exception) as ei:
        ds.tokenize("make sparkly object vanish")
    assert "sparkly" in str(ei.value)


def test_raw_image_file_round_trip(tmp_path):
    spec = SceneSpec(objects=[SceneObject("circle", "green", "small", (0, 1))])
    img = render_scene(spec)
    path = tmp_path / "scene.raw"
    write_image_raw(path, img)
    back = read_image_raw(path)
    assert back.shape == (3, 64, 64)
    assert np.array_equal(back, img)


def test_raw_image_truncation_detected(tmp_path):
    path = tmp_path / "scene.raw"
    write_image_raw(path, np.zeros((3, 4, 4)))
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(Exception, match="bytes"):
        read_image_raw(path)
