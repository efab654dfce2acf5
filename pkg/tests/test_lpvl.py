"""Localization tests: proposers, embedders, argmax selection, masks."""

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgli.lpvl import (
    InsufficientPositivesError,
    LocalizerConfig,
    OneHotEmbedder,
    Region,
    TwoTowerEmbedder,
    crop_and_resize,
    init_localizer_params,
    localization_accuracy,
    localize,
    localizer_batch_loss,
    propose_regions,
    render_mask,
    train_localizer,
)
from lgli.scenes import (
    Dataset,
    GenerationConfig,
    SceneObject,
    SceneSpec,
    render_scene,
    sample_scene,
)


class StubEmbedder:
    """Region features are basis vectors; text feature encodes given scores."""

    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=float)

    def embed_regions(self, regions):
        return np.eye(len(regions), len(self.scores))

    def embed_text(self, tokens):
        return self.scores


def _region(box):
    crop = np.zeros((3, 16, 16))
    return Region(box, crop, "oracle")


# ---------------------------------------------------------------------------
# proposers
# ---------------------------------------------------------------------------

def test_oracle_proposes_one_region_per_object():
    spec = SceneSpec(objects=[
        SceneObject("circle", "red", "small", (0, 0)),
        SceneObject("square", "blue", "large", (2, 2)),
    ])
    regions = propose_regions(spec, mode="oracle")
    assert len(regions) == 2
    assert all(r.source == "oracle" for r in regions)
    assert regions[0].crop.shape == (3, 16, 16)


def test_empty_scene_proposes_nothing():
    assert propose_regions(SceneSpec(objects=[]), mode="oracle") == []
    blank = np.ones((3, 64, 64))
    assert propose_regions(blank, mode="heuristic") == []


def test_heuristic_boxes_contain_oracle_boxes_over_500_scenes():
    cfg = GenerationConfig(min_objects=1, max_objects=4, seed=0)
    rng = random.Random(123)
    contained = 0
    total = 0
    for _ in range(500):
        spec = sample_scene(rng, cfg, "train")
        image = render_scene(spec)
        oracle = propose_regions(spec, mode="oracle", image=image)
        heur = propose_regions(spec, mode="heuristic", image=image)
        assert len(heur) == len(oracle)
        heur_boxes = {r.box for r in heur}
        for reg in oracle:
            total += 1
            x0, y0, x1, y1 = reg.box
            if any(hx0 <= x0 and hy0 <= y0 and hx1 >= x1 and hy1 >= y1
                   for hx0, hy0, hx1, hy1 in heur_boxes):
                contained += 1
    assert contained / total == 1.0


def test_single_object_heuristic_contains_oracle():
    spec = SceneSpec(objects=[SceneObject("triangle", "green", "small", (1, 2))])
    oracle = propose_regions(spec, mode="oracle")[0]
    heur = propose_regions(spec, mode="heuristic")
    assert len(heur) == 1
    hx0, hy0, hx1, hy1 = heur[0].box
    x0, y0, x1, y1 = oracle.box
    assert hx0 <= x0 and hy0 <= y0 and hx1 >= x1 and hy1 >= y1


def test_crop_is_deterministic():
    spec = SceneSpec(objects=[SceneObject("circle", "purple", "large", (1, 1))])
    image = render_scene(spec)
    a = crop_and_resize(image, (10, 10, 30, 40))
    b = crop_and_resize(image, (10, 10, 30, 40))
    assert a.shape == (3, 16, 16)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# localization selection
# ---------------------------------------------------------------------------

def test_single_candidate_is_selected():
    regions = [_region((0, 0, 8, 8))]
    out = localize(regions, ["top-left", "small", "red", "object"], StubEmbedder([0.3]))
    assert out is regions[0]


def test_argmax_selection():
    regions = [_region((0, 0, 8, 8)), _region((8, 8, 16, 16)), _region((16, 16, 24, 24))]
    out = localize(regions, ["x"], StubEmbedder([0.2, 0.9, 0.4]))
    assert out is regions[1]


def test_tie_breaks_to_lowest_index():
    regions = [_region((0, 0, 8, 8)), _region((8, 8, 16, 16))]
    out = localize(regions, ["x"], StubEmbedder([0.7, 0.7]))
    assert out is regions[0]


def test_empty_inputs_give_none():
    assert localize([], ["x"], StubEmbedder([1.0])) is None
    assert localize([_region((0, 0, 4, 4))], [], StubEmbedder([1.0])) is None


def test_argmax_invariant_to_positive_rescaling():
    regions = [_region((0, 0, 8, 8)), _region((8, 8, 16, 16)), _region((16, 16, 24, 24))]
    base = StubEmbedder([0.1, 0.5, 0.3])
    scaled = StubEmbedder([3 * 0.1, 3 * 0.5, 3 * 0.3])
    assert localize(regions, ["x"], base) is regions[1]
    assert localize(regions, ["x"], scaled) is regions[1]


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

def test_none_region_gives_all_zero_mask():
    assert np.all(render_mask(None) == 0.0)


def test_full_frame_box_gives_all_ones_mask():
    assert np.all(render_mask(_region((0, 0, 64, 64))) == 1.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 63), st.integers(0, 63), st.integers(1, 64), st.integers(1, 64))
def test_mask_sum_is_three_times_area(x0, y0, w, h):
    x1, y1 = min(x0 + w, 64), min(y0 + h, 64)
    mask = render_mask(_region((x0, y0, x1, y1)))
    assert set(np.unique(mask)) <= {0.0, 1.0}
    assert mask.sum() == 3 * (x1 - x0) * (y1 - y0)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def test_identical_pairs_give_log_batch_loss(tiny_dataset):
    rng = np.random.default_rng(0)
    params = init_localizer_params(rng, len(tiny_dataset.vocabulary))
    b = 8
    crop = rng.random((3, 16, 16))
    crops = np.stack([crop] * b)
    ids = [[1, 2, 3]] * b
    loss = localizer_batch_loss(params, crops, ids, scale=10.0)
    assert loss.item() == pytest.approx(np.log(b), abs=1e-6)


def test_loss_decreases_over_first_five_epochs(default_dataset):
    _params, history = train_localizer(
        default_dataset, LocalizerConfig(epochs=5, seed=0)
    )
    assert len(history) == 5
    assert all(b < a for a, b in zip(history, history[1:]))


def test_trained_positive_cosine_beats_random(tiny_dataset, tiny_localizer):
    params, _ = tiny_localizer
    embedder = TwoTowerEmbedder(params, tiny_dataset.vocabulary)
    pos, rand_scores = [], []
    rng = np.random.default_rng(5)
    trips = [tp for tp in tiny_dataset.split_triplets("test") if tp.gt_box is not None]
    for tp in trips:
        image = tiny_dataset.render(tp.reference.scene_id)
        regions = propose_regions(tp.reference, image=image)
        feats = embedder.embed_regions(regions)
        text = embedder.embed_text(tp.modification.localization_text_tokens)
        gt = [i for i, r in enumerate(regions) if r.box == tuple(tp.gt_box)]
        pos.append(float(feats[gt[0]] @ text))
        rand_scores.append(float(feats[rng.integers(len(regions))] @
                                 embedder.embed_text(["top-left", "small", "red", "object"])))
    assert np.mean(pos) > np.mean(rand_scores)


def test_insufficient_positives_raises(tiny_dataset):
    manifest = tiny_dataset.manifest
    import copy

    slim = copy.copy(manifest)
    slim.triplets = [tp for tp in manifest.triplets if tp.modification.op == "Add"]
    with pytest.raises(InsufficientPositivesError):
        train_localizer(Dataset(slim), LocalizerConfig(epochs=1))


# ---------------------------------------------------------------------------
# the synthetic one-hot embedder self-test
# ---------------------------------------------------------------------------

def _descriptor_unique(tp):
    sizes_colors = [(o.size, o.color) for o in tp.reference.objects]
    obj = tp.reference.object_at(tp.modification.target_cell)
    return sizes_colors.count((obj.size, obj.color)) == 1


def test_one_hot_embedder_is_perfect_on_unambiguous_queries(tiny_dataset):
    embedder = OneHotEmbedder()
    total, hit = 0, 0
    for tp in tiny_dataset.split_triplets("test"):
        if tp.gt_box is None or not _descriptor_unique(tp):
            continue
        regions = propose_regions(tp.reference,
                                  image=tiny_dataset.render(tp.reference.scene_id))
        chosen = localize(regions, tp.modification.localization_text_tokens, embedder)
        total += 1
        hit += chosen is not None and tuple(chosen.box) == tuple(tp.gt_box)
    assert total > 0
    assert hit == total


def test_one_hot_embedder_full_accuracy_metric(tiny_dataset):
    acc = localization_accuracy(tiny_dataset, OneHotEmbedder(), split="test")
    assert acc == 1.0
