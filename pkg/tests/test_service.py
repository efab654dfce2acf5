"""HTTP facade tests against the tiny trained model via the ASGI test client."""

import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from lgli.evaluation import build_index, retrieve_topk_batch
from lgli.service import ServiceState, create_app


@pytest.fixture(scope="module")
def client(tiny_model, tiny_dataset):
    state = ServiceState(tiny_model, tiny_dataset, split="test")
    app = create_app(state=state)
    return TestClient(app)


def _png_array(body: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(body)))


def test_health_reports_ready(client, tiny_dataset):
    body = client.get("/api/health").json()
    assert body["status"] == "ok" and body["ready"] is True
    assert body["gallery_size"] == len(tiny_dataset.target_pool("test"))


def test_vocab_endpoint_lists_tokens(client, tiny_dataset):
    body = client.get("/api/vocab").json()
    assert body["tokens"] == list(tiny_dataset.vocabulary)


# ---------------------------------------------------------------------------
# listing
# ---------------------------------------------------------------------------

def test_pagination_counts(client, tiny_dataset):
    total = len(tiny_dataset.scene_ids("test"))
    body = client.get("/api/scenes", params={"split": "test", "page": 1, "page_size": 10}).json()
    assert body["total"] == total
    assert len(body["scenes"]) == min(10, total)


def test_pagination_union_covers_split_without_duplicates(client, tiny_dataset):
    seen = []
    page = 1
    while True:
        body = client.get("/api/scenes",
                          params={"split": "test", "page": page, "page_size": 7}).json()
        if not body["scenes"]:
            break
        seen.extend(s["scene_id"] for s in body["scenes"])
        page += 1
    assert len(seen) == len(set(seen))
    assert sorted(seen) == tiny_dataset.scene_ids("test")


def test_total_field_constant_across_pages(client):
    totals = {
        client.get("/api/scenes", params={"split": "test", "page": p, "page_size": 5})
        .json()["total"]
        for p in (1, 2, 3)
    }
    assert len(totals) == 1


def test_invalid_pagination_is_400(client):
    assert client.get("/api/scenes", params={"page": 0}).status_code == 400
    assert client.get("/api/scenes", params={"page_size": 500}).status_code == 400
    assert client.get("/api/scenes", params={"split": "valid8"}).status_code == 400


# ---------------------------------------------------------------------------
# images and overlays
# ---------------------------------------------------------------------------

def test_image_is_256_png(client, tiny_dataset):
    sid = tiny_dataset.scene_ids("test")[0]
    resp = client.get(f"/api/scene/{sid}/image")
    assert resp.status_code == 200
    assert resp.headers["content-type"] == "image/png"
    arr = _png_array(resp.content)
    assert arr.shape == (256, 256, 3)


def test_repeated_image_fetch_is_byte_identical(client, tiny_dataset):
    sid = tiny_dataset.scene_ids("test")[0]
    a = client.get(f"/api/scene/{sid}/image").content
    b = client.get(f"/api/scene/{sid}/image").content
    assert a == b


def test_unknown_scene_404(client):
    assert client.get("/api/scene/999999/image").status_code == 404
    assert client.get("/api/scene/999999/overlay", params={"text": "x"}).status_code == 404


def _localizable_triplet(dataset):
    for tp in dataset.split_triplets("test"):
        if tp.gt_box is not None:
            return tp
    raise RuntimeError("no localizable triplet")


def test_overlay_differs_only_at_box_border(client, tiny_dataset):
    tp = _localizable_triplet(tiny_dataset)
    sid = tp.reference.scene_id
    text = " ".join(tp.modification.text_tokens)
    plain = _png_array(client.get(f"/api/scene/{sid}/image").content).astype(int)
    over = _png_array(
        client.get(f"/api/scene/{sid}/overlay", params={"text": text}).content
    ).astype(int)
    diff = np.argwhere(np.any(plain != over, axis=2))
    assert diff.size > 0
    # all differing pixels sit inside some upscaled region box ring of width 2
    ys, xs = diff[:, 0], diff[:, 1]
    from lgli.lpvl import propose_regions

    boxes = [r.box for r in propose_regions(tp.reference)]
    ok = np.zeros(len(diff), dtype=bool)
    for x0, y0, x1, y1 in boxes:
        X0, Y0, X1, Y1 = 4 * x0, 4 * y0, 4 * x1, 4 * y1
        inside = (ys >= Y0) & (ys < Y1) & (xs >= X0) & (xs < X1)
        ring = inside & ~((ys >= Y0 + 2) & (ys < Y1 - 2) & (xs >= X0 + 2) & (xs < X1 - 2))
        ok |= ring
    assert ok.all()


def test_overlay_with_add_text_equals_plain_image(client, tiny_dataset):
    sid = tiny_dataset.scene_ids("test")[0]
    plain = client.get(f"/api/scene/{sid}/image").content
    over = client.get(f"/api/scene/{sid}/overlay",
                      params={"text": "add small red circle to top-left"}).content
    assert plain == over


def test_overlay_unknown_token_is_422(client, tiny_dataset):
    sid = tiny_dataset.scene_ids("test")[0]
    resp = client.get(f"/api/scene/{sid}/overlay", params={"text": "make frobnitz large"})
    assert resp.status_code == 422
    assert "frobnitz" in resp.json()["tokens"]


# ---------------------------------------------------------------------------
# retrieval endpoint
# ---------------------------------------------------------------------------

def _query(tiny_dataset):
    tp = _localizable_triplet(tiny_dataset)
    return {
        "reference_id": tp.reference.scene_id,
        "text": " ".join(tp.modification.text_tokens),
        "k": 5,
    }, tp


def test_retrieve_returns_k_ranked_results(client, tiny_dataset):
    body, _tp = _query(tiny_dataset)
    resp = client.post("/api/retrieve", json=body)
    assert resp.status_code == 200
    doc = resp.json()
    assert len(doc["results"]) == 5
    ranks = [r["rank"] for r in doc["results"]]
    assert ranks == [1, 2, 3, 4, 5]
    scores = [r["score"] for r in doc["results"]]
    assert scores == sorted(scores, reverse=True)
    assert all(r["score"] == round(r["score"], 6) for r in doc["results"])
    assert doc["localization"]["box"] is not None


def test_retrieve_is_pure(client, tiny_dataset):
    body, _tp = _query(tiny_dataset)
    a = client.post("/api/retrieve", json=body).content
    b = client.post("/api/retrieve", json=body).content
    assert a == b


def test_retrieve_matches_library_evaluation(client, tiny_model, tiny_dataset):
    body, tp = _query(tiny_dataset)
    doc = client.post("/api/retrieve", json=body).json()
    index = build_index(tiny_model, tiny_dataset, "test")
    lib = retrieve_topk_batch(tiny_model, tiny_dataset, [tp], index, k=5)[0]
    assert [r["scene_id"] for r in doc["results"]] == [sid for sid, _ in lib.ranking]


def test_retrieve_unknown_reference_404(client):
    resp = client.post("/api/retrieve",
                       json={"reference_id": 123456, "text": "make blue object red", "k": 1})
    assert resp.status_code == 404


def test_retrieve_oov_token_422_names_tokens(client, tiny_dataset):
    body, _tp = _query(tiny_dataset)
    body["text"] = "make shiny dragon object huge"
    resp = client.post("/api/retrieve", json=body)
    assert resp.status_code == 422
    assert set(resp.json()["tokens"]) >= {"shiny", "dragon"}


def test_retrieve_malformed_bodies_400(client, tiny_dataset):
    assert client.post("/api/retrieve", content=b"{not json").status_code == 400
    assert client.post("/api/retrieve", json={"text": "x"}).status_code == 400
    body, _tp = _query(tiny_dataset)
    body["k"] = 0
    assert client.post("/api/retrieve", json=body).status_code == 400
    body["k"] = 51
    assert client.post("/api/retrieve", json=body).status_code == 400


def test_concat_checkpoint_serves_without_localizer(tiny_dataset):
    from lgli.model import LGLIModel, ModelConfig

    model = LGLIModel.initialize(ModelConfig(
        concat_fallback=True, seed=0, vocabulary=list(tiny_dataset.vocabulary)
    ))
    state = ServiceState(model, tiny_dataset, split="test")
    c = TestClient(create_app(state=state))
    tp = _localizable_triplet(tiny_dataset)
    resp = c.post("/api/retrieve", json={
        "reference_id": tp.reference.scene_id,
        "text": " ".join(tp.modification.text_tokens),
        "k": 3,
    })
    assert resp.status_code == 200
    doc = resp.json()
    assert len(doc["results"]) == 3
    assert doc["localization"]["box"] is None


def test_static_route_serves_ui(tiny_model, tiny_dataset, tmp_path):
    (tmp_path / "index.html").write_text("<html><body>ui shell</body></html>")
    state = ServiceState(tiny_model, tiny_dataset, split="test")
    app = create_app(state=state, static_dir=str(tmp_path))
    c = TestClient(app)
    assert "ui shell" in c.get("/").text
    assert c.get("/api/health").json()["ready"] is True
