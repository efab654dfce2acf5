"""Read-only retrieval service over a trained checkpoint.

All state is loaded at startup and never mutated; request handling is
pure, so identical requests produce identical bodies.  Images ship as
lossless PNGs upscaled 4x for visibility.
"""

from __future__ import annotations

import io
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .evaluation import build_index, rank_scores
from .model import LGLIModel, build_mask_batch
from .scenes import Dataset, VocabularyError, localization_tokens_from_text
from .tensor import no_grad

UPSCALE = 4
MAX_K = 50
BOX_COLOR = (0, 255, 0)  # localization box drawn in green


def scene_png(image: np.ndarray, box: Optional[tuple] = None) -> bytes:
    """4x nearest-neighbor upscale; optional 2px box border burned in."""
    arr = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    arr = arr.transpose(1, 2, 0).repeat(UPSCALE, axis=0).repeat(UPSCALE, axis=1)
    if box is not None:
        x0, y0, x1, y1 = (int(v) * UPSCALE for v in box)
        color = np.array(BOX_COLOR, dtype=np.uint8)
        w = 2
        arr[y0 : y0 + w, x0:x1] = color
        arr[y1 - w : y1, x0:x1] = color
        arr[y0:y1, x0 : x0 + w] = color
        arr[y0:y1, x1 - w : x1] = color
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


class ServiceState:
    """Checkpoint, dataset, and gallery index; immutable after startup."""

    def __init__(self, model: LGLIModel, dataset: Dataset, split: str = "test"):
        self.model = model
        self.dataset = dataset
        self.split = split
        self.index = build_index(model, dataset, split)

    def can_localize(self) -> bool:
        cfg = self.model.config
        return (not cfg.disable_mask and not cfg.concat_fallback
                and self.model.localizer() is not None)

    def compose_feature(self, reference_id: int, tokens: list):
        ds = self.dataset
        image = ds.render(reference_id)
        scene = ds.scenes[reference_id]
        loc_tokens = localization_tokens_from_text(tokens)
        box = None
        if loc_tokens and self.can_localize():
            box = self.model.localize_box(ds, scene, loc_tokens, image=image)
        token_ids = ds.tokenize(tokens)
        if self.model.config.disable_mask or self.model.config.concat_fallback:
            masks, ids = None, None
        else:
            masks, ids = build_mask_batch([box])
        with no_grad():
            composed = self.model.compose_query(image[None], [token_ids], masks, ids)
        return self.model.final_feature(composed)[0], box, loc_tokens


def create_app(ckpt_path=None, data_path=None, split: str = "test",
               static_dir=None, state: Optional[ServiceState] = None) -> FastAPI:
    if state is None:
        model = LGLIModel.load(ckpt_path)
        dataset = Dataset.load(data_path)
        state = ServiceState(model, dataset, split)
    app = FastAPI(title="lgli retrieval service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    ds = state.dataset

    def scene_or_404(scene_id: int):
        if scene_id not in ds.scenes:
            return None
        return ds.scenes[scene_id]

    @app.get("/api/health")
    def health():
        return {
            "status": "ok",
            "ready": True,
            "split": state.split,
            "gallery_size": len(state.index.scene_ids),
            "vocabulary_size": len(ds.vocabulary),
        }

    @app.get("/api/vocab")
    def vocab():
        return {"tokens": list(ds.vocabulary)}

    @app.get("/api/scenes")
    def list_scenes(split: str = state.split, page: int = 1, page_size: int = 20):
        if split not in ("train", "test"):
            return JSONResponse({"error": f"unknown split {split!r}"}, status_code=400)
        if page < 1 or page_size < 1 or page_size > 100:
            return JSONResponse({"error": "invalid pagination"}, status_code=400)
        ids = ds.scene_ids(split)
        start = (page - 1) * page_size
        chunk = ids[start : start + page_size]
        return {
            "scenes": [
                {"scene_id": sid, "thumbnail_url": f"/api/scene/{sid}/image"}
                for sid in chunk
            ],
            "total": len(ids),
            "page": page,
            "page_size": page_size,
        }

    @app.get("/api/scene/{scene_id}/image")
    def scene_image(scene_id: int):
        if scene_or_404(scene_id) is None:
            return JSONResponse({"error": f"unknown scene {scene_id}"}, status_code=404)
        return Response(scene_png(ds.render(scene_id)), media_type="image/png")

    @app.get("/api/scene/{scene_id}/overlay")
    def scene_overlay(scene_id: int, text: str = ""):
        scene = scene_or_404(scene_id)
        if scene is None:
            return JSONResponse({"error": f"unknown scene {scene_id}"}, status_code=404)
        tokens = text.strip().lower().split()
        try:
            ds.tokenize(tokens)
        except VocabularyError as exc:
            return JSONResponse(
                {"error": "unknown tokens", "tokens": exc.tokens}, status_code=422
            )
        box = None
        loc_tokens = localization_tokens_from_text(tokens)
        if loc_tokens and state.can_localize():
            box = state.model.localize_box(ds, scene, loc_tokens, image=ds.render(scene_id))
        return Response(scene_png(ds.render(scene_id), box), media_type="image/png")

    @app.post("/api/retrieve")
    async def retrieve(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "malformed JSON body"}, status_code=400)
        if not isinstance(body, dict):
            return JSONResponse({"error": "body must be an object"}, status_code=400)
        try:
            reference_id = int(body["reference_id"])
            text = str(body["text"])
            k = int(body.get("k", 10))
        except (KeyError, TypeError, ValueError) as exc:
            return JSONResponse({"error": f"malformed body: {exc}"}, status_code=400)
        if not (1 <= k <= MAX_K):
            return JSONResponse({"error": f"k must be in [1, {MAX_K}]"}, status_code=400)
        if scene_or_404(reference_id) is None:
            return JSONResponse(
                {"error": f"unknown reference {reference_id}"}, status_code=404
            )
        tokens = text.strip().lower().split()
        if not tokens:
            return JSONResponse({"error": "empty text"}, status_code=400)
        try:
            feature, box, loc_tokens = state.compose_feature(reference_id, tokens)
        except VocabularyError as exc:
            return JSONResponse(
                {"error": "unknown tokens", "tokens": exc.tokens}, status_code=422
            )
        ranking = rank_scores(state.index, feature)[:k]
        return {
            "results": [
                {
                    "scene_id": sid,
                    "score": round(score, 6),
                    "rank": i + 1,
                    "image_url": f"/api/scene/{sid}/image",
                }
                for i, (sid, score) in enumerate(ranking)
            ],
            "localization": {
                "box": list(box) if box is not None else None,
                "localization_text": " ".join(loc_tokens),
            },
        }

    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app
