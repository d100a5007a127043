"""HTTP service exposing embedding, retrieval, and soundscape generation.

JSON over HTTP/1.1; the raster comes back base64-inline together with its
world file and metadata, so one round trip serves the map client. The
service layers no numeric transformation on top of the library: responses
are built from the same functions the CLI calls.

Environment: GEOCLAP_SNAPSHOT, GEOCLAP_GALLERY, GEOCLAP_LISTEN, and
optionally GEOCLAP_TILES (precomputed tile-feature .npz; otherwise tile
features are procedurally derived from cell coordinates).
"""
from __future__ import annotations

import base64
import io
import os
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from pydantic import BaseModel, Field

from .audio import load_wav
from .data import TripletFeatureStore, featurize_manifest, load_manifest
from .encoders import ModelSnapshot, load_checkpoint
from .errors import GeoclapError, QueryLimitExceededError
from .mapping import (
    GeoBoundingBox,
    MapQuery,
    build_tile_grid,
    embed_query,
    map_metadata,
    procedural_tile_features,
    render_png_bytes,
    soundscape_from_queries,
    tile_features_from_npz,
    world_file_text,
)

SNAPSHOT_ENV = "GEOCLAP_SNAPSHOT"
GALLERY_ENV = "GEOCLAP_GALLERY"
LISTEN_ENV = "GEOCLAP_LISTEN"
TILES_ENV = "GEOCLAP_TILES"

MAX_AUDIO_SECONDS = 60.0


@dataclass
class ServiceConfig:
    listen: str = "127.0.0.1:8420"
    snapshot_path: str | None = None
    gallery_path: str | None = None
    tiles_path: str | None = None
    max_grid_cells: int = 65536
    timeout_s: float = 60.0
    tile_seed: int = 0

    @classmethod
    def from_env(cls) -> "ServiceConfig":
        return cls(
            listen=os.environ.get(LISTEN_ENV, "127.0.0.1:8420"),
            snapshot_path=os.environ.get(SNAPSHOT_ENV),
            gallery_path=os.environ.get(GALLERY_ENV),
            tiles_path=os.environ.get(TILES_ENV),
        )


class TextEmbedRequest(BaseModel):
    text: str


class QueryItem(BaseModel):
    kind: str  # "text" | "audio"
    value: str  # prompt text, or base64 WAV bytes


class SoundscapeRequest(BaseModel):
    bbox: list[float] = Field(min_length=4, max_length=4)
    stride_m: float
    queries: list[QueryItem]
    include_heatmaps: bool = False


class RetrieveRequest(BaseModel):
    modality_from: str
    modality_to: str
    payload: str
    k: int = 10


def _load_gallery(path: str) -> TripletFeatureStore:
    if path.endswith(".npz"):
        return TripletFeatureStore.load_npz(path)
    manifest = load_manifest(path)
    return featurize_manifest(manifest, root=Path(path).parent)


def _clip_from_b64(payload: str):
    try:
        raw = base64.b64decode(payload, validate=True)
        return load_wav(io.BytesIO(raw))
    except Exception as exc:  # bad base64 or bad WAV both map to 400
        raise HTTPException(status_code=400, detail=f"invalid audio payload: {exc}") from exc


def _clip_from_body(body: bytes):
    try:
        return load_wav(io.BytesIO(body))
    except Exception as exc:
        raise HTTPException(status_code=400, detail=f"invalid WAV body: {exc}") from exc


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig.from_env()
    app = FastAPI(title="geoclap service")
    state = app.state
    state.config = config
    state.snapshot = None
    state.gallery = None
    state.gallery_embeddings = {}
    state.executor = ThreadPoolExecutor(max_workers=2)

    if config.snapshot_path:
        state.snapshot = load_checkpoint(config.snapshot_path)
    if config.gallery_path and state.snapshot is not None:
        state.gallery = _load_gallery(config.gallery_path)
        for modality in ("audio", "text", "image"):
            features = getattr(state.gallery, modality)
            state.gallery_embeddings[modality] = state.snapshot.embed(
                modality, features, ids=state.gallery.ids
            )

    def snapshot_or_503() -> ModelSnapshot:
        if state.snapshot is None:
            raise HTTPException(status_code=503, detail="snapshot not loaded")
        return state.snapshot

    @app.get("/v1/health")
    def health():
        if state.snapshot is None:
            raise HTTPException(status_code=503, detail="snapshot not loaded")
        return {
            "status": "ok",
            "snapshot_hash": state.snapshot.config_hash,
            "gallery_size": len(state.gallery) if state.gallery is not None else 0,
        }

    @app.post("/v1/embed/text")
    def embed_text(req: TextEmbedRequest):
        snapshot = snapshot_or_503()
        if not req.text.strip():
            raise HTTPException(status_code=400, detail="text must be non-empty")
        return {"embedding": embed_query(snapshot, MapQuery.from_text(req.text)).values.tolist()}

    @app.post("/v1/embed/audio")
    async def embed_audio(request: Request):
        snapshot = snapshot_or_503()
        body = await request.body()
        clip = _clip_from_body(body)
        if clip.duration_s > MAX_AUDIO_SECONDS:
            raise HTTPException(status_code=413, detail=f"audio longer than {MAX_AUDIO_SECONDS:.0f}s")
        return {"embedding": embed_query(snapshot, MapQuery.from_audio(clip)).values.tolist()}

    def _tile_features(grid):
        if config.tiles_path:
            return tile_features_from_npz(config.tiles_path, grid)
        return procedural_tile_features(grid, seed=config.tile_seed)

    def _generate_soundscape(req: SoundscapeRequest, snapshot: ModelSnapshot):
        bbox = GeoBoundingBox(*req.bbox)
        grid = build_tile_grid(bbox, req.stride_m)
        if grid.n_cells > config.max_grid_cells:
            raise HTTPException(
                status_code=422,
                detail=f"grid of {grid.n_cells} cells exceeds limit {config.max_grid_cells};"
                " reduce the area or increase the stride",
            )
        grid.features = _tile_features(grid)
        queries = []
        for item in req.queries:
            if item.kind == "text":
                if not item.value.strip():
                    raise HTTPException(status_code=400, detail="empty text query")
                queries.append(MapQuery.from_text(item.value))
            elif item.kind == "audio":
                queries.append(MapQuery.from_audio(_clip_from_b64(item.value)))
            else:
                raise HTTPException(status_code=400, detail=f"unknown query kind {item.kind!r}")
        composite, heatmaps = soundscape_from_queries(
            bbox, queries, snapshot, req.stride_m, grid=grid
        )
        response = {
            "png_base64": base64.b64encode(render_png_bytes(composite)).decode(),
            "world_file": world_file_text(composite.grid),
            "metadata": map_metadata(composite, req.stride_m),
        }
        if req.include_heatmaps:
            response["heatmaps"] = [h.scores.tolist() for h in heatmaps]
        return response

    @app.post("/v1/soundscape")
    def soundscape(req: SoundscapeRequest):
        snapshot = snapshot_or_503()
        if not 1 <= len(req.queries) <= 3:
            raise HTTPException(status_code=400, detail="need between 1 and 3 queries")
        try:
            bbox_probe = GeoBoundingBox(*req.bbox)  # noqa: F841 - validation only
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=f"invalid bbox: {exc}") from exc
        future = state.executor.submit(_generate_soundscape, req, snapshot)
        try:
            return future.result(timeout=config.timeout_s)
        except FutureTimeout:
            raise HTTPException(status_code=504, detail="soundscape generation timed out")
        except QueryLimitExceededError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except GeoclapError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/v1/retrieve")
    def retrieve(req: RetrieveRequest):
        snapshot = snapshot_or_503()
        if state.gallery is None:
            raise HTTPException(status_code=503, detail="gallery not loaded")
        if req.modality_to not in state.gallery_embeddings:
            raise HTTPException(status_code=400, detail=f"unknown target modality {req.modality_to!r}")
        gallery_emb = state.gallery_embeddings[req.modality_to]
        if not 1 <= req.k <= len(gallery_emb.ids):
            raise HTTPException(status_code=400, detail="k must be in [1, gallery size]")
        if req.modality_from == "text":
            if not req.payload.strip():
                raise HTTPException(status_code=400, detail="empty text payload")
            query = embed_query(snapshot, MapQuery.from_text(req.payload))
        elif req.modality_from == "audio":
            query = embed_query(snapshot, MapQuery.from_audio(_clip_from_b64(req.payload)))
        else:
            raise HTTPException(status_code=400, detail=f"unsupported query modality {req.modality_from!r}")
        scores = gallery_emb.rows @ query.values
        order = np.argsort(-scores, kind="stable")[: req.k]
        return {
            "results": [
                {"id": gallery_emb.ids[i], "score": float(scores[i])} for i in order
            ]
        }

    return app


def run(config: ServiceConfig | None = None) -> None:
    """Blocking uvicorn server (CLI ``serve`` entry point)."""
    import uvicorn

    config = config or ServiceConfig.from_env()
    host, _, port = config.listen.rpartition(":")
    uvicorn.run(create_app(config), host=host or "127.0.0.1", port=int(port))
