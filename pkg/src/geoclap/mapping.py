"""Zero-shot soundscape maps: tile grids over a bounding box, per-query
similarity heatmaps, pseudo-color composites, and georeferenced raster
output (PNG + six-line ESRI world file).

Geometry uses the equirectangular approximation: 111,320 m per degree of
latitude, scaled by cos(latitude) per degree of longitude at the bbox
center. Good enough for regional maps; documented here as the convention.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .audio import WaveformClip, featurize_clip
from .data import IMAGE_FEATURE_DIM, center_crop, image_feature_vector, load_image
from .embedding import EmbeddingVector, l2_normalize
from .encoders import ModelSnapshot
from .errors import EmptyGridError, QueryLimitExceededError, ShapeMismatchError
from .text import featurize_text

METERS_PER_DEG_LAT = 111320.0
MAX_QUERIES = 3

CHANNEL_NAMES = {"r": 0, "g": 1, "b": 2, "red": 0, "green": 1, "blue": 2}


@dataclass(frozen=True)
class GeoBoundingBox:
    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float

    def __post_init__(self):
        if not (-90.0 <= self.min_lat < self.max_lat <= 90.0):
            raise ValueError(f"bad latitude range [{self.min_lat}, {self.max_lat}]")
        if not (-180.0 <= self.min_lon < self.max_lon <= 180.0):
            raise ValueError(f"bad longitude range [{self.min_lon}, {self.max_lon}]")

    @classmethod
    def parse(cls, text: str) -> "GeoBoundingBox":
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError("bbox must be min_lat,min_lon,max_lat,max_lon")
        return cls(*parts)


@dataclass
class TileGrid:
    """Row-major cells from the NW corner; row 0 is the northern edge."""

    bbox: GeoBoundingBox
    rows: int
    cols: int
    stride_m: float
    center_lats: np.ndarray  # rows x cols
    center_lons: np.ndarray
    tile_px: int = 256
    gsd_m: float = 10.0
    features: np.ndarray | None = None  # (rows*cols) x IMAGE_FEATURE_DIM

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def lat_stride_deg(self) -> float:
        return self.stride_m / METERS_PER_DEG_LAT

    @property
    def lon_stride_deg(self) -> float:
        center_lat = 0.5 * (self.bbox.min_lat + self.bbox.max_lat)
        return self.stride_m / (METERS_PER_DEG_LAT * math.cos(math.radians(center_lat)))


def build_tile_grid(
    bbox: GeoBoundingBox, stride_m: float, tile_px: int = 256, gsd_m: float = 10.0
) -> TileGrid:
    """Lay out cells of ``stride_m`` meters across the bbox."""
    if stride_m <= 0:
        raise ValueError("stride must be positive")
    center_lat = 0.5 * (bbox.min_lat + bbox.max_lat)
    ns_extent_m = (bbox.max_lat - bbox.min_lat) * METERS_PER_DEG_LAT
    ew_extent_m = (bbox.max_lon - bbox.min_lon) * METERS_PER_DEG_LAT * math.cos(math.radians(center_lat))
    # epsilon so an extent of exactly k strides yields k cells
    rows = int(math.floor(ns_extent_m / stride_m + 1e-9))
    cols = int(math.floor(ew_extent_m / stride_m + 1e-9))
    if rows < 1 or cols < 1:
        raise EmptyGridError(f"extent {ns_extent_m:.1f}m x {ew_extent_m:.1f}m below stride {stride_m}m")
    lat_step = stride_m / METERS_PER_DEG_LAT
    lon_step = stride_m / (METERS_PER_DEG_LAT * math.cos(math.radians(center_lat)))
    lats = bbox.max_lat - (np.arange(rows) + 0.5) * lat_step
    lons = bbox.min_lon + (np.arange(cols) + 0.5) * lon_step
    center_lats, center_lons = np.meshgrid(lats, lons, indexing="ij")
    return TileGrid(bbox, rows, cols, stride_m, center_lats, center_lons, tile_px, gsd_m)


@dataclass(frozen=True)
class Heatmap:
    scores: np.ndarray  # rows x cols
    query: str
    normalization: str  # "raw" | "minmax"
    grid: TileGrid

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.shape != (self.grid.rows, self.grid.cols):
            raise ValueError(f"scores shape {scores.shape} != grid {self.grid.rows}x{self.grid.cols}")
        if not np.all(np.isfinite(scores)):
            raise ValueError("heatmap contains non-finite scores")
        if self.normalization == "raw" and (scores.min() < -1 - 1e-6 or scores.max() > 1 + 1e-6):
            raise ValueError("raw cosine scores must lie in [-1, 1]")
        if self.normalization == "minmax" and (scores.min() < -1e-9 or scores.max() > 1 + 1e-9):
            raise ValueError("minmax scores must lie in [0, 1]")
        object.__setattr__(self, "scores", scores)


@dataclass(frozen=True)
class CompositeMap:
    """Up to three heatmaps routed to RGB channels; unassigned channels are 0."""

    pixels: np.ndarray  # rows x cols x 3 in [0, 1]
    channels: dict[int, str]  # channel index -> query descriptor
    grid: TileGrid


def similarity_heatmap(query: EmbeddingVector, grid: TileGrid, snapshot: ModelSnapshot) -> Heatmap:
    """Cosine similarity between the query and every tile's image embedding."""
    if grid.features is None:
        raise ValueError("grid has no tile features attached")
    embedded = snapshot.embed("image", grid.features)
    scores = (embedded.rows @ query.values).reshape(grid.rows, grid.cols)
    return Heatmap(scores, query="", normalization="raw", grid=grid)


def minmax_normalize(h: Heatmap) -> Heatmap:
    """(x - min) / (max - min); a degenerate range maps to uniform 0.5."""
    lo, hi = float(h.scores.min()), float(h.scores.max())
    if hi - lo < 1e-12:
        scores = np.full_like(h.scores, 0.5)
    else:
        scores = (h.scores - lo) / (hi - lo)
    return replace(h, scores=scores, normalization="minmax")


def composite_pseudocolor(assignments: list[tuple[Heatmap, int | str]]) -> CompositeMap:
    """Route normalized heatmaps onto RGB channels (at most one per channel)."""
    if not 1 <= len(assignments) <= MAX_QUERIES:
        raise QueryLimitExceededError(f"need 1..{MAX_QUERIES} assignments, got {len(assignments)}")
    resolved: list[tuple[Heatmap, int]] = []
    for heatmap, channel in assignments:
        if isinstance(channel, str):
            channel = CHANNEL_NAMES[channel.lower()]
        if channel not in (0, 1, 2):
            raise ValueError(f"bad channel {channel!r}")
        if heatmap.normalization != "minmax":
            raise ValueError("composite inputs must be minmax-normalized")
        resolved.append((heatmap, channel))
    used = [c for _, c in resolved]
    if len(set(used)) != len(used):
        raise ValueError("each channel may be fed by at most one heatmap")
    shapes = {h.scores.shape for h, _ in resolved}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"heatmap shapes differ: {shapes}")
    grid = resolved[0][0].grid
    pixels = np.zeros((grid.rows, grid.cols, 3))
    channels = {}
    for heatmap, channel in resolved:
        pixels[:, :, channel] = heatmap.scores
        channels[channel] = heatmap.query
    return CompositeMap(pixels, channels, grid)


def _quantize(values: np.ndarray) -> np.ndarray:
    """[0,1] floats to 8-bit, round half up."""
    return np.clip(np.floor(values * 255.0 + 0.5), 0, 255).astype(np.uint8)


def render_png_bytes(obj: CompositeMap | Heatmap) -> bytes:
    """Deterministic PNG encoding shared by the CLI and the HTTP service."""
    if isinstance(obj, CompositeMap):
        img = Image.fromarray(_quantize(obj.pixels), mode="RGB")
    else:
        img = Image.fromarray(_quantize(obj.scores), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def world_file_text(grid: TileGrid) -> str:
    """Six lines: x pixel size, 0, 0, -y pixel size, then the center of the
    upper-left pixel in degrees."""
    ul_lat = float(grid.center_lats[0, 0])
    ul_lon = float(grid.center_lons[0, 0])
    lines = [grid.lon_stride_deg, 0.0, 0.0, -grid.lat_stride_deg, ul_lon, ul_lat]
    return "\n".join(repr(v) for v in lines) + "\n"


def write_raster(obj: CompositeMap | Heatmap, path) -> None:
    """PNG plus the matching .pgw world file."""
    path = Path(path)
    path.write_bytes(render_png_bytes(obj))
    path.with_suffix(".pgw").write_text(world_file_text(obj.grid))


def read_raster(path) -> np.ndarray:
    """Read back a written raster as floats in [0, 1]."""
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.float64) / 255.0


@dataclass(frozen=True)
class MapQuery:
    """One soundscape query: free text, an audio clip, or a raw vector."""

    kind: str  # "text" | "audio" | "vector"
    text: str | None = None
    clip: WaveformClip | None = None
    vector: np.ndarray | None = None
    label: str = ""

    @classmethod
    def from_text(cls, text: str) -> "MapQuery":
        return cls(kind="text", text=text, label=text)

    @classmethod
    def from_audio(cls, clip: WaveformClip, label: str = "audio query") -> "MapQuery":
        return cls(kind="audio", clip=clip, label=label)

    @classmethod
    def from_vector(cls, vector: np.ndarray, label: str = "vector query") -> "MapQuery":
        return cls(kind="vector", vector=np.asarray(vector, dtype=np.float64), label=label)


def _nonzero_features(features: np.ndarray) -> np.ndarray:
    """Degenerate inputs (digital silence, token-free text) standardize to
    the zero feature vector, which has no direction to embed; queries map it
    to a reserved one-hot feature so embedding stays total and deterministic."""
    if np.any(features):
        return features
    out = np.zeros_like(features)
    out[0] = 1.0
    return out


def embed_query(snapshot: ModelSnapshot, query: MapQuery) -> EmbeddingVector:
    if query.kind == "text":
        features = _nonzero_features(featurize_text(query.text))
        return EmbeddingVector(snapshot.embed("text", features[None, :]).rows[0])
    if query.kind == "audio":
        features = _nonzero_features(featurize_clip(query.clip, mode="eval_center"))
        return EmbeddingVector(snapshot.embed("audio", features[None, :]).rows[0])
    if query.kind == "vector":
        return l2_normalize(query.vector)
    raise ValueError(f"unknown query kind {query.kind!r}")


def soundscape_from_queries(
    bbox: GeoBoundingBox,
    queries: list[MapQuery],
    snapshot: ModelSnapshot,
    stride_m: float,
    tile_features: np.ndarray | None = None,
    grid: TileGrid | None = None,
) -> tuple[CompositeMap, list[Heatmap]]:
    """Full pipeline: embed queries, build the grid, score, normalize,
    composite. Queries map to channels R, G, B in order.

    Pass either a prebuilt ``grid`` with features or raw ``tile_features``
    for a grid built here.
    """
    if not 1 <= len(queries) <= MAX_QUERIES:
        raise QueryLimitExceededError(f"need 1..{MAX_QUERIES} queries, got {len(queries)}")
    if grid is None:
        grid = build_tile_grid(bbox, stride_m)
    if grid.features is None:
        if tile_features is None:
            raise ValueError("no tile features supplied")
        tile_features = np.asarray(tile_features, dtype=np.float64)
        if tile_features.shape != (grid.n_cells, IMAGE_FEATURE_DIM):
            raise ShapeMismatchError(
                f"tile features {tile_features.shape} != ({grid.n_cells}, {IMAGE_FEATURE_DIM})"
            )
        grid.features = tile_features
    heatmaps = []
    for query in queries:
        embedded = embed_query(snapshot, query)
        raw = similarity_heatmap(embedded, grid, snapshot)
        heatmaps.append(minmax_normalize(replace(raw, query=query.label)))
    composite = composite_pseudocolor([(h, i) for i, h in enumerate(heatmaps)])
    return composite, heatmaps


def map_metadata(composite: CompositeMap, stride_m: float) -> dict:
    bbox = composite.grid.bbox
    return {
        "bbox": [bbox.min_lat, bbox.min_lon, bbox.max_lat, bbox.max_lon],
        "stride_m": stride_m,
        "rows": composite.grid.rows,
        "cols": composite.grid.cols,
        "queries": [composite.channels.get(c, "") for c in sorted(composite.channels)],
        "channels": {str(c): q for c, q in composite.channels.items()},
        "normalization": "minmax",
    }


def write_map_outputs(
    composite: CompositeMap,
    heatmaps: list[Heatmap],
    out_dir,
    stride_m: float,
) -> dict:
    """CLI output layout: composite + per-query heatmaps + metadata sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_raster(composite, out_dir / "composite.png")
    for i, heatmap in enumerate(heatmaps):
        write_raster(heatmap, out_dir / f"heatmap_{i}.png")
    metadata = map_metadata(composite, stride_m)
    (out_dir / "metadata.json").write_text(json.dumps(metadata, indent=2) + "\n")
    return metadata


def procedural_tile_features(grid: TileGrid, seed: int = 0) -> np.ndarray:
    """Deterministic per-cell features derived from cell coordinates alone,
    so independent processes agree on the same grid."""
    features = np.empty((grid.n_cells, IMAGE_FEATURE_DIM))
    lats = grid.center_lats.reshape(-1)
    lons = grid.center_lons.reshape(-1)
    for i in range(grid.n_cells):
        key = [seed, int(round((lats[i] + 90.0) * 1e6)), int(round((lons[i] + 180.0) * 1e6))]
        features[i] = np.random.default_rng(key).standard_normal(IMAGE_FEATURE_DIM)
    return features


def tile_features_from_npz(path, grid: TileGrid) -> np.ndarray:
    """Load precomputed tile features; count must match the grid."""
    with np.load(path, allow_pickle=False) as data:
        features = np.asarray(data["features"], dtype=np.float64)
    if features.shape != (grid.n_cells, IMAGE_FEATURE_DIM):
        raise ShapeMismatchError(
            f"tile features {features.shape} do not match grid ({grid.n_cells}, {IMAGE_FEATURE_DIM})"
        )
    return features


def tile_features_from_dir(path, grid: TileGrid) -> np.ndarray:
    """Featurize tile_r{row}_c{col}.png images through the eval image path."""
    path = Path(path)
    features = np.empty((grid.n_cells, IMAGE_FEATURE_DIM))
    for r in range(grid.rows):
        for c in range(grid.cols):
            tile = load_image(path / f"tile_r{r}_c{c}.png")
            features[r * grid.cols + c] = image_feature_vector(center_crop(tile))
    return features
