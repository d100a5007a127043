import json
import math

import numpy as np
import pytest

from geoclap.data import IMAGE_FEATURE_DIM
from geoclap.embedding import EmbeddingVector, l2_normalize
from geoclap.encoders import ModelConfig, init_snapshot
from geoclap.errors import EmptyGridError, QueryLimitExceededError
from geoclap.mapping import (
    METERS_PER_DEG_LAT,
    CompositeMap,
    GeoBoundingBox,
    Heatmap,
    MapQuery,
    build_tile_grid,
    composite_pseudocolor,
    embed_query,
    minmax_normalize,
    procedural_tile_features,
    read_raster,
    render_png_bytes,
    similarity_heatmap,
    soundscape_from_queries,
    tile_features_from_npz,
    world_file_text,
    write_map_outputs,
    write_raster,
)


def equator_bbox(extent_m, center_lat=0.0):
    half_lat = extent_m / 2 / METERS_PER_DEG_LAT
    half_lon = extent_m / 2 / (METERS_PER_DEG_LAT * math.cos(math.radians(center_lat)))
    return GeoBoundingBox(center_lat - half_lat, -half_lon, center_lat + half_lat, half_lon)


@pytest.fixture
def snapshot():
    return init_snapshot(ModelConfig(embed_dim=16, hidden_dims=(12,)), seed=19)


@pytest.fixture
def grid10(snapshot):
    grid = build_tile_grid(equator_bbox(1000.0), stride_m=100.0)
    grid.features = procedural_tile_features(grid, seed=4)
    return grid


def test_grid_1km_at_equator_is_10x10():
    grid = build_tile_grid(equator_bbox(1000.0), stride_m=100.0)
    assert (grid.rows, grid.cols) == (10, 10)
    assert grid.n_cells == 100


def test_grid_row_major_from_nw():
    grid = build_tile_grid(equator_bbox(1000.0), stride_m=100.0)
    assert grid.center_lats[0, 0] > grid.center_lats[-1, 0]  # row 0 is north
    assert grid.center_lons[0, 0] < grid.center_lons[0, -1]  # col 0 is west
    bbox = grid.bbox
    assert np.all(grid.center_lats < bbox.max_lat) and np.all(grid.center_lats > bbox.min_lat)
    assert np.all(grid.center_lons < bbox.max_lon) and np.all(grid.center_lons > bbox.min_lon)


def test_grid_longitude_scaling_at_60_degrees():
    # 2000 m of longitude extent at 60N spans twice the degrees it would at
    # the equator; cols still come out by true meters
    bbox = equator_bbox(2000.0, center_lat=60.0)
    grid = build_tile_grid(bbox, stride_m=200.0)
    assert grid.cols == 10
    lon_extent_deg = bbox.max_lon - bbox.min_lon
    assert lon_extent_deg == pytest.approx(
        2000.0 / (METERS_PER_DEG_LAT * 0.5), rel=1e-6
    )


def test_grid_stride_exceeds_extent():
    with pytest.raises(EmptyGridError):
        build_tile_grid(equator_bbox(50.0), stride_m=100.0)


def test_bbox_validation():
    with pytest.raises(ValueError):
        GeoBoundingBox(10.0, 0.0, 5.0, 1.0)
    with pytest.raises(ValueError):
        GeoBoundingBox(-95.0, 0.0, 5.0, 1.0)
    parsed = GeoBoundingBox.parse("1.0,2.0,3.0,4.0")
    assert parsed == GeoBoundingBox(1.0, 2.0, 3.0, 4.0)


def test_heatmap_matching_cell_scores_one(snapshot, grid10):
    embedded = snapshot.embed("image", grid10.features)
    query = EmbeddingVector(embedded.rows[37])
    heatmap = similarity_heatmap(query, grid10, snapshot)
    assert heatmap.scores.reshape(-1)[37] == pytest.approx(1.0, abs=1e-9)
    assert int(np.argmax(heatmap.scores)) == 37
    assert heatmap.scores.min() >= -1 - 1e-9 and heatmap.scores.max() <= 1 + 1e-9


def test_heatmap_constant_cells(snapshot):
    grid = build_tile_grid(equator_bbox(400.0), stride_m=100.0)
    grid.features = np.tile(np.random.default_rng(0).standard_normal(IMAGE_FEATURE_DIM), (grid.n_cells, 1))
    query = l2_normalize(np.random.default_rng(1).standard_normal(16))
    heatmap = similarity_heatmap(query, grid, snapshot)
    assert np.ptp(heatmap.scores) < 1e-12


def test_heatmap_matches_loop_oracle(snapshot, grid10):
    query = l2_normalize(np.random.default_rng(2).standard_normal(16))
    heatmap = similarity_heatmap(query, grid10, snapshot)
    embedded = snapshot.embed("image", grid10.features)
    for cell in range(0, grid10.n_cells, 17):
        expected = float(np.dot(embedded.rows[cell], query.values))
        r, c = divmod(cell, grid10.cols)
        assert heatmap.scores[r, c] == pytest.approx(expected, abs=1e-12)


def test_minmax_already_normalized():
    grid = build_tile_grid(equator_bbox(300.0), stride_m=100.0)
    h = Heatmap(np.tile([0.0, 0.5, 1.0], (3, 1)), "q", "raw", grid)
    out = minmax_normalize(h)
    assert np.allclose(out.scores, h.scores)
    assert out.normalization == "minmax"


def test_minmax_degenerate_maps_to_half(grid10):
    h = Heatmap(np.full((grid10.rows, grid10.cols), 0.3), "q", "raw", grid10)
    assert np.all(minmax_normalize(h).scores == 0.5)


def test_minmax_preserves_argmax(snapshot, grid10):
    query = l2_normalize(np.random.default_rng(3).standard_normal(16))
    raw = similarity_heatmap(query, grid10, snapshot)
    normalized = minmax_normalize(raw)
    assert np.argmax(raw.scores) == np.argmax(normalized.scores)


def test_composite_single_red_channel(grid10):
    ones = Heatmap(np.ones((grid10.rows, grid10.cols)), "full", "minmax", grid10)
    comp = composite_pseudocolor([(ones, "r")])
    assert np.all(comp.pixels[:, :, 0] == 1.0)
    assert np.all(comp.pixels[:, :, 1:] == 0.0)


def test_composite_three_identical_grayscale(grid10):
    scores = np.random.default_rng(4).uniform(size=(grid10.rows, grid10.cols))
    maps = [Heatmap(scores, f"q{i}", "minmax", grid10) for i in range(3)]
    comp = composite_pseudocolor(list(zip(maps, (0, 1, 2))))
    assert np.array_equal(comp.pixels[:, :, 0], comp.pixels[:, :, 1])
    assert np.array_equal(comp.pixels[:, :, 0], comp.pixels[:, :, 2])


def test_composite_elementwise_equality(grid10):
    rng = np.random.default_rng(5)
    a = Heatmap(rng.uniform(size=(grid10.rows, grid10.cols)), "a", "minmax", grid10)
    b = Heatmap(rng.uniform(size=(grid10.rows, grid10.cols)), "b", "minmax", grid10)
    comp = composite_pseudocolor([(a, 2), (b, 0)])
    assert np.array_equal(comp.pixels[:, :, 2], a.scores)
    assert np.array_equal(comp.pixels[:, :, 0], b.scores)
    assert np.all(comp.pixels[:, :, 1] == 0.0)


def test_composite_rejects_duplicate_channel(grid10):
    h = Heatmap(np.ones((grid10.rows, grid10.cols)), "q", "minmax", grid10)
    with pytest.raises(ValueError):
        composite_pseudocolor([(h, 0), (h, "red")])


def test_composite_rejects_raw(grid10):
    h = Heatmap(np.zeros((grid10.rows, grid10.cols)), "q", "raw", grid10)
    with pytest.raises(ValueError):
        composite_pseudocolor([(h, 0)])


def test_write_raster_quantization(tmp_path):
    grid = build_tile_grid(equator_bbox(100.0), stride_m=100.0)
    one = CompositeMap(np.ones((1, 1, 3)), {0: "q"}, grid)
    write_raster(one, tmp_path / "one.png")
    assert np.all(read_raster(tmp_path / "one.png") == 1.0)
    half = CompositeMap(np.full((1, 1, 3), 0.5), {0: "q"}, grid)
    write_raster(half, tmp_path / "half.png")
    assert np.all(read_raster(tmp_path / "half.png") * 255 == 128)


def test_write_raster_roundtrip_tolerance(tmp_path, grid10):
    pixels = np.random.default_rng(6).uniform(size=(grid10.rows, grid10.cols, 3))
    comp = CompositeMap(pixels, {0: "a", 1: "b", 2: "c"}, grid10)
    write_raster(comp, tmp_path / "m.png")
    back = read_raster(tmp_path / "m.png")
    assert np.max(np.abs(back - pixels)) <= 1.0 / 255.0 + 1e-12


def test_world_file_values(tmp_path):
    grid = build_tile_grid(equator_bbox(1000.0), stride_m=100.0)
    lines = world_file_text(grid).strip().splitlines()
    assert len(lines) == 6
    x_size, r1, r2, y_size, ul_lon, ul_lat = map(float, lines)
    assert x_size == pytest.approx(100.0 / METERS_PER_DEG_LAT, rel=1e-6)
    assert x_size == pytest.approx(0.000898, abs=2e-6)
    assert (r1, r2) == (0.0, 0.0)
    assert y_size == pytest.approx(-x_size, rel=1e-6)
    assert ul_lat == pytest.approx(grid.center_lats[0, 0])
    assert ul_lon == pytest.approx(grid.center_lons[0, 0])


def test_soundscape_single_query_composite_is_single_channel(snapshot, grid10):
    comp, heatmaps = soundscape_from_queries(
        grid10.bbox, [MapQuery.from_text("sound of sea waves")], snapshot, 100.0, grid=grid10
    )
    assert len(heatmaps) == 1
    assert np.array_equal(comp.pixels[:, :, 0], heatmaps[0].scores)
    assert np.all(comp.pixels[:, :, 1:] == 0.0)


def test_soundscape_text_vs_precomputed_vector(snapshot, grid10):
    text_query = MapQuery.from_text("sound of church bells")
    embedded = embed_query(snapshot, text_query)
    vector_query = MapQuery.from_vector(embedded.values)
    comp_text, _ = soundscape_from_queries(grid10.bbox, [text_query], snapshot, 100.0, grid=grid10)
    comp_vec, _ = soundscape_from_queries(grid10.bbox, [vector_query], snapshot, 100.0, grid=grid10)
    # re-normalizing an already-unit vector can move the last ulp
    assert np.max(np.abs(comp_text.pixels - comp_vec.pixels)) < 1e-12


def test_soundscape_query_scale_invariance(snapshot, grid10):
    vec = np.random.default_rng(8).standard_normal(16)
    one, _ = soundscape_from_queries(grid10.bbox, [MapQuery.from_vector(vec)], snapshot, 100.0, grid=grid10)
    three, _ = soundscape_from_queries(grid10.bbox, [MapQuery.from_vector(3 * vec)], snapshot, 100.0, grid=grid10)
    assert np.max(np.abs(one.pixels - three.pixels)) < 1e-12


def test_soundscape_query_limit(snapshot, grid10):
    queries = [MapQuery.from_text(f"q{i}") for i in range(4)]
    with pytest.raises(QueryLimitExceededError):
        soundscape_from_queries(grid10.bbox, queries, snapshot, 100.0, grid=grid10)


def test_soundscape_three_queries_channel_order(snapshot, grid10):
    queries = [MapQuery.from_text(q) for q in ("car horn", "chirping birds", "animal farm")]
    comp, heatmaps = soundscape_from_queries(grid10.bbox, queries, snapshot, 100.0, grid=grid10)
    for channel, heatmap in enumerate(heatmaps):
        assert np.array_equal(comp.pixels[:, :, channel], heatmap.scores)
        assert comp.channels[channel] == queries[channel].label


def test_write_map_outputs_layout(tmp_path, snapshot, grid10):
    comp, heatmaps = soundscape_from_queries(
        grid10.bbox, [MapQuery.from_text("flowing river")], snapshot, 100.0, grid=grid10
    )
    write_map_outputs(comp, heatmaps, tmp_path, 100.0)
    assert (tmp_path / "composite.png").exists()
    assert (tmp_path / "composite.pgw").exists()
    assert (tmp_path / "heatmap_0.png").exists()
    metadata = json.loads((tmp_path / "metadata.json").read_text())
    assert metadata["stride_m"] == 100.0
    assert metadata["queries"] == ["flowing river"]
    assert metadata["normalization"] == "minmax"
    assert len(metadata["bbox"]) == 4


def test_procedural_features_deterministic():
    grid_a = build_tile_grid(equator_bbox(600.0), stride_m=100.0)
    grid_b = build_tile_grid(equator_bbox(600.0), stride_m=100.0)
    fa = procedural_tile_features(grid_a, seed=9)
    fb = procedural_tile_features(grid_b, seed=9)
    assert np.array_equal(fa, fb)
    assert not np.array_equal(fa, procedural_tile_features(grid_a, seed=10))


def test_tile_features_npz_validation(tmp_path, grid10):
    np.savez(tmp_path / "tiles.npz", features=grid10.features)
    loaded = tile_features_from_npz(tmp_path / "tiles.npz", grid10)
    assert np.array_equal(loaded, grid10.features)
    small = build_tile_grid(equator_bbox(300.0), stride_m=100.0)
    with pytest.raises(Exception):
        tile_features_from_npz(tmp_path / "tiles.npz", small)


def test_render_png_bytes_deterministic(grid10):
    comp = CompositeMap(np.random.default_rng(10).uniform(size=(grid10.rows, grid10.cols, 3)), {0: "q"}, grid10)
    assert render_png_bytes(comp) == render_png_bytes(comp)
