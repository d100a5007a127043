"""Command-line interface.

Subcommands:
  synth  generate a synthetic dataset (manifest + feature store + tiles)
  train  train a model from a config file and manifest
  eval   cross-modal retrieval report for a checkpoint over a gallery
  map    render a zero-shot soundscape raster for a bbox and queries
  serve  run the HTTP service
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .audio import load_wav
from .data import (
    SyntheticGenConfig,
    TripletFeatureStore,
    featurize_manifest,
    filter_min_sample_rate,
    generate_synthetic_triplets,
    load_manifest,
    save_manifest,
    split_dataset,
)
from .encoders import ModelConfig, init_snapshot, load_checkpoint, save_checkpoint
from .mapping import (
    GeoBoundingBox,
    MapQuery,
    build_tile_grid,
    procedural_tile_features,
    soundscape_from_queries,
    tile_features_from_dir,
    tile_features_from_npz,
    write_map_outputs,
)
from .retrieval import evaluate_crossmodal, format_report_table, report_to_json
from .service import ServiceConfig, run as run_service
from .training import TrainConfig, load_train_config, train_loop


def _cmd_synth(args) -> int:
    config = SyntheticGenConfig(
        n_samples=args.n,
        latent_dim=args.latent_dim,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
        n_classes=args.classes,
    )
    world = generate_synthetic_triplets(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_manifest(world.manifest, out / "manifest.jsonl")
    world.features.save_npz(out / "features.npz")
    print(f"wrote {len(world.manifest)} samples to {out}")
    return 0


def _load_features(args, manifest) -> TripletFeatureStore:
    if args.features:
        store = TripletFeatureStore.load_npz(args.features)
        missing = [i for i in manifest.ids() if i not in store]
        if missing:
            raise SystemExit(f"feature store missing {len(missing)} manifest ids (e.g. {missing[0]})")
        return store
    return featurize_manifest(manifest, root=Path(args.manifest).parent)


def _cmd_train(args) -> int:
    config = load_train_config(args.config) if args.config else TrainConfig()
    manifest = filter_min_sample_rate(load_manifest(args.manifest))
    store = _load_features(args, manifest)
    split = split_dataset(manifest, seed=config.seed)
    model_config = ModelConfig(
        embed_dim=args.embed_dim,
        hidden_dims=(args.hidden_dim,),
        train_audio=config.loss_mode != "frozen_text_audio",
        train_text=config.loss_mode != "frozen_text_audio",
    )
    snapshot = init_snapshot(model_config, seed=config.seed)
    out = Path(args.out)
    snapshot, logs = train_loop(config, split.train_ids, store, snapshot, out_dir=out)
    print(f"trained {snapshot.step} steps; final loss {logs[-1].loss.total:.4f}" if logs else "no steps run")
    print(f"checkpoint: {out / 'final.gclp'}")
    return 0


def _cmd_eval(args) -> int:
    snapshot = load_checkpoint(args.snapshot)
    if args.manifest.endswith(".npz"):
        store = TripletFeatureStore.load_npz(args.manifest)
    else:
        manifest = load_manifest(args.manifest)
        store = featurize_manifest(manifest, root=Path(args.manifest).parent)
    directions = args.directions.split(",")
    reports = evaluate_crossmodal(snapshot, store, directions=directions, k_list=(1, 10, 100))
    print(format_report_table(reports))
    if args.out:
        Path(args.out).write_text(report_to_json(reports) + "\n")
        print(f"report written to {args.out}")
    return 0


def _cmd_map(args) -> int:
    snapshot = load_checkpoint(args.snapshot)
    bbox = GeoBoundingBox.parse(args.bbox)
    queries: list[MapQuery] = []
    for text in args.query_text or []:
        queries.append(MapQuery.from_text(text))
    if args.query_audio:
        queries.append(MapQuery.from_audio(load_wav(args.query_audio), label=args.query_audio))
    if not queries:
        raise SystemExit("supply at least one --query-text or --query-audio")
    grid = build_tile_grid(bbox, args.stride_m)
    if args.tiles is None:
        grid.features = procedural_tile_features(grid, seed=args.tile_seed)
    elif args.tiles.endswith(".npz"):
        grid.features = tile_features_from_npz(args.tiles, grid)
    else:
        grid.features = tile_features_from_dir(args.tiles, grid)
    composite, heatmaps = soundscape_from_queries(
        bbox, queries, snapshot, args.stride_m, grid=grid
    )
    metadata = write_map_outputs(composite, heatmaps, args.out, args.stride_m)
    print(json.dumps(metadata, indent=2))
    return 0


def _cmd_serve(args) -> int:
    config = ServiceConfig.from_env()
    if args.listen:
        config.listen = args.listen
    if args.snapshot:
        config.snapshot_path = args.snapshot
    if args.gallery:
        config.gallery_path = args.gallery
    if args.tiles:
        config.tiles_path = args.tiles
    run_service(config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geoclap")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--latent-dim", type=int, default=16)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--classes", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train from a manifest")
    p.add_argument("--config", help="key = value training config file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", help="precomputed features .npz (skips media featurization)")
    p.add_argument("--embed-dim", type=int, default=512)
    p.add_argument("--hidden-dim", type=int, default=256)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="cross-modal retrieval evaluation")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--manifest", required=True, help="gallery manifest .jsonl or features .npz")
    p.add_argument("--directions", default="image2sound,sound2image")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("map", help="render a soundscape raster")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--bbox", required=True, help="min_lat,min_lon,max_lat,max_lon")
    p.add_argument("--stride-m", type=float, required=True)
    p.add_argument("--query-text", action="append", help="repeat for up to 3 prompts")
    p.add_argument("--query-audio", help="WAV file query")
    p.add_argument("--tiles", help="tile features .npz or directory of tile_r{r}_c{c}.png")
    p.add_argument("--tile-seed", type=int, default=0, help="seed for procedural tile features")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_map)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--listen")
    p.add_argument("--snapshot")
    p.add_argument("--gallery")
    p.add_argument("--tiles")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
