"""Dataset handling: manifests, filtering, splits, image preprocessing,
batch assembly, and a synthetic triplet generator for end-to-end tests.

Manifests are JSON-lines, one sample per line; unknown fields survive a
load/save round trip. The synthetic generator draws a latent vector per
sample and emits the three modality features as fixed linear images of it
plus noise, optionally with spatially separated latent classes so map
tests have ground truth geography.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .audio import AUDIO_FEATURE_DIM, MelConfig, featurize_clip, load_wav
from .errors import TileTooSmallError
from .text import TEXT_FEATURE_DIM, TextRecord, augment_text_with_address, featurize_text

IMAGE_FEATURE_DIM = 768
IMAGE_SIZE = 224
_PATCH = 14
_GRID = 16

_KNOWN_FIELDS = (
    "id", "lat", "lon", "audio_path", "sample_rate_hz",
    "title", "description", "address", "image_path", "image_gsd_m",
)


@dataclass(frozen=True)
class SampleRecord:
    id: str
    lat: float
    lon: float
    audio_path: str
    sample_rate_hz: int
    title: str = ""
    description: str = ""
    address: str | None = None
    image_path: str = ""
    image_gsd_m: float = 10.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValueError("sample id must be non-empty")
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise ValueError(f"sample {self.id}: coordinates out of bounds")
        if not self.audio_path or not self.image_path:
            raise ValueError(f"sample {self.id}: paths must be non-empty")

    def text_record(self) -> TextRecord:
        return TextRecord(self.title, self.description, self.address)


@dataclass(frozen=True)
class SampleManifest:
    rows: tuple[SampleRecord, ...]

    def __post_init__(self):
        rows = tuple(self.rows)
        ids = [r.id for r in rows]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest ids must be unique")
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return len(self.rows)

    def ids(self) -> list[str]:
        return [r.id for r in self.rows]

    def by_id(self, sample_id: str) -> SampleRecord:
        for r in self.rows:
            if r.id == sample_id:
                return r
        raise KeyError(sample_id)


def load_manifest(path) -> SampleManifest:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            known = {k: raw[k] for k in _KNOWN_FIELDS if k in raw}
            extra = {k: v for k, v in raw.items() if k not in _KNOWN_FIELDS}
            rows.append(SampleRecord(**known, extra=extra))
    return SampleManifest(tuple(rows))


def save_manifest(manifest: SampleManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in manifest.rows:
            row = {
                "id": r.id, "lat": r.lat, "lon": r.lon,
                "audio_path": r.audio_path, "sample_rate_hz": r.sample_rate_hz,
                "title": r.title, "description": r.description,
                "image_path": r.image_path, "image_gsd_m": r.image_gsd_m,
            }
            if r.address is not None:
                row["address"] = r.address
            row.update(r.extra)
            fh.write(json.dumps(row) + "\n")


def filter_min_sample_rate(manifest: SampleManifest, min_hz: int = 16000) -> SampleManifest:
    """Drop rows recorded below ``min_hz`` (boundary inclusive), keeping order."""
    return SampleManifest(tuple(r for r in manifest.rows if r.sample_rate_hz >= min_hz))


@dataclass(frozen=True)
class SplitAssignment:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


def split_dataset(
    manifest,
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> SplitAssignment:
    """Deterministic shuffled split with floor-rule sizes:
    train = floor(r0*N), val = floor(r1*N), test = remainder.

    Accepts a SampleManifest or any sequence of sample ids.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    ids = manifest.ids() if isinstance(manifest, SampleManifest) else list(manifest)
    n = len(ids)
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    # tiny epsilon so mathematically-integral products are not floored down
    n_train = int(math.floor(ratios[0] * n + 1e-9))
    n_val = int(math.floor(ratios[1] * n + 1e-9))
    return SplitAssignment(
        tuple(shuffled[:n_train]),
        tuple(shuffled[n_train:n_train + n_val]),
        tuple(shuffled[n_train + n_val:]),
    )


def load_image(path) -> np.ndarray:
    """8-bit RGB PNG tile as an HxWx3 float array in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def save_image(arr: np.ndarray, path) -> None:
    pixels = np.clip(np.floor(arr * 255.0 + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-center-aligned bilinear resampling of an HxWxC array."""
    h, w = img.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def center_crop(tile: np.ndarray, out: int = IMAGE_SIZE) -> np.ndarray:
    """Exact center window (the inference-time image path)."""
    h, w = tile.shape[:2]
    if h < out or w < out:
        raise TileTooSmallError(f"tile {h}x{w} smaller than {out}x{out}")
    top, left = (h - out) // 2, (w - out) // 2
    return tile[top:top + out, left:left + out]


def random_resized_crop(
    tile: np.ndarray,
    out: int = IMAGE_SIZE,
    scale: tuple[float, float] = (0.2, 1.0),
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Training-time augmentation: random area fraction in ``scale``, aspect
    ratio log-uniform in [3/4, 4/3], bilinear resize to ``out``, then a
    horizontal flip with probability 1/2."""
    if rng is None:
        raise ValueError("random_resized_crop requires a seeded generator")
    h, w = tile.shape[:2]
    if h * w < out * out:
        raise TileTooSmallError(f"tile {h}x{w} cannot cover {out}x{out}")
    area = h * w
    window = None
    for _ in range(10):
        target_area = area * rng.uniform(scale[0], scale[1])
        aspect = math.exp(rng.uniform(math.log(3 / 4), math.log(4 / 3)))
        crop_w = int(round(math.sqrt(target_area * aspect)))
        crop_h = int(round(math.sqrt(target_area / aspect)))
        if 0 < crop_w <= w and 0 < crop_h <= h:
            top = int(rng.integers(0, h - crop_h + 1))
            left = int(rng.integers(0, w - crop_w + 1))
            window = tile[top:top + crop_h, left:left + crop_w]
            break
    if window is None:
        side = min(h, w)
        window = center_crop(tile, side)
    resized = bilinear_resize(window, out, out)
    if rng.random() < 0.5:
        resized = resized[:, ::-1]
    return np.ascontiguousarray(resized)


def image_feature_vector(crop: np.ndarray) -> np.ndarray:
    """16x16 grid of 14x14 patch means per channel, standardized.

    Layout is channel-major: feature[c*256 + row*16 + col]. A constant crop
    maps to the zero vector.
    """
    if crop.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise ValueError(f"expected {IMAGE_SIZE}x{IMAGE_SIZE}x3 crop, got {crop.shape}")
    if crop.min() < -1e-9 or crop.max() > 1 + 1e-9:
        raise ValueError("crop values must lie in [0, 1]")
    patches = crop.reshape(_GRID, _PATCH, _GRID, _PATCH, 3).mean(axis=(1, 3))  # 16x16x3
    flat = patches.transpose(2, 0, 1).reshape(-1)
    sd = float(flat.std())
    if sd < 1e-12:
        return np.zeros(IMAGE_FEATURE_DIM)
    return (flat - flat.mean()) / sd


@dataclass(frozen=True)
class TripletBatch:
    """Row-aligned modality features: index k is one sample in all three."""

    audio: np.ndarray
    text: np.ndarray
    image: np.ndarray
    ids: tuple[str, ...]

    def __post_init__(self):
        n = len(self.ids)
        shapes = (self.audio.shape, self.text.shape, self.image.shape)
        expected = ((n, AUDIO_FEATURE_DIM), (n, TEXT_FEATURE_DIM), (n, IMAGE_FEATURE_DIM))
        if shapes != expected:
            raise ValueError(f"misaligned batch: {shapes} != {expected}")

    def __len__(self) -> int:
        return len(self.ids)


class TripletFeatureStore:
    """Precomputed per-sample features for all three modalities."""

    def __init__(self, ids, audio: np.ndarray, text: np.ndarray, image: np.ndarray):
        self.ids = tuple(str(i) for i in ids)
        self.audio = np.asarray(audio, dtype=np.float64)
        self.text = np.asarray(text, dtype=np.float64)
        self.image = np.asarray(image, dtype=np.float64)
        n = len(self.ids)
        if self.audio.shape != (n, AUDIO_FEATURE_DIM):
            raise ValueError(f"audio features must be {n}x{AUDIO_FEATURE_DIM}")
        if self.text.shape != (n, TEXT_FEATURE_DIM):
            raise ValueError(f"text features must be {n}x{TEXT_FEATURE_DIM}")
        if self.image.shape != (n, IMAGE_FEATURE_DIM):
            raise ValueError(f"image features must be {n}x{IMAGE_FEATURE_DIM}")
        self._index = {sample_id: i for i, sample_id in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._index

    def batch(self, ids) -> TripletBatch:
        idx = [self._index[i] for i in ids]
        return TripletBatch(self.audio[idx], self.text[idx], self.image[idx], tuple(ids))

    def subset(self, ids) -> "TripletFeatureStore":
        idx = [self._index[i] for i in ids]
        return TripletFeatureStore(ids, self.audio[idx], self.text[idx], self.image[idx])

    def save_npz(self, path) -> None:
        np.savez(path, ids=np.array(self.ids), audio=self.audio, text=self.text, image=self.image)

    @classmethod
    def load_npz(cls, path) -> "TripletFeatureStore":
        with np.load(path, allow_pickle=False) as data:
            return cls(list(data["ids"]), data["audio"], data["text"], data["image"])


def make_batches(
    split_ids,
    store: TripletFeatureStore,
    batch_size: int,
    seed: int = 0,
    epoch: int = 0,
    drop_last: bool = True,
) -> list[TripletBatch]:
    """Seeded per-epoch shuffle into row-aligned triplet batches."""
    split_ids = list(split_ids)
    if batch_size > len(split_ids):
        raise ValueError(f"batch_size {batch_size} exceeds split size {len(split_ids)}")
    order = np.random.default_rng([seed, epoch]).permutation(len(split_ids))
    shuffled = [split_ids[i] for i in order]
    batches = []
    for start in range(0, len(shuffled), batch_size):
        chunk = shuffled[start:start + batch_size]
        if drop_last and len(chunk) < batch_size:
            break
        batches.append(store.batch(chunk))
    return batches


def featurize_manifest(
    manifest: SampleManifest,
    root: str | Path = ".",
    mode: str = "eval_center",
    seed: int = 0,
    mel_config: MelConfig | None = None,
) -> TripletFeatureStore:
    """Compute features for every manifest row from its media files.

    ``mode`` selects the augmentation path: "train_random" uses random audio
    windows and random resized crops, "eval_center" uses center windows and
    center crops.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    audio_rows, text_rows, image_rows = [], [], []
    for record in manifest.rows:
        clip = load_wav(root / record.audio_path)
        audio_rows.append(featurize_clip(clip, mel_config, mode=mode, rng=rng))
        text_rows.append(featurize_text(augment_text_with_address(record.text_record())))
        tile = load_image(root / record.image_path)
        if mode == "train_random":
            crop = random_resized_crop(tile, rng=rng)
        else:
            crop = center_crop(tile)
        image_rows.append(image_feature_vector(crop))
    return TripletFeatureStore(
        manifest.ids(), np.array(audio_rows), np.array(text_rows), np.array(image_rows)
    )


@dataclass(frozen=True)
class SyntheticGenConfig:
    n_samples: int
    latent_dim: int = 16
    noise_sigma: float = 0.1
    seed: int = 0
    n_classes: int = 1
    class_separation: float = 4.0
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)  # min_lat, min_lon, max_lat, max_lon

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValueError("n_samples must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.n_classes < 1:
            raise ValueError("need at least one class")


def _class_of_lon(config: SyntheticGenConfig, lon: float) -> int:
    """Class of a longitude: equal vertical strips across the bbox."""
    min_lon, max_lon = config.bbox[1], config.bbox[3]
    frac = (lon - min_lon) / (max_lon - min_lon)
    return min(config.n_classes - 1, max(0, int(frac * config.n_classes)))


@dataclass
class SyntheticWorld:
    """A generated dataset plus the matrices that produced it.

    Keeping the mixing matrices around lets tests mint fresh samples from
    the same world: gallery items, query features, and map tile features
    with known class geography.
    """

    config: SyntheticGenConfig
    manifest: SampleManifest
    features: TripletFeatureStore
    mix_audio: np.ndarray
    mix_text: np.ndarray
    mix_image: np.ndarray
    class_means: np.ndarray  # n_classes x latent_dim
    classes: tuple[int, ...]

    def class_at(self, lon: float) -> int:
        return _class_of_lon(self.config, lon)

    def _features_from_latents(self, z: np.ndarray, rng: np.random.Generator):
        sigma = self.config.noise_sigma
        audio = z @ self.mix_audio.T + sigma * rng.standard_normal((len(z), AUDIO_FEATURE_DIM))
        textf = z @ self.mix_text.T + sigma * rng.standard_normal((len(z), TEXT_FEATURE_DIM))
        image = z @ self.mix_image.T + sigma * rng.standard_normal((len(z), IMAGE_FEATURE_DIM))
        return audio, textf, image

    def sample_features(self, n: int, class_id: int = 0, seed: int = 1) -> TripletFeatureStore:
        """Fresh triplets from the same generative process (held-out data)."""
        rng = np.random.default_rng([self.config.seed, seed])
        z = self.class_means[class_id] + rng.standard_normal((n, self.config.latent_dim))
        audio, textf, image = self._features_from_latents(z, rng)
        ids = [f"fresh{class_id}_{seed}_{i}" for i in range(n)]
        return TripletFeatureStore(ids, audio, textf, image)

    def tile_image_features(
        self,
        centers_lat: np.ndarray,
        centers_lon: np.ndarray,
        seed: int = 2,
        samples_per_tile: int = 1,
    ) -> np.ndarray:
        """Image features for map tiles at the given centers, with each
        tile's latent drawn from its region's class.

        A tile covers an area rather than a point, so its latent is the mean
        of ``samples_per_tile`` class draws (variance shrinks by 1/k)."""
        rng = np.random.default_rng([self.config.seed, seed])
        flat_lon = np.asarray(centers_lon).reshape(-1)
        classes = np.array([self.class_at(lon) for lon in flat_lon])
        spread = 1.0 / math.sqrt(samples_per_tile)
        z = self.class_means[classes] + spread * rng.standard_normal((len(flat_lon), self.config.latent_dim))
        image = z @ self.mix_image.T
        image += self.config.noise_sigma * rng.standard_normal(image.shape)
        return image


def generate_synthetic_triplets(config: SyntheticGenConfig) -> SyntheticWorld:
    """Latent-linear synthetic triplets on a coordinate grid.

    Per sample: latent z ~ N(mu_class, I); each modality feature is a fixed
    random linear image of z plus isotropic noise. Coordinates are laid on a
    near-square grid over the bbox, and classes occupy vertical strips, so
    geography correlates with latent class.
    """
    rng = np.random.default_rng(config.seed)
    d = config.latent_dim
    mix_audio = rng.standard_normal((AUDIO_FEATURE_DIM, d)) / math.sqrt(d)
    mix_text = rng.standard_normal((TEXT_FEATURE_DIM, d)) / math.sqrt(d)
    mix_image = rng.standard_normal((IMAGE_FEATURE_DIM, d)) / math.sqrt(d)
    if config.n_classes == 1:
        class_means = np.zeros((1, d))
    else:
        class_means = config.class_separation * rng.standard_normal((config.n_classes, d)) / math.sqrt(d)

    min_lat, min_lon, max_lat, max_lon = config.bbox
    side = math.ceil(math.sqrt(config.n_samples))
    rows = []
    classes = []
    latents = np.empty((config.n_samples, d))
    for k in range(config.n_samples):
        gi, gj = divmod(k, side)
        lat = min_lat + (gi + 0.5) * (max_lat - min_lat) / side
        lon = min_lon + (gj + 0.5) * (max_lon - min_lon) / side
        cls = _class_of_lon(config, lon)
        classes.append(cls)
        latents[k] = class_means[cls] + rng.standard_normal(d)
        rows.append(SampleRecord(
            id=f"syn{k:05d}", lat=lat, lon=lon,
            audio_path=f"audio/syn{k:05d}.wav", sample_rate_hz=48000,
            title=f"synthetic clip {k}", description=f"latent class {cls}",
            image_path=f"tiles/syn{k:05d}.png", image_gsd_m=10.0,
        ))
    manifest = SampleManifest(tuple(rows))
    world = SyntheticWorld(
        config=config, manifest=manifest, features=None,
        mix_audio=mix_audio, mix_text=mix_text, mix_image=mix_image,
        class_means=class_means, classes=tuple(classes),
    )
    audio, textf, image = world._features_from_latents(latents, rng)
    world.features = TripletFeatureStore(manifest.ids(), audio, textf, image)
    return world
