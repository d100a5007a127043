"""Per-modality encoders, projection heads, and checkpoint serialization.

Each modality runs a small trainable MLP (input -> hidden -> embed_dim,
ReLU between layers) followed by a projection head onto the shared unit
sphere. The audio and text heads are plain linear maps; the image head
applies a ReLU before its linear layer. Real transformer backbones are
out of scope; these stand-ins exercise the identical projection and loss
geometry at desk scale.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .embedding import EmbeddingBatch
from .errors import CorruptCheckpointError

MODALITIES = ("audio", "text", "image")


@dataclass(frozen=True)
class EncoderSpec:
    modality: str
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    trainable: bool = True

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d <= 0 for d in dims):
            raise ValueError(f"all dimensions must be positive, got {dims}")
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))


@dataclass(frozen=True)
class ProjectionHead:
    """Final linear map onto the shared space; image uses a ReLU in front."""

    modality: str
    pre_activation: str  # "none" | "relu"
    weight: np.ndarray
    bias: np.ndarray

    @property
    def output_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and freeze flags for the full tri-modal model."""

    embed_dim: int = 512
    hidden_dims: tuple[int, ...] = (256,)
    audio_input_dim: int = 64
    text_input_dim: int = 512
    image_input_dim: int = 768
    train_audio: bool = True
    train_text: bool = True
    train_image: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def encoder_spec(config: ModelConfig, modality: str) -> EncoderSpec:
    input_dim = {
        "audio": config.audio_input_dim,
        "text": config.text_input_dim,
        "image": config.image_input_dim,
    }[modality]
    trainable = {
        "audio": config.train_audio,
        "text": config.train_text,
        "image": config.train_image,
    }[modality]
    return EncoderSpec(modality, input_dim, config.hidden_dims, config.embed_dim, trainable)


def head_activation(modality: str) -> str:
    return "relu" if modality == "image" else "none"


def _layer_dims(spec: EncoderSpec) -> list[tuple[int, int]]:
    chain = (spec.input_dim, *spec.hidden_dims, spec.output_dim)
    return [(chain[i], chain[i + 1]) for i in range(len(chain) - 1)]


def init_params(spec: EncoderSpec, seed: int) -> dict[str, np.ndarray]:
    """Deterministic init: weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for i, (fan_in, fan_out) in enumerate(_layer_dims(spec)):
        bound = 1.0 / math.sqrt(fan_in)
        params[f"w{i}"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        params[f"b{i}"] = np.zeros(fan_out)
    bound = 1.0 / math.sqrt(spec.output_dim)
    params["head_w"] = rng.uniform(-bound, bound, size=(spec.output_dim, spec.output_dim))
    params["head_b"] = np.zeros(spec.output_dim)
    return params


def projection_head(spec: EncoderSpec, params: dict[str, np.ndarray]) -> ProjectionHead:
    return ProjectionHead(spec.modality, head_activation(spec.modality), params["head_w"], params["head_b"])


def encode_nodes(spec: EncoderSpec, params: dict[str, "ad.Tensor"], features: np.ndarray) -> ad.Tensor:
    """Differentiable forward pass; returns the row-normalized embedding node."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != spec.input_dim:
        raise ValueError(f"expected N x {spec.input_dim} features, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ValueError("features contain non-finite entries")
    x = ad.constant(features)
    n_layers = len(spec.hidden_dims) + 1
    for i in range(n_layers):
        x = ad.add(ad.matmul(x, params[f"w{i}"], transpose_b=True), params[f"b{i}"])
        if i < n_layers - 1:
            x = ad.relu(x)
    if head_activation(spec.modality) == "relu":
        x = ad.relu(x)
    x = ad.add(ad.matmul(x, params["head_w"], transpose_b=True), params["head_b"])
    return ad.row_l2_normalize(x)


def encode(
    spec: EncoderSpec,
    params: dict[str, np.ndarray],
    features: np.ndarray,
    ids=None,
) -> EmbeddingBatch:
    """Inference path: unit-norm embedding batch for a feature matrix."""
    nodes = {name: ad.constant(value) for name, value in params.items()}
    out = encode_nodes(spec, nodes, features)
    if ids is None:
        ids = [str(i) for i in range(out.value.shape[0])]
    return EmbeddingBatch(out.value, tuple(ids))


@dataclass
class ModelSnapshot:
    """Everything needed to reproduce inference: params, temperatures, step."""

    config: ModelConfig
    params: dict[str, np.ndarray]  # keys "<modality>.<name>"
    temperatures: dict[str, float] = field(
        default_factory=lambda: {p: math.log(1.0 / 0.07) for p in ("at", "ai", "ti")}
    )
    step: int = 0

    @property
    def config_hash(self) -> str:
        return self.config.config_hash

    def spec(self, modality: str) -> EncoderSpec:
        return encoder_spec(self.config, modality)

    def modality_params(self, modality: str) -> dict[str, np.ndarray]:
        prefix = modality + "."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def embed(self, modality: str, features: np.ndarray, ids=None) -> EmbeddingBatch:
        return encode(self.spec(modality), self.modality_params(modality), features, ids)


def init_snapshot(config: ModelConfig, seed: int = 0) -> ModelSnapshot:
    params: dict[str, np.ndarray] = {}
    for offset, modality in enumerate(MODALITIES):
        spec = encoder_spec(config, modality)
        for name, value in init_params(spec, seed * 7919 + offset).items():
            params[f"{modality}.{name}"] = value
    return ModelSnapshot(config=config, params=params)


def trainable_param_names(snapshot: ModelSnapshot) -> list[str]:
    names = []
    for modality in MODALITIES:
        if encoder_spec(snapshot.config, modality).trainable:
            names.extend(k for k in snapshot.params if k.startswith(modality + "."))
    return sorted(names)


def snapshots_equal(a: ModelSnapshot, b: ModelSnapshot) -> bool:
    """Bit-level equality of configs, parameters, temperatures, and step."""
    if a.config != b.config or a.step != b.step or a.temperatures != b.temperatures:
        return False
    if sorted(a.params) != sorted(b.params):
        return False
    return all(
        a.params[k].shape == b.params[k].shape
        and a.params[k].tobytes() == b.params[k].tobytes()
        for k in a.params
    )


_MAGIC = b"GCLP"
_VERSION = 1
_TEMP_ORDER = ("at", "ai", "ti")


def save_checkpoint(snapshot: ModelSnapshot, path) -> None:
    """Binary checkpoint: magic, version, config hash + JSON, step,
    temperatures, parameters as little-endian float64 in sorted-name order,
    then a sha256 of the payload."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<H", _VERSION))
    buf.write(bytes.fromhex(snapshot.config_hash))
    buf.write(struct.pack("<Q", snapshot.step))
    for pair in _TEMP_ORDER:
        buf.write(struct.pack("<d", snapshot.temperatures[pair]))
    config_json = snapshot.config.to_json().encode()
    buf.write(struct.pack("<I", len(config_json)))
    buf.write(config_json)
    buf.write(struct.pack("<I", len(snapshot.params)))
    for name in sorted(snapshot.params):
        value = np.ascontiguousarray(snapshot.params[name], dtype="<f8")
        encoded = name.encode()
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", value.ndim))
        for d in value.shape:
            buf.write(struct.pack("<I", d))
        buf.write(value.tobytes())
    payload = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest())


def load_checkpoint(path) -> ModelSnapshot:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 32:
        raise CorruptCheckpointError("file too short")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CorruptCheckpointError("payload hash mismatch")
    try:
        return _parse_checkpoint(payload)
    except (struct.error, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"malformed checkpoint: {exc}") from exc


def _parse_checkpoint(payload: bytes) -> ModelSnapshot:
    view = io.BytesIO(payload)

    def take(n: int) -> bytes:
        data = view.read(n)
        if len(data) != n:
            raise ValueError("truncated payload")
        return data

    if take(4) != _MAGIC:
        raise CorruptCheckpointError("bad magic bytes")
    (version,) = struct.unpack("<H", take(2))
    if version != _VERSION:
        raise CorruptCheckpointError(f"unsupported version {version}")
    stored_hash = take(32).hex()
    (step,) = struct.unpack("<Q", take(8))
    temperatures = {pair: struct.unpack("<d", take(8))[0] for pair in _TEMP_ORDER}
    (config_len,) = struct.unpack("<I", take(4))
    config = ModelConfig.from_json(take(config_len).decode())
    if config.config_hash != stored_hash:
        raise CorruptCheckpointError("config hash mismatch")
    (n_params,) = struct.unpack("<I", take(4))
    params: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(count * 8), dtype="<f8").reshape(shape)
        params[name] = data.astype(np.float64).copy()
    if view.read(1):
        raise ValueError("trailing bytes after parameters")
    return ModelSnapshot(config=config, params=params, temperatures=temperatures, step=step)
