"""Symmetric contrastive objective over modality pairs, with learnable
temperatures, Adam with decoupled weight decay, warmup+cosine learning-rate
schedule, and the training loop.

Each pair loss is the mean negative log-softmax of the matched diagonal,
averaged over both retrieval directions (the printed form of the objective
is maximized at the optimum, so the implemented loss is its negation: a
standard symmetric cross-entropy that we minimize). Temperatures are
parameterized as log inverse temperature, so positivity is structural, and
the inverse temperature is clamped to 100 after each optimizer step.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import TripletBatch, TripletFeatureStore, make_batches
from .embedding import EmbeddingBatch
from .encoders import MODALITIES, ModelSnapshot, encode_nodes, encoder_spec, save_checkpoint
from .errors import ConfigError, MisalignedBatchError

logger = logging.getLogger(__name__)

LOSS_MODES = ("image_audio_only", "frozen_text_audio", "tri_modal")

MAX_INV_TAU = 100.0

# pairs active per loss mode, in (at, ai, ti) order
_ACTIVE_PAIRS = {
    "tri_modal": ("at", "ai", "ti"),
    "frozen_text_audio": ("ai", "ti"),
    "image_audio_only": ("ai",),
}


@dataclass
class TemperatureSet:
    """Learnable log inverse temperatures for the three modality pairs."""

    log_inv_tau_at: float = math.log(1.0 / 0.07)
    log_inv_tau_ai: float = math.log(1.0 / 0.07)
    log_inv_tau_ti: float = math.log(1.0 / 0.07)

    @classmethod
    def from_dict(cls, values: dict[str, float]) -> "TemperatureSet":
        return cls(values["at"], values["ai"], values["ti"])

    def to_dict(self) -> dict[str, float]:
        return {"at": self.log_inv_tau_at, "ai": self.log_inv_tau_ai, "ti": self.log_inv_tau_ti}

    def tau(self, pair: str) -> float:
        return math.exp(-self.to_dict()[pair])

    def clamp(self) -> None:
        """Cap the inverse temperature at MAX_INV_TAU (applied post-step)."""
        cap = math.log(MAX_INV_TAU)
        self.log_inv_tau_at = min(self.log_inv_tau_at, cap)
        self.log_inv_tau_ai = min(self.log_inv_tau_ai, cap)
        self.log_inv_tau_ti = min(self.log_inv_tau_ti, cap)


@dataclass(frozen=True)
class TrainConfig:
    loss_mode: str = "tri_modal"
    batch_size: int = 64
    base_lr: float = 5e-5
    warmup_iters: int = 2000
    max_epochs: int = 100
    weight_decay: float = 0.2
    betas: tuple[float, float] = (0.9, 0.98)
    seed: int = 0
    max_steps: int | None = None  # hard step cap; also the cosine horizon when set

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}")
        if self.batch_size <= 0 or self.base_lr <= 0:
            raise ConfigError("batch_size and base_lr must be positive")
        if self.max_epochs < 0 or self.warmup_iters < 0 or self.weight_decay < 0:
            raise ConfigError("max_epochs, warmup_iters, weight_decay must be non-negative")
        object.__setattr__(self, "betas", tuple(self.betas))


@dataclass(frozen=True)
class LossBreakdown:
    """Per-pair losses in nats; inactive pairs are None, not zero."""

    l_at: float | None
    l_ai: float | None
    l_ti: float | None
    total: float


def _as_node(batch) -> ad.Tensor:
    if isinstance(batch, ad.Tensor):
        return batch
    if isinstance(batch, EmbeddingBatch):
        return ad.constant(batch.rows)
    return ad.constant(np.asarray(batch, dtype=np.float64))


def _check_aligned(a, b) -> None:
    na = a.rows.shape[0] if isinstance(a, EmbeddingBatch) else _as_node(a).value.shape[0]
    nb = b.rows.shape[0] if isinstance(b, EmbeddingBatch) else _as_node(b).value.shape[0]
    if na != nb or na < 1:
        raise MisalignedBatchError(f"batch sizes {na} vs {nb}")
    if isinstance(a, EmbeddingBatch) and isinstance(b, EmbeddingBatch) and a.ids != b.ids:
        raise MisalignedBatchError("batch ids are not aligned")


def _pair_loss_nodes(ea: ad.Tensor, eb: ad.Tensor, inv_tau: ad.Tensor) -> ad.Tensor:
    sim_ab = ad.matmul(ea, eb, transpose_b=True)
    sim_ba = ad.matmul(eb, ea, transpose_b=True)
    fwd = ad.mean_diag_negate(ad.row_log_softmax(ad.scale(sim_ab, inv_tau)))
    bwd = ad.mean_diag_negate(ad.row_log_softmax(ad.scale(sim_ba, inv_tau)))
    return ad.scale(ad.add(fwd, bwd), 0.5)


def pair_contrastive_loss(ea, eb, tau) -> ad.Tensor:
    """Symmetric InfoNCE between two aligned batches at temperature tau.

    ``tau`` may be a float or a scalar node (then the loss is differentiable
    in it as well). Returns a scalar node; use ``.item()`` for the value.
    """
    _check_aligned(ea, eb)
    ea_node, eb_node = _as_node(ea), _as_node(eb)
    if isinstance(tau, ad.Tensor):
        inv_tau = ad.reciprocal(tau)
    else:
        if tau <= 0:
            raise ValueError("temperature must be positive")
        inv_tau = ad.constant(1.0 / float(tau))
    return _pair_loss_nodes(ea_node, eb_node, inv_tau)


def total_loss_nodes(
    ea: ad.Tensor,
    et: ad.Tensor | None,
    ei: ad.Tensor,
    temp_nodes: dict[str, ad.Tensor],
    loss_mode: str,
) -> tuple[ad.Tensor, LossBreakdown]:
    """Active-pair sum as a graph node plus the value breakdown.

    ``temp_nodes`` maps pair name to its log-inverse-temperature node.
    """
    if loss_mode not in LOSS_MODES:
        raise ConfigError(f"unknown loss_mode {loss_mode!r}")
    active = _ACTIVE_PAIRS[loss_mode]
    operands = {"at": (ea, et), "ai": (ea, ei), "ti": (et, ei)}
    parts: dict[str, ad.Tensor] = {}
    total = None
    for pair in active:
        left, right = operands[pair]
        if left is None or right is None:
            raise MisalignedBatchError(f"pair {pair} requires embeddings that were not provided")
        if left.value.shape[0] != right.value.shape[0]:
            raise MisalignedBatchError(f"pair {pair}: {left.value.shape[0]} vs {right.value.shape[0]} rows")
        node = _pair_loss_nodes(left, right, ad.exp(temp_nodes[pair]))
        parts[pair] = node
        total = node if total is None else ad.add(total, node)
    breakdown = LossBreakdown(
        l_at=parts["at"].item() if "at" in parts else None,
        l_ai=parts["ai"].item() if "ai" in parts else None,
        l_ti=parts["ti"].item() if "ti" in parts else None,
        total=total.item(),
    )
    return total, breakdown


def total_loss(ea, et, ei, temps: TemperatureSet, loss_mode: str = "tri_modal") -> LossBreakdown:
    """Loss values for aligned embedding batches (reporting path, no graph)."""
    _check_aligned(ea, ei)
    if et is not None:
        _check_aligned(ea, et)
    temp_nodes = {p: ad.constant(v) for p, v in temps.to_dict().items()}
    _, breakdown = total_loss_nodes(
        _as_node(ea), _as_node(et) if et is not None else None, _as_node(ei), temp_nodes, loss_mode
    )
    return breakdown


@dataclass
class OptimizerState:
    """Adam moment accumulators, keyed like the parameter dict."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.98),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    decay_exempt: set[str] | frozenset[str] = frozenset(),
) -> None:
    """Bias-corrected Adam update with decoupled weight decay, in place.

    Only the supplied parameters are touched (freezing = not passing them).
    Decay is applied outside the gradient (p -= lr*wd*p); names listed in
    ``decay_exempt`` (biases, temperatures) skip it.
    """
    b1, b2 = betas
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}: {g.shape} vs {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay and name not in decay_exempt:
            p -= lr * weight_decay * p


def lr_at_step(step: int, base_lr: float = 5e-5, warmup: int = 2000, total_steps: int = 0) -> float:
    """Linear warmup to base_lr over [0, warmup], then cosine decay to 0 at
    total_steps."""
    if total_steps <= warmup:
        raise ConfigError(f"total_steps {total_steps} must exceed warmup {warmup}")
    if step <= warmup:
        return base_lr * step / warmup if warmup else base_lr
    if step >= total_steps:
        return 0.0
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


_CSV_COLUMNS = ("step", "lr", "l_at", "l_ai", "l_ti", "total", "tau_at", "tau_ai", "tau_ti")


@dataclass(frozen=True)
class StepLog:
    step: int
    lr: float
    loss: LossBreakdown
    taus: dict[str, float]
    grad_norm: float

    def csv_row(self) -> list:
        b = self.loss
        fmt = lambda x: "" if x is None else repr(x)
        return [
            self.step, repr(self.lr), fmt(b.l_at), fmt(b.l_ai), fmt(b.l_ti),
            repr(b.total), repr(self.taus["at"]), repr(self.taus["ai"]), repr(self.taus["ti"]),
        ]


def write_loss_log(rows: list[StepLog], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_row())


def _mode_param_names(snapshot: ModelSnapshot, loss_mode: str) -> list[str]:
    """Parameters the optimizer may update in this mode.

    frozen_text_audio freezes the audio and text encoders; image_audio_only
    never touches the (unused) text encoder.
    """
    excluded_prefixes = {
        "tri_modal": (),
        "frozen_text_audio": ("audio.", "text."),
        "image_audio_only": ("text.",),
    }[loss_mode]
    names = []
    for modality in MODALITIES:
        if not encoder_spec(snapshot.config, modality).trainable:
            continue
        prefix = modality + "."
        if any(prefix == ex for ex in excluded_prefixes):
            continue
        names.extend(k for k in snapshot.params if k.startswith(prefix))
    return sorted(names)


def _is_decay_exempt(name: str) -> bool:
    """Temperatures and biases never receive weight decay."""
    if name.startswith("temp."):
        return True
    leaf = name.rsplit(".", 1)[-1]
    return leaf.startswith("b") or leaf == "head_b"


def train_step(
    snapshot: ModelSnapshot,
    batch: TripletBatch,
    loss_mode: str,
    opt_state: OptimizerState,
    lr: float,
    betas: tuple[float, float],
    weight_decay: float,
) -> tuple[LossBreakdown, float]:
    """One forward/backward/update pass; returns (loss, gradient norm)."""
    tape = ad.Tape()
    trainable = set(_mode_param_names(snapshot, loss_mode))
    param_nodes: dict[str, ad.Tensor] = {}
    for name, value in snapshot.params.items():
        param_nodes[name] = tape.leaf(value, name) if name in trainable else ad.constant(value)
    temps = TemperatureSet.from_dict(snapshot.temperatures)
    temp_nodes = {p: tape.leaf(np.asarray(v), f"log_inv_tau_{p}") for p, v in temps.to_dict().items()}

    def embed(modality: str) -> ad.Tensor:
        spec = encoder_spec(snapshot.config, modality)
        local = {k.split(".", 1)[1]: v for k, v in param_nodes.items() if k.startswith(modality + ".")}
        features = {"audio": batch.audio, "text": batch.text, "image": batch.image}[modality]
        return encode_nodes(spec, local, features)

    ea = embed("audio")
    ei = embed("image")
    et = embed("text") if loss_mode != "image_audio_only" else None
    loss_node, breakdown = total_loss_nodes(ea, et, ei, temp_nodes, loss_mode)
    ad.backward(loss_node)

    grads: dict[str, np.ndarray] = {}
    sq_norm = 0.0
    params: dict[str, np.ndarray] = {}
    for name in trainable:
        grad = param_nodes[name].grad
        grad = np.zeros_like(snapshot.params[name]) if grad is None else grad
        grads[name] = grad
        params[name] = snapshot.params[name]
        sq_norm += float(np.sum(grad * grad))
    temp_values = {p: np.asarray(v, dtype=np.float64) for p, v in temps.to_dict().items()}
    active = _ACTIVE_PAIRS[loss_mode]
    for pair in active:
        grad = temp_nodes[pair].grad
        grad = np.zeros(()) if grad is None else grad
        grads[f"temp.{pair}"] = grad
        params[f"temp.{pair}"] = temp_values[pair]
        sq_norm += float(grad) ** 2

    exempt = {n for n in params if _is_decay_exempt(n)}
    adam_step(params, grads, opt_state, lr, betas=betas, weight_decay=weight_decay, decay_exempt=exempt)

    for pair in active:
        snapshot.temperatures[pair] = float(temp_values[pair])
    new_temps = TemperatureSet.from_dict(snapshot.temperatures)
    new_temps.clamp()
    snapshot.temperatures = new_temps.to_dict()
    return breakdown, math.sqrt(sq_norm)


def train_loop(
    config: TrainConfig,
    train_ids,
    store: TripletFeatureStore,
    snapshot: ModelSnapshot,
    out_dir: str | Path | None = None,
) -> tuple[ModelSnapshot, list[StepLog]]:
    """Deterministic full training run; checkpoints once per epoch.

    Mutates and returns ``snapshot``. The cosine horizon is
    max_epochs * steps_per_epoch unless config.max_steps caps it; warmup is
    clipped below the horizon so short runs still decay. The schedule is
    evaluated at 1-based step indices (the first update is not at lr 0).
    """
    train_ids = list(train_ids)
    if config.batch_size > len(train_ids):
        raise ValueError("batch_size exceeds training split size")
    steps_per_epoch = len(train_ids) // config.batch_size
    total_steps = config.max_epochs * steps_per_epoch
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)
    if total_steps <= 0:
        return snapshot, []
    warmup = min(config.warmup_iters, max(total_steps - 1, 0))
    opt_state = OptimizerState()
    logs: list[StepLog] = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    done = False
    for epoch in range(config.max_epochs):
        if done:
            break
        for batch in make_batches(train_ids, store, config.batch_size, seed=config.seed, epoch=epoch):
            lr = lr_at_step(snapshot.step + 1, config.base_lr, warmup, total_steps)
            breakdown, grad_norm = train_step(
                snapshot, batch, config.loss_mode, opt_state, lr, config.betas, config.weight_decay
            )
            snapshot.step += 1
            taus = {p: TemperatureSet.from_dict(snapshot.temperatures).tau(p) for p in ("at", "ai", "ti")}
            logs.append(StepLog(snapshot.step, lr, breakdown, taus, grad_norm))
            if snapshot.step % 100 == 0:
                logger.info(
                    "step %d lr %.3g loss %.4f grad_norm %.3g",
                    snapshot.step, lr, breakdown.total, grad_norm,
                )
            if snapshot.step >= total_steps:
                done = True
                break
        if out_dir is not None:
            save_checkpoint(snapshot, out_dir / f"epoch{epoch:04d}.gclp")
    if out_dir is not None:
        save_checkpoint(snapshot, out_dir / "final.gclp")
        write_loss_log(logs, out_dir / "loss_log.csv")
    return snapshot, logs


def save_train_config(config: TrainConfig, path) -> None:
    """Plain key = value text file mirroring TrainConfig."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# training configuration\n")
        fh.write(f"loss_mode = {config.loss_mode}\n")
        fh.write(f"batch_size = {config.batch_size}\n")
        fh.write(f"base_lr = {config.base_lr!r}\n")
        fh.write(f"warmup_iters = {config.warmup_iters}\n")
        fh.write(f"max_epochs = {config.max_epochs}\n")
        fh.write(f"weight_decay = {config.weight_decay!r}\n")
        fh.write(f"betas = {config.betas[0]!r}, {config.betas[1]!r}\n")
        fh.write(f"seed = {config.seed}\n")
        if config.max_steps is not None:
            fh.write(f"max_steps = {config.max_steps}\n")


def load_train_config(path) -> TrainConfig:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line: {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    kwargs: dict = {}
    if "loss_mode" in values:
        kwargs["loss_mode"] = values["loss_mode"]
    for key in ("batch_size", "warmup_iters", "max_epochs", "seed", "max_steps"):
        if key in values:
            kwargs[key] = int(values[key])
    for key in ("base_lr", "weight_decay"):
        if key in values:
            kwargs[key] = float(values[key])
    if "betas" in values:
        parts = [float(p) for p in values["betas"].split(",")]
        if len(parts) != 2:
            raise ConfigError("betas must be two comma-separated floats")
        kwargs["betas"] = tuple(parts)
    return TrainConfig(**kwargs)
