import copy
import math

import numpy as np
import pytest

from geoclap import autodiff as ad
from geoclap.data import SyntheticGenConfig, generate_synthetic_triplets
from geoclap.embedding import EmbeddingBatch
from geoclap.encoders import ModelConfig, encode_nodes, encoder_spec, init_snapshot
from geoclap.errors import ConfigError, MisalignedBatchError
from geoclap.training import (
    OptimizerState,
    TemperatureSet,
    TrainConfig,
    adam_step,
    load_train_config,
    lr_at_step,
    pair_contrastive_loss,
    save_train_config,
    total_loss,
    total_loss_nodes,
    train_loop,
    write_loss_log,
)


def unit_rows(rng, n, d):
    rows = rng.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def batch_of(rows, prefix="s"):
    return EmbeddingBatch(rows, tuple(f"{prefix}{i}" for i in range(rows.shape[0])))


# ---------------------------------------------------------------- pair loss

def test_pair_loss_single_sample_zero():
    single = batch_of(np.array([[0.6, 0.8]]))
    assert pair_contrastive_loss(single, single, 0.07).item() == 0.0


def test_pair_loss_orthonormal_two():
    e = batch_of(np.eye(2))
    assert pair_contrastive_loss(e, e, 1.0).item() == pytest.approx(0.31326, abs=1e-5)


def test_pair_loss_identical_four():
    rows = np.tile([0.0, 1.0], (4, 1))
    b = batch_of(rows)
    assert pair_contrastive_loss(b, b, 0.07).item() == pytest.approx(math.log(4), abs=1e-9)


def test_pair_loss_symmetry_100_batches():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        ea = batch_of(unit_rows(rng, n, 6))
        eb = batch_of(unit_rows(rng, n, 6), prefix="s")  # same ids: aligned
        tau = float(rng.uniform(0.05, 1.0))
        delta = abs(
            pair_contrastive_loss(ea, eb, tau).item()
            - pair_contrastive_loss(eb, ea, tau).item()
        )
        assert delta < 1e-12


def test_pair_loss_joint_permutation_invariant():
    rng = np.random.default_rng(1)
    ea, eb = unit_rows(rng, 6, 8), unit_rows(rng, 6, 8)
    perm = rng.permutation(6)
    base = pair_contrastive_loss(ea, eb, 0.2).item()
    permuted = pair_contrastive_loss(ea[perm], eb[perm], 0.2).item()
    assert base == pytest.approx(permuted, abs=1e-12)


def test_pair_loss_nonnegative_random():
    rng = np.random.default_rng(2)
    for _ in range(20):
        ea, eb = unit_rows(rng, 5, 4), unit_rows(rng, 5, 4)
        assert pair_contrastive_loss(ea, eb, 0.1).item() >= 0.0


def test_pair_loss_equal_similarities_is_log_n():
    rows = np.tile([1.0, 0.0, 0.0], (7, 1))
    assert pair_contrastive_loss(rows, rows, 0.5).item() == pytest.approx(math.log(7), abs=1e-9)


def test_pair_loss_sharpening_drives_loss_to_zero():
    # diagonal strictly dominant: identity embeddings
    e = np.eye(5)
    losses = [pair_contrastive_loss(e, e, tau).item() for tau in (1.0, 0.5, 0.2, 0.1, 0.05)]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-8


def test_pair_loss_misaligned():
    rng = np.random.default_rng(3)
    with pytest.raises(MisalignedBatchError):
        pair_contrastive_loss(unit_rows(rng, 3, 4), unit_rows(rng, 4, 4), 0.1)
    a = EmbeddingBatch(np.eye(2), ("a", "b"))
    b = EmbeddingBatch(np.eye(2), ("b", "a"))
    with pytest.raises(MisalignedBatchError):
        pair_contrastive_loss(a, b, 0.1)


def test_pair_loss_differentiable_in_tau():
    rng = np.random.default_rng(4)
    ea, eb = unit_rows(rng, 4, 6), unit_rows(rng, 4, 6)

    def f(params):
        tape = ad.Tape()
        tau = tape.leaf(params["tau"])
        loss = pair_contrastive_loss(ea, eb, tau)
        ad.backward(loss)
        return loss.item(), {"tau": tau.grad}

    assert ad.finite_difference_check(f, {"tau": np.asarray(0.3)}) < 1e-6


# ---------------------------------------------------------------- total loss

def test_total_loss_sums_components():
    rng = np.random.default_rng(5)
    ea, et, ei = (unit_rows(rng, 4, 8) for _ in range(3))
    temps = TemperatureSet()
    breakdown = total_loss(ea, et, ei, temps, "tri_modal")
    assert breakdown.total == pytest.approx(breakdown.l_at + breakdown.l_ai + breakdown.l_ti)
    assert min(breakdown.l_at, breakdown.l_ai, breakdown.l_ti) >= 0


def test_total_loss_constructed_sum():
    # three pairwise losses of 0.31326 each sum to 0.93978
    e = np.eye(2)
    temps = TemperatureSet(0.0, 0.0, 0.0)  # tau = 1 for every pair
    breakdown = total_loss(e, e, e, temps, "tri_modal")
    assert breakdown.total == pytest.approx(3 * 0.31326, abs=1e-4)


def test_total_loss_mode_reports_absent():
    rng = np.random.default_rng(6)
    ea, et, ei = (unit_rows(rng, 3, 8) for _ in range(3))
    breakdown = total_loss(ea, et, ei, TemperatureSet(), "image_audio_only")
    assert breakdown.l_at is None and breakdown.l_ti is None
    assert breakdown.l_ai is not None
    assert breakdown.total == pytest.approx(breakdown.l_ai)
    frozen = total_loss(ea, et, ei, TemperatureSet(), "frozen_text_audio")
    assert frozen.l_at is None
    assert frozen.total == pytest.approx(frozen.l_ai + frozen.l_ti)


def test_total_loss_single_sample_any_mode():
    rng = np.random.default_rng(7)
    ea, et, ei = (unit_rows(rng, 1, 4) for _ in range(3))
    for mode in ("tri_modal", "frozen_text_audio", "image_audio_only"):
        assert total_loss(ea, et, ei, TemperatureSet(), mode).total == 0.0


# ---------------------------------------------------------------- optimizer

def test_adam_first_step_hand_value():
    p = {"w": np.array([1.0])}
    g = {"w": np.array([1.0])}
    state = OptimizerState()
    adam_step(p, g, state, lr=1e-3, betas=(0.9, 0.98), weight_decay=0.0)
    assert p["w"][0] == pytest.approx(0.999, abs=1e-9)
    assert state.step == 1


def test_adam_zero_gradient_no_motion():
    p = {"w": np.array([2.5])}
    adam_step(p, {"w": np.zeros(1)}, OptimizerState(), lr=1e-3, weight_decay=0.0)
    assert p["w"][0] == 2.5


def test_adam_decoupled_decay():
    p = {"w": np.array([3.0])}
    adam_step(p, {"w": np.zeros(1)}, OptimizerState(), lr=1e-3, weight_decay=0.2)
    assert p["w"][0] == pytest.approx(3.0 * (1 - 2e-4), abs=1e-12)


def test_adam_decay_exempt():
    p = {"b": np.array([3.0])}
    adam_step(p, {"b": np.zeros(1)}, OptimizerState(), lr=1e-3, weight_decay=0.2, decay_exempt={"b"})
    assert p["b"][0] == 3.0


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, OptimizerState(), lr=1e-3)


# ---------------------------------------------------------------- schedule

def test_lr_schedule_knots():
    assert lr_at_step(0, 5e-5, 2000, 10000) == 0.0
    assert lr_at_step(2000, 5e-5, 2000, 10000) == pytest.approx(5e-5)
    assert lr_at_step(10000, 5e-5, 2000, 10000) == 0.0
    assert lr_at_step(6000, 5e-5, 2000, 10000) == pytest.approx(2.5e-5)
    assert lr_at_step(1000, 5e-5, 2000, 10000) == pytest.approx(2.5e-5)


def test_lr_schedule_invalid():
    with pytest.raises(ConfigError):
        lr_at_step(5, 5e-5, warmup=100, total_steps=100)


# ---------------------------------------------------------------- gradients

def total_loss_fd_error(seed, loss_mode="tri_modal"):
    """Finite-difference error of the full model loss over every unfrozen
    parameter and active temperature."""
    rng = np.random.default_rng(seed)
    config = ModelConfig(
        embed_dim=8, hidden_dims=(5,), audio_input_dim=4, text_input_dim=6, image_input_dim=7
    )
    snapshot = init_snapshot(config, seed=seed)
    feats = {
        "audio": rng.standard_normal((4, 4)),
        "text": rng.standard_normal((4, 6)),
        "image": rng.standard_normal((4, 7)),
    }
    base = {name: value.copy() for name, value in snapshot.params.items()}
    for pair, value in snapshot.temperatures.items():
        base[f"temp.{pair}"] = np.asarray(value)

    def f(params):
        tape = ad.Tape()
        nodes = {n: tape.leaf(v, n) for n, v in params.items() if not n.startswith("temp.")}
        temp_nodes = {p: tape.leaf(params[f"temp.{p}"]) for p in ("at", "ai", "ti")}

        def embed(modality):
            local = {k.split(".", 1)[1]: v for k, v in nodes.items() if k.startswith(modality + ".")}
            return encode_nodes(encoder_spec(config, modality), local, feats[modality])

        et = embed("text") if loss_mode != "image_audio_only" else None
        loss, _ = total_loss_nodes(embed("audio"), et, embed("image"), temp_nodes, loss_mode)
        ad.backward(loss)
        grads = {n: (node.grad if node.grad is not None else np.zeros_like(params[n]))
                 for n, node in nodes.items()}
        for p in ("at", "ai", "ti"):
            node = temp_nodes[p]
            grads[f"temp.{p}"] = node.grad if node.grad is not None else np.zeros(())
        return loss.item(), grads

    return ad.finite_difference_check(f, base, h=1e-5)


def test_total_loss_gradients_match_finite_differences():
    assert total_loss_fd_error(seed=0) < 1e-4


# ---------------------------------------------------------------- train loop

@pytest.fixture(scope="module")
def train_world():
    return generate_synthetic_triplets(SyntheticGenConfig(n_samples=192, seed=21))


def small_model():
    return ModelConfig(embed_dim=16, hidden_dims=(12,))


def test_train_zero_epochs_no_change(train_world):
    snapshot = init_snapshot(small_model(), seed=0)
    before = copy.deepcopy(snapshot.params)
    out, logs = train_loop(
        TrainConfig(max_epochs=0, batch_size=32), train_world.manifest.ids(), train_world.features, snapshot
    )
    assert logs == []
    assert all(np.array_equal(before[k], out.params[k]) for k in before)


def test_train_reduces_loss_and_is_deterministic(train_world):
    config = TrainConfig(
        loss_mode="tri_modal", batch_size=32, base_lr=3e-3, warmup_iters=10,
        max_epochs=40, seed=3, max_steps=120,
    )
    s1, logs1 = train_loop(config, train_world.manifest.ids(), train_world.features,
                           init_snapshot(small_model(), seed=5))
    s2, logs2 = train_loop(config, train_world.manifest.ids(), train_world.features,
                           init_snapshot(small_model(), seed=5))
    assert logs1[-1].loss.total < logs1[0].loss.total - 1.0
    assert logs1[-1].loss.total == logs2[-1].loss.total
    assert all(np.array_equal(s1.params[k], s2.params[k]) for k in s1.params)
    assert s1.step == 120
    # temperatures stay positive and capped
    taus = TemperatureSet.from_dict(s1.temperatures)
    for pair in ("at", "ai", "ti"):
        assert 1.0 / 100.0 - 1e-12 <= taus.tau(pair)


def test_train_frozen_mode_leaves_audio_text_bitwise(train_world):
    snapshot = init_snapshot(small_model(), seed=9)
    frozen_before = {
        k: v.tobytes() for k, v in snapshot.params.items()
        if k.startswith(("audio.", "text."))
    }
    image_before = {k: v.tobytes() for k, v in snapshot.params.items() if k.startswith("image.")}
    config = TrainConfig(
        loss_mode="frozen_text_audio", batch_size=32, base_lr=1e-3,
        warmup_iters=5, max_epochs=2, seed=0, max_steps=10,
    )
    out, logs = train_loop(config, train_world.manifest.ids(), train_world.features, snapshot)
    assert all(out.params[k].tobytes() == frozen_before[k] for k in frozen_before)
    assert any(out.params[k].tobytes() != image_before[k] for k in image_before)
    # temperatures still adapt in frozen mode
    assert out.temperatures["ai"] != TemperatureSet().log_inv_tau_ai
    assert all(log.loss.l_at is None for log in logs)


def test_train_image_audio_only_ignores_text(train_world):
    snapshot = init_snapshot(small_model(), seed=11)
    text_before = {k: v.tobytes() for k, v in snapshot.params.items() if k.startswith("text.")}
    config = TrainConfig(
        loss_mode="image_audio_only", batch_size=32, base_lr=1e-3,
        warmup_iters=5, max_epochs=1, seed=0, max_steps=5,
    )
    out, logs = train_loop(config, train_world.manifest.ids(), train_world.features, snapshot)
    assert all(out.params[k].tobytes() == text_before[k] for k in text_before)
    assert all(log.loss.l_at is None and log.loss.l_ti is None for log in logs)


def test_train_writes_checkpoints_and_log(tmp_path, train_world):
    config = TrainConfig(batch_size=48, base_lr=1e-3, warmup_iters=2, max_epochs=2, max_steps=6, seed=1)
    train_loop(config, train_world.manifest.ids(), train_world.features,
               init_snapshot(small_model(), seed=2), out_dir=tmp_path)
    assert (tmp_path / "final.gclp").exists()
    assert (tmp_path / "epoch0000.gclp").exists()
    header = (tmp_path / "loss_log.csv").read_text().splitlines()[0]
    assert header == "step,lr,l_at,l_ai,l_ti,total,tau_at,tau_ai,tau_ti"


def test_loss_log_blank_for_inactive(tmp_path, train_world):
    config = TrainConfig(
        loss_mode="image_audio_only", batch_size=48, base_lr=1e-3,
        warmup_iters=2, max_epochs=1, max_steps=2, seed=1,
    )
    _, logs = train_loop(config, train_world.manifest.ids(), train_world.features,
                         init_snapshot(small_model(), seed=2))
    path = tmp_path / "log.csv"
    write_loss_log(logs, path)
    first = path.read_text().splitlines()[1].split(",")
    assert first[2] == "" and first[4] == ""  # l_at, l_ti blank
    assert first[3] != ""


# ---------------------------------------------------------------- config io

def test_train_config_roundtrip(tmp_path):
    config = TrainConfig(
        loss_mode="frozen_text_audio", batch_size=256, base_lr=5e-5, warmup_iters=2000,
        max_epochs=100, weight_decay=0.2, betas=(0.9, 0.98), seed=4, max_steps=1234,
    )
    path = tmp_path / "train.cfg"
    save_train_config(config, path)
    assert load_train_config(path) == config


def test_train_config_defaults_match_reference_settings():
    config = TrainConfig()
    assert config.base_lr == 5e-5
    assert config.warmup_iters == 2000
    assert config.weight_decay == 0.2
    assert config.betas == (0.9, 0.98)
    assert TemperatureSet().tau("at") == pytest.approx(0.07)


def test_train_config_rejects_bad_mode():
    with pytest.raises(ConfigError):
        TrainConfig(loss_mode="everything")
