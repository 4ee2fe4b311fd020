import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialsum import synthetic, trainer
from dialsum.autodiff import ParameterStore
from dialsum.checkpoint import Checkpoint
from dialsum.model import ModelConfig
from dialsum.objectives import LossWeights
from dialsum.trainer import (
    LOG_COLUMNS,
    AdamState,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    clip_gradients,
    fit,
    global_norm,
)

from .conftest import tiny_example

SMALL = ModelConfig(d_e=6, d=8, d_up=2, d_sp=2, dropout=0.2, max_utt_positions=8, max_sum_positions=24)


def _data():
    return synthetic.make_flow_corpus(6, 5, n_blocks=2, utts_per_block=1)


# ----------------------------------------------------------------------
# clipping
# ----------------------------------------------------------------------

def test_clip_example():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_gradients(grads, 1.0)
    assert norm == 5.0
    np.testing.assert_allclose(clipped["a"], [0.6])
    np.testing.assert_allclose(clipped["b"], [0.8])


def test_clip_leaves_small_gradients():
    grads = {"a": np.array([0.3, 0.4])}
    clipped, norm = clip_gradients(grads, 1.0)
    assert clipped is grads and norm == pytest.approx(0.5)


def test_clip_rejects_nonpositive():
    with pytest.raises(ValueError):
        clip_gradients({"a": np.ones(1)}, 0.0)


@given(st.integers(0, 2**31), st.floats(0.1, 10.0))
def test_clip_bounds_norm_and_keeps_direction(seed, max_norm):
    rng = np.random.default_rng(seed)
    grads = {"a": rng.normal(size=(3, 2)) * 5, "b": rng.normal(size=4)}
    clipped, norm = clip_gradients(grads, max_norm)
    assert global_norm(clipped) <= max_norm * (1 + 1e-12)
    flat = np.concatenate([g.ravel() for g in grads.values()])
    flat_c = np.concatenate([g.ravel() for g in clipped.values()])
    assert np.dot(flat, flat_c) == pytest.approx(np.linalg.norm(flat) * np.linalg.norm(flat_c))


# ----------------------------------------------------------------------
# Adam
# ----------------------------------------------------------------------

def test_adam_first_step_is_lr_times_sign():
    store = ParameterStore()
    store.add("w", np.array([1.0, -2.0, 0.5]))
    adam_step(store, {"w": np.array([0.3, -7.0, 1e-3])}, AdamState(), 0.1)
    np.testing.assert_allclose(store["w"].data, [0.9, -1.9, 0.4], atol=1e-6)


def _adam_oracle(x, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return x


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=10), st.floats(1e-4, 0.5))
def test_adam_matches_scalar_oracle(grads, lr):
    store = ParameterStore()
    store.add("w", np.array([0.7]))
    state = AdamState()
    for g in grads:
        adam_step(store, {"w": np.array([g])}, state, lr)
    assert state.step == len(grads)
    assert store["w"].data[0] == pytest.approx(_adam_oracle(0.7, grads, lr), rel=1e-12, abs=1e-12)


# ----------------------------------------------------------------------
# config
# ----------------------------------------------------------------------

@pytest.mark.parametrize("kw", [{"batch_size": 0}, {"learning_rate": -1.0}, {"max_epochs": 0},
                                {"patience_decay": 3, "patience_stop": 2}])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_train_config_roundtrip():
    tc = TrainConfig(batch_size=4, seed=9)
    assert TrainConfig.from_dict({**tc.to_dict(), "unknown": 1}) == tc


# ----------------------------------------------------------------------
# fit
# ----------------------------------------------------------------------

def test_fit_rejects_empty():
    with pytest.raises(ValueError):
        fit([], [], SMALL, LossWeights(), TrainConfig())


def test_fit_is_deterministic():
    tc = TrainConfig(batch_size=2, learning_rate=0.01, max_epochs=2, seed=4)
    a = fit(_data(), _data()[:2], SMALL, LossWeights(), tc)
    b = fit(_data(), _data()[:2], SMALL, LossWeights(), tc)
    assert a.history == b.history
    for name in a.checkpoint.model.params.names():
        np.testing.assert_array_equal(a.checkpoint.model.params[name].data, b.checkpoint.model.params[name].data)


def test_fit_seed_changes_run():
    kw = dict(batch_size=2, learning_rate=0.01, max_epochs=1)
    a = fit(_data(), _data(), SMALL, LossWeights(), TrainConfig(seed=0, **kw))
    b = fit(_data(), _data(), SMALL, LossWeights(), TrainConfig(seed=1, **kw))
    assert a.history[0]["train_loss"] != b.history[0]["train_loss"]


def test_log_file_and_checkpoint(tmp_path):
    log, ckpt = tmp_path / "train.log.tsv", tmp_path / "model.ckpt"
    res = fit(_data(), _data(), SMALL, LossWeights(), TrainConfig(batch_size=3, max_epochs=3, learning_rate=0.01),
              log_path=log, checkpoint_path=ckpt)
    lines = log.read_text().splitlines()
    assert lines[0].split("\t") == list(LOG_COLUMNS)
    assert len(lines) == 1 + len(res.history)
    for row in res.history:
        assert row["max_grad_norm_after_clip"] <= 1.0 + 1e-9
    loaded = Checkpoint.load(ckpt)
    assert loaded.epoch == res.checkpoint.epoch and loaded.valid_ppl == res.checkpoint.valid_ppl
    assert res.checkpoint.valid_ppl == min(r["valid_ppl"] for r in res.history)


def _replay_schedule(history, tc):
    """Recompute the LR sequence and stopping epoch from the recorded perplexities."""
    lr, best, bad = tc.learning_rate, float("inf"), 0
    lrs = []
    for i, row in enumerate(history):
        lrs.append(lr)
        if row["valid_ppl"] < best:
            best, bad = row["valid_ppl"], 0
        else:
            bad += 1
            if bad % tc.patience_decay == 0:
                lr /= 2
            if bad >= tc.patience_stop:
                return lrs, i + 1
    return lrs, len(history)


@pytest.mark.parametrize("lr", [0.5, 0.05])
def test_lr_halving_and_early_stop_follow_rule(lr):
    tc = TrainConfig(batch_size=6, learning_rate=lr, max_epochs=12, patience_decay=1, patience_stop=2, seed=2)
    res = fit(_data(), _data()[:1], SMALL, LossWeights(), tc)
    lrs, stop = _replay_schedule(res.history, tc)
    assert [r["lr"] for r in res.history] == lrs
    assert len(res.history) == stop


def test_divergence_reports_context(monkeypatch):
    real = trainer.example_losses

    def poisoned(*args, **kw):
        parts = real(*args, **kw)
        parts["loss"] = parts["loss"] * float("nan")
        return parts

    monkeypatch.setattr(trainer, "example_losses", poisoned)
    with pytest.raises(TrainingDiverged, match="non-finite loss .* epoch 1"):
        fit(_data(), _data(), SMALL, LossWeights(), TrainConfig(max_epochs=1))


def test_prepare_example_appends_end_and_uses_gold(tiny_vocab):
    prep = trainer.prepare_example(tiny_example(), tiny_vocab)
    assert prep.targets[-1] == tiny_vocab.eos_id
    assert prep.n_tokens == len(tiny_example().summary) + 1
    assert [t.subject for t in prep.triplets] == ["tom"]
