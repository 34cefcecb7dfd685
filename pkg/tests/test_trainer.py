import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vdr import checks
from vdr import diffcore as dc
from vdr.data import ObjectFeatureSet
from vdr.errors import RunFailure, ValidationError
from vdr.models import MODEL_NAMES
from vdr.predictions import read_predictions, write_predictions
from vdr.trainer import Adam, Checkpoint, TrainConfig, clip_gradients, predict, train


def quick(model="mn_rcnn", **kw):
    base = dict(model=model, epochs=2, batch_size=4, learning_rate=1e-2, hidden=4, embed_dim=6, seed=1)
    base.update(kw)
    return TrainConfig(**base)


def copy_store(store):
    return {k: ObjectFeatureSet(k, v.features.copy()) for k, v in store.items()}


# ---------------------------------------------------------------- optimizer pieces

@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), scale=st.floats(1e-3, 1e3), max_norm=st.floats(0.1, 10))
def test_clip_contract(seed, scale, max_norm):
    rng = np.random.default_rng(seed)
    grads = {"a": scale * rng.normal(size=(3, 2)), "b": scale * rng.normal(size=4)}
    out, norm = clip_gradients(grads, max_norm)
    after = np.sqrt(sum(np.sum(g * g) for g in out.values()))
    assert norm == pytest.approx(np.sqrt(sum(np.sum(g * g) for g in grads.values())), rel=1e-12)
    if norm > max_norm:
        assert after == pytest.approx(max_norm, rel=1e-9)
        for k in grads:   # direction kept
            np.testing.assert_allclose(out[k] * norm / max_norm, grads[k], rtol=1e-9)
    else:
        assert all(out[k] is grads[k] or np.array_equal(out[k], grads[k]) for k in grads)


def test_adam_first_step_is_lr_sized():
    p = {"w": dc.parameter(np.zeros(3))}
    Adam(p, 0.1).step(p, {"w": np.array([2.0, -0.5, 1e-3])})
    np.testing.assert_allclose(p["w"].data, [-0.1, 0.1, -0.1], rtol=1e-4)


def test_adam_skips_frozen():
    p = {"w": dc.parameter(np.ones(2)), "e": dc.Value(np.ones(2), requires_grad=False)}
    opt = Adam(p, 0.1)
    assert opt.names == ["w"]


def test_config_validation(small_world):
    _, dialogs, store, _, vocab = small_world
    for bad in (quick(model="nope"), quick(epochs=0), quick(learning_rate=-1.0), quick(batch_size=0)):
        with pytest.raises(ValidationError) as exc:
            train(bad, dialogs, store, vocab=vocab)
        assert exc.value.code == "config"


def test_default_hyperparameters():
    c = TrainConfig()
    assert (c.learning_rate, c.batch_size, c.grad_clip_norm, c.adam_betas) == (1e-3, 20, 5.0, (0.9, 0.999))


# ---------------------------------------------------------------- training behaviour

@pytest.mark.parametrize("model", MODEL_NAMES)
def test_zero_learning_rate_changes_nothing(small_world, model):
    _, dialogs, store, _, vocab = small_world
    ckpts = train(quick(model, learning_rate=0.0, embed_trainable=True), dialogs, store, vocab=vocab)
    first, last = ckpts[0].params, ckpts[-1].params
    init = train(quick(model, learning_rate=0.0, epochs=1, embed_trainable=True), dialogs, store, vocab=vocab)
    for k in first:
        assert first[k].tobytes() == last[k].tobytes() == init[0].params[k].tobytes()


def test_frozen_embeddings_stay_bitwise(small_world):
    _, dialogs, store, _, vocab = small_world
    frozen = train(quick("lf_rcnn", epochs=1, learning_rate=0.0), dialogs, store, vocab=vocab)[0]
    moved = train(quick("lf_rcnn", epochs=3), dialogs, store, vocab=vocab)
    assert moved[-1].params["embed"].tobytes() == frozen.params["embed"].tobytes()
    assert moved[-1].params["fuse.w"].tobytes() != frozen.params["fuse.w"].tobytes()


def test_trainable_embeddings_move(small_world):
    _, dialogs, store, _, vocab = small_world
    base = train(quick("mn_rcnn", epochs=1, learning_rate=0.0), dialogs, store, vocab=vocab)[0]
    moved = train(quick("mn_rcnn", epochs=2), dialogs, store, vocab=vocab)[-1]
    assert moved.params["embed"].tobytes() != base.params["embed"].tobytes()


def test_loss_goes_down(small_world):
    _, dialogs, store, _, vocab = small_world
    hist = train(quick("mn_rcnn_wt", epochs=15), dialogs, store, vocab=vocab)[-1].loss_history
    assert len(hist) == 15 and hist[-1] < hist[0]


def test_one_checkpoint_per_epoch(small_world):
    _, dialogs, store, _, vocab = small_world
    seen = []
    ckpts = train(quick(epochs=3), dialogs, store, vocab=vocab, on_epoch=lambda c: seen.append(c.epoch))
    assert [c.epoch for c in ckpts] == seen == [1, 2, 3]


def test_feature_miss(small_world):
    _, dialogs, store, _, vocab = small_world
    partial = {k: v for k, v in store.items() if k != dialogs[0].image_id}
    with pytest.raises(ValidationError) as exc:
        train(quick(), dialogs, partial, vocab=vocab)
    assert exc.value.code == f"feature-miss:{dialogs[0].image_id}"


def test_divergence_keeps_good_checkpoints(small_world):
    _, dialogs, store, _, vocab = small_world
    poisoned = copy_store(store)

    def poison(ckpt):
        for fs in poisoned.values():
            fs.features[:] = np.nan

    with pytest.raises(RunFailure) as exc:
        train(quick(epochs=3), dialogs, poisoned, vocab=vocab, on_epoch=poison)
    steps_per_epoch = -(-sum(len(d.rounds) for d in dialogs) // 4)
    assert exc.value.code == f"diverged@{steps_per_epoch + 1}"
    assert [c.epoch for c in exc.value.checkpoints] == [1]


def test_training_is_deterministic(small_world, tmp_path):
    _, dialogs, store, _, vocab = small_world
    for i in range(2):
        ckpt = train(quick("mn_rcnn_wt", epochs=2), dialogs, store, vocab=vocab)[-1]
        ckpt.save(tmp_path / f"c{i}.vdckpt")
        write_predictions(tmp_path / f"p{i}.jsonl", predict(ckpt, dialogs, store))
    assert (tmp_path / "c0.vdckpt").read_bytes() == (tmp_path / "c1.vdckpt").read_bytes()
    assert (tmp_path / "p0.jsonl").read_bytes() == (tmp_path / "p1.jsonl").read_bytes()


def test_seed_matters(small_world):
    _, dialogs, store, _, vocab = small_world
    a = train(quick(epochs=1, seed=1), dialogs, store, vocab=vocab)[-1]
    b = train(quick(epochs=1, seed=2), dialogs, store, vocab=vocab)[-1]
    assert a.params["fuse.w"].tobytes() != b.params["fuse.w"].tobytes()


# ---------------------------------------------------------------- checkpoints and prediction

@pytest.mark.parametrize("model", MODEL_NAMES)
def test_checkpoint_round_trip(small_world, tmp_path, model):
    _, dialogs, store, _, vocab = small_world
    ckpt = train(quick(model, epochs=1), dialogs, store, vocab=vocab)[-1]
    ckpt.save(tmp_path / "c.vdckpt")
    back = Checkpoint.load(tmp_path / "c.vdckpt")
    assert back.model == ckpt.model and back.vocab == vocab.id_to_token and back.epoch == 1
    assert all(back.params[k].tobytes() == ckpt.params[k].tobytes() for k in ckpt.params)
    a, b = predict(ckpt, dialogs, store), predict(back, dialogs, store)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert back.to_params()["embed"].requires_grad == ckpt.model.encoder.embed_trainable


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"NOTACKPT" + bytes(16))
    with pytest.raises(ValidationError) as exc:
        Checkpoint.load(tmp_path / "x")
    assert exc.value.code == "checkpoint-format"


def test_predictions_normalized_after_file_round_trip(small_world, tmp_path):
    _, dialogs, store, _, vocab = small_world
    ckpt = train(quick("lf_rcnn", epochs=1), dialogs, store, vocab=vocab)[-1]
    preds = predict(ckpt, dialogs, store)
    assert sorted(preds) == [(d.dialog_id, t + 1) for d in dialogs for t in range(len(d.rounds))]
    write_predictions(tmp_path / "p.jsonl", preds)
    back = read_predictions(tmp_path / "p.jsonl")
    for k, lp in back.items():
        assert abs(np.exp(lp).sum() - 1.0) < 1e-6
        assert np.abs(lp - preds[k]).max() < 1e-6
    write_predictions(tmp_path / "q.jsonl", back)
    assert (tmp_path / "p.jsonl").read_bytes() == (tmp_path / "q.jsonl").read_bytes()


def test_prediction_independent_of_batch_size(small_world):
    _, dialogs, store, _, vocab = small_world
    ckpt = train(quick("mn_rcnn", epochs=1), dialogs, store, vocab=vocab)[-1]
    a, b = predict(ckpt, dialogs, store, batch_size=1), predict(ckpt, dialogs, store, batch_size=50)
    assert all(np.abs(a[k] - b[k]).max() < 1e-12 for k in a)


# ---------------------------------------------------------------- model gradients

@pytest.mark.parametrize("model", MODEL_NAMES)
def test_model_gradient_check(model):
    report = checks.check_model(model)
    assert report.passed, report


@pytest.mark.slow
@pytest.mark.parametrize("model", MODEL_NAMES)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_model_gradients_within_rounding_noise(model, seed):
    # strict relative error trips on entries near zero; judge those against the difference noise
    assert checks.noise_aware_errors(model, seed) < 1.0
