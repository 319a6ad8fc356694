import numpy as np
import pytest

from rest_zsar import encoder as E
from rest_zsar import training as T
from rest_zsar.synth import Dataset, Instance


def toy_dataset(n_classes=3, per_class=4, frames=3, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(n_classes, dim))
    insts = [Instance(f"{c}-{q}", c, means[c] + 0.1 * rng.normal(size=(frames, dim)))
             for c in range(n_classes) for q in range(per_class)]
    return Dataset(dim, ["jump high", "run", "swim fast now"][:n_classes], insts)


def setup(tiny, **settings):
    _, vocab, config = tiny
    params = E.init_params(config)
    return params, config, vocab, T.TrainSettings(**settings)


def snapshot(params):
    return {k: p.data.copy() for k, p in params.items()}


def test_one_step_decreases_loss(tiny):
    params, config, vocab, _ = setup(tiny)
    data = toy_dataset()
    words = [vocab.encode(lab) for lab in data.labels]
    plans = [E.MaskingPlan(np.array([0]), np.array([words[i.class_id][0]]))
             for i in data.instances]
    batch = E.make_batch([i.frames for i in data.instances],
                         [words[i.class_id] for i in data.instances],
                         [i.class_id for i in data.instances], vocab, plans)
    loss = E.batch_losses(params, config, batch)[0]
    T.zero_grad(params)
    loss.backward()
    T.SGD(params, T.TrainSettings(algorithm="sgd", weight_decay=0.0)).step(0.05)
    after = E.batch_losses(params, config, batch)[0]
    assert after.data < loss.data


def test_same_seed_same_params(tiny):
    data = toy_dataset()
    runs = []
    for _ in range(2):
        params, config, vocab, settings = setup(tiny, epochs=3, batch_size=5)
        params, hist = T.train(params, config, data, vocab, settings)
        runs.append((snapshot(params), hist))
    assert runs[0][1] == runs[1][1]
    assert all(np.array_equal(runs[0][0][k], runs[1][0][k]) for k in runs[0][0])

    params, config, vocab, settings = setup(tiny, epochs=3, batch_size=5)
    params, _ = T.train(params, config, data, vocab, settings, seed=123)
    assert any(not np.array_equal(params[k].data, runs[0][0][k]) for k in params)


def test_training_fits_toy_set(tiny):
    params, config, vocab, settings = setup(tiny, epochs=60, batch_size=4, learning_rate=1e-2)
    _, hist = T.train(params, config, toy_dataset(), vocab, settings)
    assert hist[-1]["train_top1"] == 1.0
    assert hist[-1]["loss_total"] < hist[0]["loss_total"]


def test_early_stop(tiny):
    params, config, vocab, settings = setup(tiny, epochs=200, batch_size=4, learning_rate=1e-2,
                                            target_top1=1.0)
    _, hist = T.train(params, config, toy_dataset(), vocab, settings)
    assert len(hist) < 200 and hist[-1]["train_top1"] == 1.0


def test_cls_only_leaves_mtl_head(tiny):
    _, vocab, config = tiny
    config = E.EncoderConfig(**{**config.to_dict(), "loss_mode": "cls"})
    params = E.init_params(config)
    before = params["mtl_head.w"].data.copy()
    T.train(params, config, toy_dataset(), vocab,
            T.TrainSettings(epochs=2, weight_decay=0.0))
    assert np.array_equal(params["mtl_head.w"].data, before)


def test_nan_loss_raises(tiny):
    params, config, vocab, settings = setup(tiny, epochs=1)
    params["visual_proj.w"].data[0, 0] = np.nan
    with pytest.raises(T.TrainingError, match="non-finite"):
        T.train(params, config, toy_dataset(), vocab, settings)


def test_class_out_of_range(tiny):
    _, vocab, config = tiny
    config = E.EncoderConfig(**{**config.to_dict(), "num_seen_classes": 2})
    with pytest.raises(T.TrainingError):
        T.train(E.init_params(config), config, toy_dataset(), vocab, T.TrainSettings(epochs=1))


def test_cosine_schedule():
    s = T.TrainSettings(learning_rate=0.1)
    assert T.learning_rate(s, 0, 10) == pytest.approx(0.1)
    assert T.learning_rate(s, 5, 10) == pytest.approx(0.05)
    flat = T.TrainSettings(learning_rate=0.1, schedule="constant")
    assert T.learning_rate(flat, 7, 10) == 0.1


def test_weight_decay_scope(tiny):
    """Decay shrinks matrices but not biases, LayerNorm parameters or embeddings."""
    params, *_ = setup(tiny)
    for p in params.values():
        p.grad = np.zeros_like(p.data)
    before = snapshot(params)
    T.AdamW(params, T.TrainSettings(weight_decay=0.5)).step(0.1)
    assert np.all(np.abs(params["visual_proj.w"].data) <= np.abs(before["visual_proj.w"]))
    assert not np.array_equal(params["visual_proj.w"].data, before["visual_proj.w"])
    for name in ("visual_proj.b", "layer0.ln1.g", "pos_visual", "segment"):
        assert np.array_equal(params[name].data, before[name])


def test_settings_reject_unknown():
    with pytest.raises(E.ConfigError):
        T.TrainSettings.from_dict({"epoch": 3})
    with pytest.raises(E.ConfigError):
        T.TrainSettings(algorithm="rmsprop")


def test_write_log(tmp_path, tiny):
    params, config, vocab, settings = setup(tiny, epochs=2)
    _, hist = T.train(params, config, toy_dataset(), vocab, settings)
    T.write_log(hist, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == ",".join(T.LOG_COLUMNS) and len(lines) == 3
