import numpy as np
import pytest

from rest_zsar import synth
from rest_zsar.evaluation import rank_classes
from rest_zsar.labels import cosine, embed_labels, relatedness_matrix
from rest_zsar.transfer import compose_prototypes


def test_noiseless_instances_identical():
    sd = synth.generate(synth.SynthConfig(noise_sigma=0.0, num_seen=5, num_unseen=2))
    for ds in (sd.train, sd.test):
        for inst in ds.instances:
            first = next(i for i in ds.instances if i.class_id == inst.class_id)
            assert np.array_equal(inst.frames, first.frames)


def test_deterministic():
    cfg = synth.SynthConfig(seed=7, num_seen=6, num_unseen=3)
    a, b = synth.generate(cfg), synth.generate(cfg)
    assert a.train == b.train and a.test == b.test
    assert a.unseen_labels == b.unseen_labels
    c = synth.generate(synth.SynthConfig(seed=8, num_seen=6, num_unseen=3))
    assert c.train != a.train


def test_label_sets_disjoint():
    sd = synth.generate(synth.SynthConfig())
    assert not set(sd.seen_labels) & set(sd.unseen_labels)


def test_unseen_embedding_is_the_mixture():
    cfg = synth.SynthConfig(seed=3)
    sd = synth.generate(cfg)
    seen = embed_labels(sd.seen_vectors, sd.seen_labels)
    unseen = embed_labels(sd.unseen_vectors, sd.unseen_labels)
    S = np.array([e.vector for e in seen])
    for j, e in enumerate(unseen):
        np.testing.assert_allclose(e.vector, sd.weights[j] @ S[sd.anchors[j]], atol=1e-12)
        np.testing.assert_allclose(sd.unseen_means[j], sd.weights[j] @ sd.seen_means[sd.anchors[j]])


def test_anchors_closer_than_non_anchors():
    anchor, other = [], []
    for seed in range(100):
        sd = synth.generate(synth.SynthConfig(seed=seed, instances_per_class=1))
        seen = embed_labels(sd.seen_vectors, sd.seen_labels)
        unseen = embed_labels(sd.unseen_vectors, sd.unseen_labels)
        for j, u in enumerate(unseen):
            for i, s in enumerate(seen):
                (anchor if i in sd.anchors[j] else other).append(cosine(u.vector, s.vector))
    assert np.mean(anchor) > np.mean(other)


def test_oracle_adjacency_is_perfect():
    cfg = synth.SynthConfig(noise_sigma=0.0, seed=1)
    sd = synth.generate(cfg)
    seen = embed_labels(sd.seen_vectors, sd.seen_labels)
    unseen = embed_labels(sd.unseen_vectors, sd.unseen_labels)
    M = relatedness_matrix(unseen, seen)
    A = np.zeros(M.shape, dtype=int)
    for j, row in enumerate(sd.anchors):
        A[j, row] = 1
    # oracle adjacency on true anchors, with the true mixing weights in place of m
    W = np.zeros(M.shape)
    for j, (row, w) in enumerate(zip(sd.anchors, sd.weights)):
        W[j, row] = w
    comp = compose_prototypes(A, W, sd.seen_means)
    X = np.array([inst.frames.mean(axis=0) for inst in sd.test.instances])
    pred = rank_classes(X, comp.vectors)[:, 0]
    assert np.mean(pred == sd.test.class_ids()) == 1.0
    assert M.shape == (cfg.num_unseen, cfg.num_seen)


def test_roundtrip(tmp_path):
    sd = synth.generate(synth.SynthConfig(num_seen=4, num_unseen=2, instances_per_class=2))
    synth.save_dataset(sd.train, tmp_path / "d.json")
    assert synth.load_dataset(tmp_path / "d.json") == sd.train


def test_schema_violations(tmp_path):
    inst = synth.Instance("a", 2, np.zeros((2, 3)))
    with pytest.raises(synth.DatasetFormatError):
        synth.Dataset(3, ["x", "y"], [inst])
    with pytest.raises(synth.DatasetFormatError):
        synth.Dataset(3, ["x"], [])
    with pytest.raises(synth.DatasetFormatError):
        synth.Dataset(4, ["x"], [synth.Instance("a", 0, np.zeros((2, 3)))])
    (tmp_path / "bad.json").write_text('{"feature_dim": 3}')
    with pytest.raises(synth.DatasetFormatError):
        synth.load_dataset(tmp_path / "bad.json")


def test_config_validation():
    with pytest.raises(ValueError):
        synth.SynthConfig(composition_degree=1)
    with pytest.raises(ValueError):
        synth.SynthConfig(noise_sigma=-0.1)
    with pytest.raises(ValueError):
        synth.SynthConfig.from_dict({"num_sen": 3})


def test_split_seen_unseen():
    sd = synth.generate(synth.SynthConfig(num_seen=5, num_unseen=2, instances_per_class=2))
    seen, unseen = synth.split_seen_unseen(sd.train, [1, 3])
    assert unseen.labels == ["cls1", "cls3"] and len(seen.labels) == 3
    assert sorted(set(unseen.class_ids())) == [0, 1]
