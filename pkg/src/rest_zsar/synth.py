"""Synthetic compositional video/label data and the dataset JSON format.

Each seen class ``i`` gets a unit semantic vector ``s_i`` and a visual mean
``v_i``. Each unseen class mixes ``c`` seen anchors with Dirichlet weights
``w`` and applies the *same* weights in both spaces, so a good transfer
scheme can rebuild unseen visual prototypes from seen ones. Frames are the
class mean plus isotropic Gaussian noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .labels import WordVectorTable


class DatasetFormatError(ValueError):
    pass


@dataclass
class Instance:
    id: str
    class_id: int
    frames: np.ndarray  # (T, p)


@dataclass
class Dataset:
    feature_dim: int
    labels: list
    instances: list

    def __post_init__(self):
        if not self.labels:
            raise DatasetFormatError("dataset has no labels")
        if not self.instances:
            raise DatasetFormatError("dataset has no instances")
        for inst in self.instances:
            if not 0 <= inst.class_id < len(self.labels):
                raise DatasetFormatError(
                    f"instance {inst.id}: class_id {inst.class_id} outside "
                    f"[0, {len(self.labels)})")
            if inst.frames.ndim != 2 or inst.frames.shape[1] != self.feature_dim \
                    or inst.frames.shape[0] < 1:
                raise DatasetFormatError(
                    f"instance {inst.id}: frames shape {inst.frames.shape}, "
                    f"feature_dim {self.feature_dim}")

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.feature_dim == other.feature_dim and self.labels == other.labels
                and len(self.instances) == len(other.instances)
                and all(a.id == b.id and a.class_id == b.class_id
                        and np.array_equal(a.frames, b.frames)
                        for a, b in zip(self.instances, other.instances)))

    def class_ids(self):
        return np.array([inst.class_id for inst in self.instances])

    def to_dict(self):
        return {
            "feature_dim": self.feature_dim,
            "labels": list(self.labels),
            "instances": [{"id": inst.id, "class_id": int(inst.class_id),
                           "frames": inst.frames.tolist()} for inst in self.instances],
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            p = int(doc["feature_dim"])
            labels = [str(lab) for lab in doc["labels"]]
            insts = [Instance(str(it["id"]), int(it["class_id"]),
                              np.asarray(it["frames"], dtype=np.float64))
                     for it in doc["instances"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"malformed dataset document: {exc}") from None
        return cls(p, labels, insts)


def save_dataset(dataset: Dataset, path):
    Path(path).write_text(json.dumps(dataset.to_dict()))


def load_dataset(path) -> Dataset:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: not JSON ({exc})") from None
    return Dataset.from_dict(doc)


@dataclass
class SynthConfig:
    num_seen: int = 20
    num_unseen: int = 8
    instances_per_class: int = 16
    frames: int = 6
    feature_dim: int = 16
    label_dim: int = 12
    composition_degree: int = 3
    noise_sigma: float = 0.2
    mix_concentration: float = 1.0  # symmetric Dirichlet parameter for mixing weights
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.composition_degree <= self.num_seen:
            raise ValueError("composition_degree must lie in [2, num_seen]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.mix_concentration <= 0:
            raise ValueError("mix_concentration must be > 0")
        for name in ("num_seen", "num_unseen", "instances_per_class", "frames",
                     "feature_dim", "label_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)

    to_dict = asdict


@dataclass
class SynthData:
    train: Dataset
    test: Dataset
    seen_labels: list
    unseen_labels: list
    seen_vectors: WordVectorTable
    unseen_vectors: WordVectorTable
    anchors: np.ndarray      # (gamma, c) seen ids mixed into each unseen class
    weights: np.ndarray      # (gamma, c) mixing weights
    seen_means: np.ndarray   # (kappa, p)
    unseen_means: np.ndarray  # (gamma, p)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def generate(config: SynthConfig) -> SynthData:
    rng = np.random.default_rng(config.seed)
    k, g, c = config.num_seen, config.num_unseen, config.composition_degree
    sem = _unit(rng.normal(size=(k, config.label_dim)))
    vis = rng.normal(size=(k, config.feature_dim))
    anchors = np.stack([np.sort(rng.choice(k, size=c, replace=False)) for _ in range(g)])
    weights = rng.dirichlet(np.full(c, config.mix_concentration), size=g)
    unseen_sem = np.einsum("jc,jcd->jd", weights, sem[anchors])
    unseen_vis = np.einsum("jc,jcd->jd", weights, vis[anchors])

    seen_labels = [f"cls{i}" for i in range(k)]
    seen_table = {lab: sem[i].copy() for i, lab in enumerate(seen_labels)}
    # unseen label = its anchor words plus one fresh word whose vector makes
    # the plain word average equal to the weighted mixture
    unseen_labels, unseen_table = [], {}
    for j in range(g):
        fresh = f"mix{j}"
        unseen_labels.append(" ".join([fresh] + [seen_labels[a] for a in anchors[j]]))
        unseen_table[fresh] = (c + 1) * unseen_sem[j] - sem[anchors[j]].sum(axis=0)
        for a in anchors[j]:
            unseen_table[seen_labels[a]] = sem[a].copy()

    def instances(means, prefix):
        out = []
        for cid, mu in enumerate(means):
            for q in range(config.instances_per_class):
                noise = rng.normal(scale=config.noise_sigma,
                                   size=(config.frames, config.feature_dim))
                out.append(Instance(f"{prefix}-{cid:03d}-{q:03d}", cid, mu + noise))
        return out

    train = Dataset(config.feature_dim, seen_labels, instances(vis, "seen"))
    test = Dataset(config.feature_dim, unseen_labels, instances(unseen_vis, "unseen"))
    return SynthData(
        train=train, test=test, seen_labels=seen_labels, unseen_labels=unseen_labels,
        seen_vectors=WordVectorTable(config.label_dim, seen_table),
        unseen_vectors=WordVectorTable(config.label_dim, dict(sorted(unseen_table.items()))),
        anchors=anchors, weights=weights, seen_means=vis, unseen_means=unseen_vis)


def split_seen_unseen(dataset: Dataset, unseen_classes):
    """Split one labelled dataset into (seen, unseen) datasets with re-indexed ids."""
    unseen_classes = sorted(set(int(c) for c in unseen_classes))
    seen_classes = [c for c in range(len(dataset.labels)) if c not in unseen_classes]
    if not unseen_classes or not seen_classes:
        raise ValueError("both the seen and the unseen side need at least one class")

    def subset(classes):
        remap = {old: new for new, old in enumerate(classes)}
        insts = [Instance(i.id, remap[i.class_id], i.frames)
                 for i in dataset.instances if i.class_id in remap]
        return Dataset(dataset.feature_dim, [dataset.labels[c] for c in classes], insts)

    return subset(seen_classes), subset(unseen_classes)
