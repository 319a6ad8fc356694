"""Run configuration, artifact file formats, and the end-to-end pipeline
(train on seen classes, build composite prototypes, evaluate on unseen)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import encoder as E
from .evaluation import EvalReport, run_split_protocol
from .labels import LabelEmbedding, embed_labels, relatedness_matrix
from .synth import Dataset, SynthConfig, generate
from .training import TrainSettings, train
from .transfer import (DEFAULT_GRID, CVResult, TransferParams, class_means, cv_select_params,
                       transfer)


class RunConfigError(ValueError):
    pass


TRANSFER_KEYS = {"theta", "k", "rho", "cv", "grid", "folds"}
EVAL_KEYS = {"fraction", "splits", "hubness_k"}
SECTIONS = {"seed", "encoder", "training", "transfer", "eval", "synth"}


@dataclass
class RunConfig:
    seed: int | None = None
    encoder: dict = field(default_factory=dict)
    training: TrainSettings = field(default_factory=TrainSettings)
    transfer: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise RunConfigError("run config must be a JSON object")
        unknown = set(doc) - SECTIONS
        if unknown:
            raise RunConfigError(f"unknown config sections: {sorted(unknown)}")
        enc = dict(doc.get("encoder", {}))
        bad = set(enc) - {f.name for f in fields(E.EncoderConfig)}
        if bad:
            raise RunConfigError(f"unknown encoder keys: {sorted(bad)}")
        for section, allowed in (("transfer", TRANSFER_KEYS), ("eval", EVAL_KEYS)):
            bad = set(doc.get(section, {})) - allowed
            if bad:
                raise RunConfigError(f"unknown {section} keys: {sorted(bad)}")
        syn = dict(doc.get("synth", {}))
        bad = set(syn) - {f.name for f in fields(SynthConfig)}
        if bad:
            raise RunConfigError(f"unknown synth keys: {sorted(bad)}")
        try:
            training = TrainSettings.from_dict(doc.get("training", {}))
        except (E.ConfigError, TypeError) as exc:
            raise RunConfigError(str(exc)) from None
        seed = doc.get("seed")
        if seed is not None and not isinstance(seed, int):
            raise RunConfigError(f"seed must be an integer, got {seed!r}")
        return cls(seed, enc, training, dict(doc.get("transfer", {})),
                   dict(doc.get("eval", {})), syn)

    def require_seed(self, override=None):
        seed = self.seed if override is None else override
        if seed is None:
            raise RunConfigError("a seed is required (config 'seed' or --seed)")
        return int(seed)

    def synth_config(self, seed):
        return SynthConfig.from_dict({**self.synth, "seed": self.synth.get("seed", seed)})

    def transfer_params(self, kappa):
        t = self.transfer
        if {"theta", "k", "rho"} <= set(t):
            return TransferParams(float(t["theta"]), int(t["k"]), int(t["rho"]))
        if set(t) & {"theta", "k", "rho"}:
            raise RunConfigError("transfer needs all of theta, k and rho, or none")
        return None

    def grid(self):
        g = self.transfer.get("grid")
        return DEFAULT_GRID if g is None else [TransferParams.from_dict(p) for p in g]


def load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise RunConfigError(f"{path}: not JSON ({exc})") from None
    return RunConfig.from_dict(doc)


def encoder_config_for(dataset: Dataset, vocab, overrides, seed) -> E.EncoderConfig:
    """Encoder sizes implied by the data, with config overrides on top."""
    derived = {
        "input_feature_dim": dataset.feature_dim,
        "vocab_size": len(vocab),
        "max_visual_len": max(inst.frames.shape[0] for inst in dataset.instances),
        "max_word_len": max(len(vocab.encode(lab)) for lab in dataset.labels),
        "num_seen_classes": len(dataset.labels),
        "seed": seed,
    }
    return E.EncoderConfig.from_dict({**derived, **overrides})


def train_encoder(dataset: Dataset, run: RunConfig, seed):
    vocab = E.build_vocabulary(dataset.labels)
    config = encoder_config_for(dataset, vocab, run.encoder, seed)
    params = E.init_params(config)
    params, history = train(params, config, dataset, vocab, run.training, seed=seed)
    return params, config, vocab, history


# ---- representation and prototype files ----

def dump_json(doc, path):
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise RunConfigError(f"{path}: {what} is not JSON ({exc})") from None


def reps_doc(dataset: Dataset, X):
    return {"dim": int(X.shape[1]), "labels": list(dataset.labels),
            "entries": [{"id": inst.id, "class_id": int(inst.class_id), "vector": x.tolist()}
                        for inst, x in zip(dataset.instances, X)]}


@dataclass
class Representations:
    labels: list
    ids: list
    class_ids: np.ndarray
    vectors: np.ndarray


def parse_reps(doc) -> Representations:
    try:
        entries = doc["entries"]
        X = np.array([e["vector"] for e in entries], dtype=np.float64).reshape(len(entries), -1)
        out = Representations(list(doc["labels"]), [str(e["id"]) for e in entries],
                              np.array([int(e["class_id"]) for e in entries], dtype=int), X)
    except (KeyError, TypeError, ValueError) as exc:
        raise RunConfigError(f"malformed representation file: {exc}") from None
    if not entries or X.shape[1] != doc["dim"]:
        raise RunConfigError("representation file is empty or has the wrong dim")
    return out


def prototypes_doc(reps: Representations):
    means, counts = class_means(reps.vectors, reps.class_ids, len(reps.labels))
    return {"dim": int(means.shape[1]),
            "entries": [{"class_id": c, "label": reps.labels[c], "vector": means[c].tolist(),
                         "count": int(counts[c])} for c in range(len(reps.labels))]}


def parse_prototypes(doc):
    """(labels, (n, D) vectors) from a prototype or transfer file."""
    try:
        entries = sorted(doc["entries"], key=lambda e: e["class_id"])
        labels = [e["label"] for e in entries]
        P = np.array([e["vector"] for e in entries], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise RunConfigError(f"malformed prototype file: {exc}") from None
    if [e["class_id"] for e in entries] != list(range(len(entries))):
        raise RunConfigError("prototype class ids must be 0..n-1")
    return labels, P


def embeddings_doc(embs):
    return [{"class_id": e.class_id, "label": e.label_text, "vector": e.vector.tolist(),
             "covered_tokens": e.covered_tokens, "total_tokens": e.total_tokens} for e in embs]


def parse_embeddings(items):
    return [LabelEmbedding(int(e["class_id"]), e["label"], np.asarray(e["vector"], float),
                           int(e["covered_tokens"]), int(e["total_tokens"])) for e in items]


def transfer_doc(seen_labels, seen_protos, seen_emb, unseen_emb, params, cv: CVResult = None):
    M = relatedness_matrix(unseen_emb, seen_emb)
    adj, comp = transfer(M, seen_protos, params)
    doc = {
        "dim": int(seen_protos.shape[1]),
        "entries": [{"class_id": j, "label": e.label_text, "vector": comp.vectors[j].tolist()}
                    for j, e in enumerate(unseen_emb)],
        "params": params.to_dict(),
        "rows": [{"unseen_id": j, "fallback": row.fallback,
                  "selected": [{"seen_id": i, "m": m, "weight": w}
                               for i, m, w in zip(row.selected, row.m, row.weights)]}
                 for j, row in enumerate(comp.rows)],
        "objective": adj.objective_value,
        # everything eval needs to rebuild composites for a subset of classes
        "seen_prototypes": [{"class_id": i, "label": lab, "vector": v.tolist()}
                            for i, (lab, v) in enumerate(zip(seen_labels, seen_protos))],
        "seen_embeddings": embeddings_doc(seen_emb),
        "unseen_embeddings": embeddings_doc(unseen_emb),
    }
    if cv is not None:
        doc["cv_table"] = cv.table
    return doc


def parse_transfer(doc):
    """(params, seen prototypes, seen embeddings, unseen embeddings)."""
    try:
        params = TransferParams.from_dict(doc["params"])
        _, protos = parse_prototypes({"entries": doc["seen_prototypes"]})
        return (params, protos, parse_embeddings(doc["seen_embeddings"]),
                parse_embeddings(doc["unseen_embeddings"]))
    except (KeyError, TypeError) as exc:
        raise RunConfigError(f"malformed transfer file: missing {exc}") from None


# ---- the whole pipeline in one call ----

@dataclass
class PipelineResult:
    history: list
    cv: CVResult
    report: EvalReport         # CV-selected parameters
    unconstrained: EvalReport  # theta -> 0, K = rho = kappa
    seen_prototypes: np.ndarray
    unseen_representations: np.ndarray


def run_pipeline(run: RunConfig, seed=None) -> PipelineResult:
    """Synthesise data, train, represent, select (theta, K, rho) by CV, evaluate."""
    seed = run.require_seed(seed)
    data = generate(run.synth_config(seed))
    params, config, vocab, history = train_encoder(data.train, run, seed)
    Xs = E.represent_many(params, config, [i.frames for i in data.train.instances])
    Xu = E.represent_many(params, config, [i.frames for i in data.test.instances])
    kappa = len(data.seen_labels)
    protos, _ = class_means(Xs, data.train.class_ids(), kappa)
    seen_emb = embed_labels(data.seen_vectors, data.seen_labels)
    unseen_emb = embed_labels(data.unseen_vectors, data.unseen_labels)
    cv = cv_select_params(seen_emb, protos, Xs, data.train.class_ids(), grid=run.grid(),
                          folds=run.transfer.get("folds", 5), seed=seed)
    ev = {"fraction": run.eval.get("fraction", 0.5), "num_splits": run.eval.get("splits", 10),
          "hubness_k": run.eval.get("hubness_k", 1), "seed": seed,
          "instance_ids": [i.id for i in data.test.instances]}
    y = data.test.class_ids()
    report = run_split_protocol(Xu, y, unseen_emb, protos, seen_emb, cv.params, **ev)
    free = run_split_protocol(Xu, y, unseen_emb, protos, seen_emb,
                              TransferParams.unconstrained(kappa), **ev)
    return PipelineResult(history, cv, report, free, protos, Xu)
