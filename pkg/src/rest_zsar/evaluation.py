"""Zero-shot classification, split protocols, the seen-label NN baseline and
hubness diagnostics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .labels import cosine_matrix, relatedness_matrix
from .transfer import TransferParams, transfer


class ProtocolError(ValueError):
    pass


def cosine_distance(X, P):
    """(N, gamma) matrix of 1 - cos between rows of X and prototypes P."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    if X.shape[1] != P.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {P.shape[1]}")
    try:
        return 1.0 - cosine_matrix(X, P)
    except ValueError:
        raise ValueError("zero-norm representation or prototype") from None


def rank_classes(X, P):
    """Class ids sorted by ascending cosine distance, ties to the smaller id."""
    d = cosine_distance(X, P)
    return np.argsort(d, axis=1, kind="stable")


def classify(x, prototypes):
    """Ranked class list for one representation."""
    return [int(c) for c in rank_classes(x, prototypes)[0]]


def classify_via_seen_label(x, seen_prototypes, seen_embeddings, unseen_embeddings):
    """Nearest seen prototype, then the unseen label nearest to that seen label."""
    seen_vecs = np.array([e.vector for e in seen_embeddings])
    unseen_vecs = np.array([e.vector for e in unseen_embeddings])
    seen = rank_classes(np.atleast_2d(x), seen_prototypes)[:, 0]
    label_rank = rank_classes(seen_vecs, unseen_vecs)[:, 0]
    out = label_rank[seen]
    return int(out[0]) if np.ndim(x) == 1 else out


def skewness(psi):
    """Population third standardised moment; 0 when every count is equal."""
    psi = np.asarray(psi, dtype=np.float64)
    dev = psi - psi.mean()
    var = np.mean(dev ** 2)
    # constant input up to rounding of the mean
    if np.ptp(psi) == 0 or var <= (1e-12 * max(1.0, np.abs(psi).max())) ** 2:
        return 0.0
    return float(np.mean(dev ** 3) / var ** 1.5)


def hubness(X, prototypes, k=1):
    """psi[j] = how many samples have prototype j among their top-k; and its skewness."""
    if k < 1:
        raise ValueError("k must be >= 1")
    P = np.asarray(prototypes)
    ranks = rank_classes(X, P)[:, :k]
    psi = np.bincount(ranks.reshape(-1), minlength=P.shape[0])
    return psi, skewness(psi)


def topk_accuracy(ranks, y, k):
    k = min(k, ranks.shape[1])
    return float(np.mean((ranks[:, :k] == np.asarray(y)[:, None]).any(axis=1)))


@dataclass
class SplitResult:
    split: int
    classes: list
    top1: float
    top5: float
    baseline_top1: float
    skewness: float
    num_instances: int


@dataclass
class Assignment:
    instance_id: str
    true_class: int
    predicted_class: int
    distance: float


@dataclass
class EvalReport:
    params: dict
    fraction: float
    splits: list                     # SplitResult
    mean_top1: float
    std_top1: float
    mean_top5: float
    std_top5: float
    mean_baseline_top1: float
    per_class_accuracy: dict         # unseen id (str) -> accuracy over all splits
    confusion: list                  # gamma x gamma counts summed over splits
    hubness: dict                    # {k, psi, skewness} on the full unseen set
    assignments: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["splits"] = [SplitResult(**s) for s in d["splits"]]
        d["assignments"] = [Assignment(**a) for a in d.get("assignments", [])]
        return cls(**d)


def _evaluate(X, y, unseen_embeddings, seen_embeddings, seen_prototypes, params, classes):
    M = relatedness_matrix([unseen_embeddings[c] for c in classes], seen_embeddings)
    _, comp = transfer(M, seen_prototypes, params)
    local = {c: n for n, c in enumerate(classes)}
    pick = np.isin(y, classes)
    Xs = X[pick]
    ys = np.array([local[c] for c in y[pick]])
    ranks = rank_classes(Xs, comp.vectors)
    base = classify_via_seen_label(Xs, seen_prototypes, seen_embeddings,
                                   [unseen_embeddings[c] for c in classes])
    return comp, pick, ys, ranks, np.atleast_1d(base)


def run_split_protocol(representations, class_ids, unseen_embeddings, seen_prototypes,
                       seen_embeddings, params: TransferParams, fraction=0.5,
                       num_splits=10, seed=0, instance_ids=None, hubness_k=1) -> EvalReport:
    """Sample ``ceil(fraction * gamma)`` unseen classes per split, rebuild the
    composite prototypes for just those classes, and score the split's instances.

    ``fraction=1.0`` with one split is the all-classes protocol.
    """
    X = np.asarray(representations, dtype=np.float64)
    y = np.asarray(class_ids)
    gamma = len(unseen_embeddings)
    if gamma < 2:
        raise ProtocolError("need at least 2 unseen classes")
    if num_splits < 1:
        raise ProtocolError("need at least one split")
    size = math.ceil(fraction * gamma)
    if size < 2:
        raise ProtocolError(f"fraction {fraction} of {gamma} classes leaves {size} < 2 per split")
    seen_prototypes = np.asarray(seen_prototypes, dtype=np.float64)
    rng = np.random.default_rng(seed)

    splits = []
    confusion = np.zeros((gamma, gamma), dtype=np.int64)
    for s in range(num_splits):
        classes = np.sort(rng.choice(gamma, size=size, replace=False))
        comp, pick, ys, ranks, base = _evaluate(X, y, unseen_embeddings, seen_embeddings,
                                               seen_prototypes, params, classes)
        if len(ys) == 0:
            raise ProtocolError(f"split {s} has no test instances")
        np.add.at(confusion, (classes[ys], classes[ranks[:, 0]]), 1)
        splits.append(SplitResult(
            split=s, classes=[int(c) for c in classes],
            top1=topk_accuracy(ranks, ys, 1), top5=topk_accuracy(ranks, ys, 5),
            baseline_top1=float(np.mean(base == ys)),
            skewness=hubness(X[pick], comp.vectors, hubness_k)[1],
            num_instances=int(len(ys))))

    everything = np.arange(gamma)
    comp, pick, ys, ranks, _ = _evaluate(X, y, unseen_embeddings, seen_embeddings,
                                        seen_prototypes, params, everything)
    psi, skew = hubness(X[pick], comp.vectors, hubness_k)
    dist = cosine_distance(X[pick], comp.vectors)
    ids = instance_ids if instance_ids is not None else [str(i) for i in range(len(X))]
    picked_ids = [ids[i] for i in np.flatnonzero(pick)]
    assignments = [Assignment(str(i), int(t), int(p), float(dist[n, p]))
                   for n, (i, t, p) in enumerate(zip(picked_ids, ys, ranks[:, 0]))]

    rowsum = confusion.sum(axis=1)
    per_class = {str(c): float(confusion[c, c] / rowsum[c])
                 for c in range(gamma) if rowsum[c]}
    top1 = np.array([s.top1 for s in splits])
    top5 = np.array([s.top5 for s in splits])
    return EvalReport(
        params=params.to_dict(), fraction=fraction, splits=splits,
        mean_top1=float(top1.mean()), std_top1=float(top1.std()),
        mean_top5=float(top5.mean()), std_top5=float(top5.std()),
        mean_baseline_top1=float(np.mean([s.baseline_top1 for s in splits])),
        per_class_accuracy=per_class, confusion=confusion.tolist(),
        hubness={"k": hubness_k, "psi": psi.tolist(), "skewness": skew},
        assignments=assignments)


def assignments_path(path):
    path = Path(path)
    return path.with_name(path.stem + "_assignments.csv")


def emit_report(report: EvalReport, path, fmt="json"):
    """Write the report as JSON, or as split/metric CSV plus an assignment CSV."""
    if not report.splits:
        raise ProtocolError("report has no splits")
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), indent=1))
        return [path]
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["split", "metric", "value", "std"])
        for s in report.splits:
            w.writerow([s.split, "top1", repr(s.top1), ""])
            w.writerow([s.split, "top5", repr(s.top5), ""])
        w.writerow(["summary", "top1", repr(report.mean_top1), repr(report.std_top1)])
        w.writerow(["summary", "top5", repr(report.mean_top5), repr(report.std_top5)])
    apath = assignments_path(path)
    with open(apath, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["instance_id", "true_class", "predicted_class", "distance"])
        for a in report.assignments:
            w.writerow([a.instance_id, a.true_class, a.predicted_class, repr(a.distance)])
    return [path, apath]


def load_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))
