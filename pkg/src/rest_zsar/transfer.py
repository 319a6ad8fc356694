"""Semantic-relatedness transfer: pick seen classes for every unseen class and
build unseen visual prototypes as relatedness-weighted means of seen ones.

The selection problem is

    maximise   sum_{j,i} m[j,i] * a[j,i]          over binary A (gamma x kappa)
    subject to a[j,i] <= knn[j,i]                (seen i among j's K nearest labels)
               a[j,i] <= lambda[j,i]             (no other unseen class is relatively closer)
               sum_i a[j,i] <= rho

Both edge constraints are fixed per edge once M is known and the budget is
per row, so the integer program splits into independent rows; :func:`solve`
exploits that and :func:`solve_exact_bruteforce` enumerates for checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .labels import relatedness_matrix

RATIO_FLOOR = 1e-12
BRUTEFORCE_MAX_EDGES = 24
_CHUNK = 1 << 16


class ScaleError(ValueError):
    pass


class CompositionError(ValueError):
    pass


class FoldError(ValueError):
    pass


@dataclass(frozen=True)
class TransferParams:
    theta: float
    k: int
    rho: int

    def __post_init__(self):
        if not 0 <= self.theta <= 1:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.k < 1 or self.rho < 1:
            raise ValueError("k and rho must be >= 1")

    def to_dict(self):
        return {"theta": self.theta, "k": self.k, "rho": self.rho}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["theta"]), int(d["k"]), int(d["rho"]))

    @classmethod
    def unconstrained(cls, kappa):
        """theta -> 0, K = rho = kappa: only the m > 0 filter remains."""
        return cls(0.0, kappa, kappa)


DEFAULT_GRID = [TransferParams(t, k, r) for t in (0.5, 0.7, 0.8, 0.9)
                for k in (3, 5, 10) for r in (2, 3, 5)]


@dataclass
class EligibilityMask:
    eligible: np.ndarray
    knn: np.ndarray
    lam: np.ndarray


def knn_mask(M, k):
    """True where seen i is among row j's ``k`` smallest distances 1 - m."""
    M = np.asarray(M, dtype=np.float64)
    gamma, kappa = M.shape
    k = min(k, kappa)
    out = np.zeros(M.shape, dtype=bool)
    for j in range(gamma):
        order = np.argsort(1.0 - M[j], kind="stable")  # ties -> smaller column
        out[j, order[:k]] = True
    return out


def relative_distance_mask(M, theta):
    """False where some other unseen class k has (1-m[k,i])/(1-m[j,i]) <= theta."""
    M = np.asarray(M, dtype=np.float64)
    gamma = M.shape[0]
    if gamma < 2:
        return np.ones(M.shape, dtype=bool)
    dist = 1.0 - M
    denom = np.maximum(dist, RATIO_FLOOR)
    lam = np.ones(M.shape, dtype=bool)
    for j in range(gamma):
        others = np.delete(dist, j, axis=0)
        lam[j] = ~(others.min(axis=0) / denom[j] <= theta)
    return lam


def eligibility(M, params: TransferParams) -> EligibilityMask:
    M = np.asarray(M, dtype=np.float64)
    knn = knn_mask(M, params.k)
    lam = relative_distance_mask(M, params.theta)
    return EligibilityMask(eligible=knn & lam & (M > 0), knn=knn, lam=lam)


@dataclass
class AdjacencyMatrix:
    a: np.ndarray
    objective_value: float


def objective(M, A):
    """sum(M * A), accumulated in row-major order over the selected cells."""
    M = np.asarray(M, dtype=np.float64)
    return float(sum(M[j, i] for j, i in zip(*np.nonzero(A))))


def _as_mask(elig):
    return elig.eligible if isinstance(elig, EligibilityMask) else np.asarray(elig, bool)


def solve_exact_bruteforce(M, elig, rho) -> AdjacencyMatrix:
    """Exhaustive search over every A supported on the eligible edges.

    Among optimal matrices the lexicographically smallest flattened A wins.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.size > BRUTEFORCE_MAX_EDGES:
        raise ScaleError(f"{M.shape[0]}x{M.shape[1]} exceeds the enumeration bound "
                         f"of {BRUTEFORCE_MAX_EDGES} cells")
    mask = _as_mask(elig)
    edges = np.flatnonzero(mask.reshape(-1))  # row-major
    n = len(edges)
    A = np.zeros(M.shape, dtype=np.int8)
    if n == 0:
        return AdjacencyMatrix(A, 0.0)
    rows = edges // M.shape[1]
    values = M.reshape(-1)[edges]
    shifts = np.arange(n)

    def chunks():
        # every subset of eligible edges as a bit vector; bit e is edge e
        for lo in range(0, 1 << n, _CHUNK):
            codes = np.arange(lo, min(lo + _CHUNK, 1 << n), dtype=np.int64)
            bits = ((codes[:, None] >> shifts[None, :]) & 1).astype(np.int8)
            counts = np.zeros((len(codes), M.shape[0]), dtype=np.int64)
            for e in range(n):
                counts[:, rows[e]] += bits[:, e]
            score = bits @ values
            score[~(counts <= rho).all(axis=1)] = -np.inf
            yield bits, score

    best = max(score.max() for _, score in chunks())
    tol = 1e-12 * max(1.0, abs(best))
    winner = None
    for bits, score in chunks():
        for c in np.flatnonzero(score >= best - tol):
            cand = tuple(bits[c])
            # lexicographic order on flattened A == order on the eligible bits
            if winner is None or cand < winner:
                winner = cand
    A.reshape(-1)[edges] = winner
    return AdjacencyMatrix(A, objective(M, A))


def solve(M, elig, rho) -> AdjacencyMatrix:
    """Exact optimum via the per-row decomposition.

    Each row keeps its ``rho`` largest eligible relatedness values. Eligible
    values are all positive, so filling the budget never hurts. Ties go to the
    later column, matching the lexicographic tie-break of the oracle.
    """
    M = np.asarray(M, dtype=np.float64)
    mask = _as_mask(elig)
    A = np.zeros(M.shape, dtype=np.int8)
    for j in range(M.shape[0]):
        cols = np.flatnonzero(mask[j])
        if len(cols) == 0:
            continue
        order = sorted(cols, key=lambda i: (-M[j, i], -i))
        A[j, order[:rho]] = 1
    return AdjacencyMatrix(A, objective(M, A))


@dataclass
class CompositeRow:
    selected: list   # seen ids
    m: list
    weights: list
    fallback: bool


@dataclass
class CompositePrototypes:
    vectors: np.ndarray             # (gamma, D)
    rows: list = field(default_factory=list)


def compose_prototypes(A, M, seen_prototypes) -> CompositePrototypes:
    """Unseen prototype j = sum_i a[j,i] m[j,i] phi_i / sum_i a[j,i] m[j,i].

    A row with no selected edge falls back to the seen class with the largest m.
    """
    A = np.asarray(A.a if isinstance(A, AdjacencyMatrix) else A)
    M = np.asarray(M, dtype=np.float64)
    phi = np.asarray(seen_prototypes, dtype=np.float64)
    if A.shape != M.shape or phi.shape[0] != M.shape[1]:
        raise ValueError(f"shape mismatch: A {A.shape}, M {M.shape}, prototypes {phi.shape}")
    vectors = np.zeros((M.shape[0], phi.shape[1]))
    rows = []
    for j in range(M.shape[0]):
        sel = np.flatnonzero(A[j])
        if len(sel) == 0:
            best = int(np.argmax(M[j]))  # first maximum -> smaller id
            vectors[j] = phi[best]
            rows.append(CompositeRow([best], [float(M[j, best])], [1.0], True))
            continue
        m = M[j, sel]
        total = m.sum()
        if total <= 1e-12:
            raise CompositionError(f"row {j}: selected relatedness sums to {total}")
        w = m / total
        vectors[j] = w @ phi[sel]
        rows.append(CompositeRow([int(i) for i in sel], [float(v) for v in m],
                                 [float(v) for v in w], False))
    return CompositePrototypes(vectors=vectors, rows=rows)


def transfer(M, seen_prototypes, params: TransferParams):
    """eligibility -> solve -> compose. Returns (adjacency, composites)."""
    elig = eligibility(M, params)
    adj = solve(M, elig, params.rho)
    return adj, compose_prototypes(adj, M, seen_prototypes)


def class_means(representations, class_ids, num_classes):
    """Per-class mean representation and counts; every class needs an instance."""
    X = np.asarray(representations, dtype=np.float64)
    y = np.asarray(class_ids)
    counts = np.bincount(y, minlength=num_classes)
    if np.any(counts == 0):
        raise ValueError(f"classes without instances: {np.flatnonzero(counts == 0).tolist()}")
    means = np.zeros((num_classes, X.shape[1]))
    np.add.at(means, y, X)
    return means / counts[:, None], counts


@dataclass
class CVResult:
    params: TransferParams
    table: list   # dicts: theta, k, rho, fold, top1


def _fold_accuracy(M, prototypes, X, y, params):
    from .evaluation import rank_classes
    _, comp = transfer(M, prototypes, params)
    pred = rank_classes(X, comp.vectors)[:, 0]
    return float(np.mean(pred == y))


def cv_select_params(seen_embeddings, seen_prototypes, representations, class_ids,
                     grid=None, folds=5, seed=0) -> CVResult:
    """Choose (theta, K, rho) by treating folds of seen classes as pseudo-unseen.

    For each fold, the fold's classes get composite prototypes built from the
    other seen classes, and the fold classes' instances are classified among
    those composites. The grid point with the best mean top-1 wins; ties go to
    smaller K, then smaller rho, then larger theta.
    """
    grid = list(grid or DEFAULT_GRID)
    if not grid:
        raise ValueError("empty parameter grid")
    kappa = len(seen_embeddings)
    if kappa < folds:
        raise FoldError(f"{kappa} seen classes cannot fill {folds} folds")
    rng = np.random.default_rng(seed)
    parts = np.array_split(rng.permutation(kappa), folds)
    if min(len(p) for p in parts) < 2:
        raise FoldError(f"{kappa} seen classes give a fold with fewer than 2 classes")
    protos = np.asarray(seen_prototypes, dtype=np.float64)
    X = np.asarray(representations, dtype=np.float64)
    y = np.asarray(class_ids)

    fold_data = []
    for part in parts:
        held = np.sort(part)
        rest = np.setdiff1d(np.arange(kappa), held)
        M = relatedness_matrix([seen_embeddings[i] for i in held],
                               [seen_embeddings[i] for i in rest])
        pick = np.isin(y, held)
        relabel = {c: n for n, c in enumerate(held)}
        fold_data.append((M, protos[rest], X[pick], np.array([relabel[c] for c in y[pick]])))

    table, scores = [], []
    for params in grid:
        accs = []
        for f, (M, rest_protos, Xf, yf) in enumerate(fold_data):
            p = TransferParams(params.theta, min(params.k, M.shape[1]),
                               min(params.rho, M.shape[1]))
            acc = _fold_accuracy(M, rest_protos, Xf, yf, p)
            accs.append(acc)
            table.append({**params.to_dict(), "fold": f, "top1": acc})
        scores.append(float(np.mean(accs)))
    best = max(range(len(grid)),
               key=lambda n: (scores[n], -grid[n].k, -grid[n].rho, grid[n].theta))
    return CVResult(params=grid[best], table=table)


def cv_mean_accuracy(result: CVResult, params: TransferParams):
    rows = [r for r in result.table
            if (r["theta"], r["k"], r["rho"]) == (params.theta, params.k, params.rho)]
    return float(np.mean([r["top1"] for r in rows])) if rows else math.nan
