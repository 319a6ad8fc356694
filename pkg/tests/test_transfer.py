import itertools
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rest_zsar import transfer as TR
from rest_zsar.labels import LabelEmbedding
from rest_zsar.transfer import TransferParams

M0 = np.array([[0.9, 0.2, 0.5], [0.1, 0.8, 0.4]])


def oracle(M, eligible, rho):
    """Independent enumeration over every binary matrix, lexicographic order."""
    best, best_a = -np.inf, None
    for bits in itertools.product((0, 1), repeat=M.size):
        A = np.array(bits).reshape(M.shape)
        if np.any(A & ~eligible) or np.any(A.sum(axis=1) > rho):
            continue
        val = float((A * M).sum())
        if val > best + 1e-12:
            best, best_a = val, A
    return best_a, best


def random_instance(rng):
    g, k = int(rng.integers(1, 5)), int(rng.integers(1, 7))
    # a coarse grid of values produces plenty of ties
    M = rng.choice(np.linspace(-0.4, 1.0, 8), size=(g, k))
    params = TransferParams(float(rng.uniform(0, 1)), int(rng.integers(1, k + 1)),
                            int(rng.integers(1, k + 1)))
    return M, params


def test_eligibility_examples():
    e = TR.eligibility(M0, TransferParams(0.5, 2, 2))
    np.testing.assert_array_equal(e.eligible, [[1, 0, 1], [0, 1, 1]])
    e = TR.eligibility(M0, TransferParams(0.9, 2, 2))
    np.testing.assert_array_equal(e.eligible, [[1, 0, 1], [0, 1, 0]])


def test_single_unseen_lambda_all_true():
    e = TR.eligibility(np.array([[0.3, 0.9, 0.1]]), TransferParams(1.0, 3, 3))
    assert e.lam.all() and e.eligible.all()


def test_knn_ties_to_smaller_column():
    np.testing.assert_array_equal(TR.knn_mask([[0.5, 0.5, 0.5]], 2), [[1, 1, 0]])


def test_bruteforce_examples():
    elig = TR.eligibility(M0, TransferParams(0.5, 2, 2))
    a = TR.solve_exact_bruteforce(M0, elig, 2)
    np.testing.assert_array_equal(a.a, [[1, 0, 1], [0, 1, 1]])
    assert a.objective_value == pytest.approx(2.6, abs=1e-12)
    a = TR.solve_exact_bruteforce(M0, elig, 1)
    np.testing.assert_array_equal(a.a, [[1, 0, 0], [0, 1, 0]])
    assert a.objective_value == pytest.approx(1.7, abs=1e-12)
    empty = TR.solve_exact_bruteforce(M0, np.zeros(M0.shape, bool), 2)
    assert empty.objective_value == 0 and not empty.a.any()


def test_bruteforce_scale_error():
    with pytest.raises(TR.ScaleError):
        TR.solve_exact_bruteforce(np.ones((5, 5)), np.ones((5, 5), bool), 2)


def test_solve_examples():
    M = np.array([[0.3, 0.7, 0.5]])
    assert np.flatnonzero(TR.solve(M, np.ones((1, 3), bool), 2).a[0]).tolist() == [1, 2]
    assert TR.solve(M, np.ones((1, 3), bool), 5).a.sum() == 3


def test_bruteforce_matches_independent_oracle():
    rng = np.random.default_rng(0)
    for _ in range(60):
        g, k = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        M = rng.choice([0.1, 0.3, 0.5, 0.9], size=(g, k))
        elig = rng.random((g, k)) < 0.7
        rho = int(rng.integers(1, k + 1))
        a, val = oracle(M, elig, rho)
        got = TR.solve_exact_bruteforce(M, elig, rho)
        np.testing.assert_array_equal(got.a, a)
        assert got.objective_value == pytest.approx(val, abs=1e-12)


def test_solve_equals_bruteforce_200():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    for _ in range(200):
        M, params = random_instance(rng)
        elig = TR.eligibility(M, params)
        fast = TR.solve(M, elig, params.rho)
        slow = TR.solve_exact_bruteforce(M, elig, params.rho)
        assert fast.objective_value == slow.objective_value
        np.testing.assert_array_equal(fast.a, slow.a)
        assert not np.any(fast.a & ~elig.eligible)
        assert np.all(fast.a.sum(axis=1) <= params.rho)
    assert time.perf_counter() - start < 60


def test_clap_weights():
    M = np.array([[0.42, 0.48, 0.50, 0.50]])
    comp = TR.compose_prototypes(np.ones((1, 4), int), M, np.eye(4))
    np.testing.assert_allclose(comp.rows[0].weights, [0.22105, 0.25263, 0.26316, 0.26316],
                               atol=1e-5)
    np.testing.assert_allclose(comp.vectors[0], np.array([0.42, 0.48, 0.5, 0.5]) / 1.9)


def test_compose_trivial_cases():
    phi = np.array([[1.0, 2.0], [3.0, -1.0], [0.0, 5.0]])
    one = TR.compose_prototypes([[0, 1, 0]], [[0.2, 0.6, 0.1]], phi)
    np.testing.assert_array_equal(one.vectors[0], phi[1])
    two = TR.compose_prototypes([[1, 0, 1]], [[0.4, 0.9, 0.4]], phi)
    np.testing.assert_allclose(two.vectors[0], (phi[0] + phi[2]) / 2)


def test_compose_fallback():
    comp = TR.compose_prototypes([[0, 0, 0]], [[0.2, 0.6, 0.6]], np.eye(3))
    assert comp.rows[0].fallback and comp.rows[0].selected == [1]
    np.testing.assert_array_equal(comp.vectors[0], [0, 1, 0])


def test_compose_degenerate_row():
    with pytest.raises(TR.CompositionError):
        TR.compose_prototypes([[1, 1]], [[0.0, 0.0]], np.eye(2))


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100))
def test_solver_properties(seed, scale):
    rng = np.random.default_rng(seed)
    M, params = random_instance(rng)
    elig = TR.eligibility(M, params)
    adj = TR.solve(M, elig, params.rho)
    assert np.all(adj.a[~elig.eligible] == 0)
    assert np.all(elig.eligible <= (elig.knn & elig.lam))
    # enlarging rho never lowers the objective
    bigger = TR.solve(M, elig, params.rho + 1)
    assert bigger.objective_value >= adj.objective_value
    phi = rng.normal(size=(M.shape[1], 5))
    comp = TR.compose_prototypes(adj, M, phi)
    for row in comp.rows:
        assert np.all(np.array(row.weights) >= 0)
        assert abs(sum(row.weights) - 1) < 1e-9
    scaled = TR.compose_prototypes(adj, M, scale * phi)
    np.testing.assert_allclose(scaled.vectors, scale * comp.vectors, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_unconstrained_keeps_positive_edges(seed):
    rng = np.random.default_rng(seed)
    M = rng.uniform(-1, 1, size=(3, 5))
    e = TR.eligibility(M, TransferParams.unconstrained(5))
    assert e.knn.all() and e.lam.all()
    np.testing.assert_array_equal(e.eligible, M > 0)


def test_params_validation():
    with pytest.raises(ValueError):
        TransferParams(1.5, 2, 2)
    with pytest.raises(ValueError):
        TransferParams(0.5, 0, 2)
    p = TransferParams(0.7, 3, 2)
    assert TransferParams.from_dict(p.to_dict()) == p


def test_class_means():
    means, counts = TR.class_means([[1.0, 0], [3.0, 0], [0, 2.0]], [0, 0, 1], 2)
    np.testing.assert_array_equal(means, [[2, 0], [0, 2]])
    assert counts.tolist() == [2, 1]
    with pytest.raises(ValueError):
        TR.class_means([[1.0]], [0], 2)


def cv_problem(seed=0, kappa=10):
    rng = np.random.default_rng(seed)
    emb = [LabelEmbedding(i, f"c{i}", rng.normal(size=6), 1, 1) for i in range(kappa)]
    protos = rng.normal(size=(kappa, 4))
    y = np.repeat(np.arange(kappa), 3)
    X = protos[y] + 0.1 * rng.normal(size=(len(y), 4))
    return emb, protos, X, y


def test_cv_one_point_grid():
    emb, protos, X, y = cv_problem()
    p = TransferParams(0.8, 3, 2)
    res = TR.cv_select_params(emb, protos, X, y, grid=[p])
    assert res.params == p and len(res.table) == 5


def test_cv_tie_break():
    emb, protos, X, y = cv_problem()
    # rho = 1 and K = 1 keep the same single best edge: identical accuracy
    grid = [TransferParams(0.0, 5, 1), TransferParams(0.0, 1, 1), TransferParams(0.0, 1, 3)]
    res = TR.cv_select_params(emb, protos, X, y, grid=grid)
    assert res.params == TransferParams(0.0, 1, 1)
    same = [TransferParams(t, 1, 1) for t in (0.0, 0.3)]
    assert TR.cv_select_params(emb, protos, X, y, grid=same).params.theta == 0.3


def test_cv_fold_errors():
    emb, protos, X, y = cv_problem(kappa=4)
    with pytest.raises(TR.FoldError):
        TR.cv_select_params(emb, protos, X, y)
    emb, protos, X, y = cv_problem(kappa=9)
    with pytest.raises(TR.FoldError):
        TR.cv_select_params(emb, protos, X, y)


def test_cv_selected_beats_no_pruning():
    from rest_zsar import synth
    from rest_zsar.labels import embed_labels
    sd = synth.generate(synth.SynthConfig(seed=0))
    X = np.array([inst.frames.mean(axis=0) for inst in sd.train.instances])
    y = sd.train.class_ids()
    protos, _ = TR.class_means(X, y, len(sd.seen_labels))
    emb = embed_labels(sd.seen_vectors, sd.seen_labels)
    chosen = TR.cv_select_params(emb, protos, X, y, seed=0)
    free = TR.cv_select_params(emb, protos, X, y, grid=[TransferParams.unconstrained(20)],
                               seed=0)
    assert TR.cv_mean_accuracy(chosen, chosen.params) >= TR.cv_mean_accuracy(free, free.params)
