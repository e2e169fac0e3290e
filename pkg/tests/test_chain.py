import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lapdraw.chain import (
    ChainModel, NoStationary, RankExceeded, UnreachableState, affinity_matrix,
    discounted_matrix, eig_smallest, exact_objective, jacobi_eigh, optimal_value,
    quadratic_form, read_matrix_csv, reset_chain, stationary, transition_matrix,
    write_matrix_csv,
)
from lapdraw.gridworld import BUILTIN_MAZES, load_maze, parse_maze

CORRIDOR = parse_maze("..")


def double_sum_objective(F, Dm, rho):
    """Pairwise form: 1/2 sum_uv sum_k (f_k(u) - f_k(v))^2 D(u,v) rho(u) rho(v)."""
    diff = F[:, None, :] - F[None, :, :]
    return 0.5 * np.einsum("uvk,uv,u,v->", diff ** 2, Dm, rho, rho)


def enumerated_expectation(F, P_lam, rho):
    """E_{u~rho, v~P_lam(.|u)} [1/2 sum_k (f_k(u) - f_k(v))^2] by full enumeration."""
    total = 0.0
    for u in range(len(rho)):
        sq = 0.5 * np.sum((F[u] - F) ** 2, axis=1)
        total += rho[u] * np.dot(P_lam[u], sq)
    return total


@pytest.fixture(scope="module")
def fourroom():
    return load_maze("fourroom")


def test_corridor_transitions():
    np.testing.assert_allclose(transition_matrix(CORRIDOR), [[0.75, 0.25], [0.25, 0.75]])


def test_single_cell_transitions():
    np.testing.assert_array_equal(transition_matrix(parse_maze("#.#")), [[1.0]])


@pytest.mark.parametrize("name", BUILTIN_MAZES)
def test_rows_sum_to_one(name):
    P = transition_matrix(load_maze(name))
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_stationary_corridor_and_line():
    np.testing.assert_allclose(stationary(transition_matrix(CORRIDOR)), [0.5, 0.5])
    P = transition_matrix(parse_maze("..."))
    np.testing.assert_allclose(np.diag(P), [0.75, 0.5, 0.75])
    # null space of (P^T - I) by SVD
    _, _, Vt = np.linalg.svd(P.T - np.eye(3))
    exact = Vt[-1] / Vt[-1].sum()
    np.testing.assert_allclose(stationary(P), exact, atol=1e-10)


def test_stationary_nonuniform_chain():
    P = np.array([[0.5, 0.5, 0.0], [0.1, 0.6, 0.3], [0.2, 0.2, 0.6]])
    rho = stationary(P)
    _, _, Vt = np.linalg.svd(P.T - np.eye(3))
    np.testing.assert_allclose(rho, Vt[-1] / Vt[-1].sum(), atol=1e-10)


def test_stationary_fourroom_positive(fourroom):
    rho = stationary(transition_matrix(fourroom))
    assert abs(rho.sum() - 1) < 1e-12 and rho.min() > 0
    P = transition_matrix(fourroom)
    np.testing.assert_allclose(rho @ P, rho, atol=1e-10)


def test_stationary_periodic_chain_fails():
    # bipartite chain: the uniform start oscillates forever
    P = np.array([[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [0.0, 1.0, 0.0]])
    with pytest.raises(NoStationary):
        stationary(P, max_iter=10_000)


def test_reset_chain_stationary_and_stochastic(fourroom):
    Pt = reset_chain(transition_matrix(fourroom), 1 / 50)
    np.testing.assert_allclose(Pt.sum(axis=1), 1.0, atol=1e-12)
    rho = stationary(Pt)
    np.testing.assert_allclose(rho @ Pt, rho, atol=1e-10)


def test_discounted_lambda_zero_is_identity_map():
    P = transition_matrix(CORRIDOR)
    np.testing.assert_array_equal(discounted_matrix(P, 0.0), P)


def test_discounted_matches_truncated_series():
    P = transition_matrix(CORRIDOR)
    lam = 0.5
    series = np.zeros_like(P)
    Pk = np.eye(2)
    for tau in range(1, 201):
        Pk = Pk @ P
        series += (lam ** (tau - 1) - lam ** tau) * Pk
    np.testing.assert_allclose(discounted_matrix(P, lam), series, atol=1e-10)


def test_discounted_series_fourroom(fourroom):
    P = transition_matrix(fourroom)
    lam = 0.9
    series, Pk = np.zeros_like(P), np.eye(len(P))
    K = 400
    for tau in range(1, K + 1):
        Pk = Pk @ P
        series += (lam ** (tau - 1) - lam ** tau) * Pk
    Pl = discounted_matrix(P, lam)
    # tail mass of the geometric weights bounds the truncation error
    assert np.abs(Pl - series).max() <= lam ** K + 1e-12
    np.testing.assert_allclose(Pl.sum(axis=1), 1.0, atol=1e-12)


def test_discounted_rejects_bad_lambda():
    with pytest.raises(ValueError):
        discounted_matrix(np.eye(2), 1.0)


def test_corridor_affinity_and_form():
    P = transition_matrix(CORRIDOR)
    rho = np.array([0.5, 0.5])
    Dm = affinity_matrix(P, rho)
    np.testing.assert_allclose(Dm, [[1.5, 0.5], [0.5, 1.5]])
    M, W = quadratic_form(Dm, rho)
    np.testing.assert_allclose(M, [[1 / 8, -1 / 8], [-1 / 8, 1 / 8]])
    np.testing.assert_allclose(W, np.diag(rho))


def test_affinity_rejects_zero_mass():
    with pytest.raises(UnreachableState):
        affinity_matrix(np.eye(2), np.array([1.0, 0.0]))


@pytest.mark.parametrize("lam", [0.0, 0.5, 0.9])
def test_affinity_symmetric_and_density(fourroom, lam):
    ch = ChainModel.build(fourroom, lam)
    assert np.array_equal(ch.Dm, ch.Dm.T)
    np.testing.assert_allclose(ch.Dm @ ch.rho, 1.0, atol=1e-10)
    assert ch.Dm.min() >= 0


def test_density_under_reset_chain(fourroom):
    ch = ChainModel.build(fourroom, 0.9, reset_delta=1 / 50)
    np.testing.assert_allclose(ch.Dm @ ch.rho, 1.0, atol=1e-10)


def test_form_matches_transition_expression(fourroom):
    ch = ChainModel.build(fourroom, 0.5)
    W = np.diag(ch.rho)
    np.testing.assert_allclose(ch.M, W - 0.5 * (W @ ch.P_lambda + ch.P_lambda.T @ W), atol=1e-15)


def test_constant_is_in_kernel(fourroom):
    ch = ChainModel.build(fourroom, 0.0)
    assert abs(exact_objective(np.ones(ch.n_states), ch.M)) < 1e-14


@pytest.mark.parametrize("name", BUILTIN_MAZES)
@pytest.mark.parametrize("lam", [0.0, 0.9])
def test_pairwise_and_expectation_forms_agree(name, lam):
    ch = ChainModel.build(load_maze(name), lam)
    rng = np.random.default_rng(7)
    for _ in range(3):
        F = rng.normal(size=(ch.n_states, 4))
        q = exact_objective(F, ch.M)
        assert abs(double_sum_objective(F, ch.Dm, ch.rho) - q) < 1e-10
        assert abs(enumerated_expectation(F, ch.P_lambda, ch.rho) - q) < 1e-10


def test_jacobi_against_lapack():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(37, 37))
    A = A + A.T
    vals, V = jacobi_eigh(A)
    np.testing.assert_allclose(np.sort(vals), np.linalg.eigvalsh(A), atol=1e-10)
    np.testing.assert_allclose(V.T @ V, np.eye(37), atol=1e-12)
    np.testing.assert_allclose(A @ V, V * vals, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(-5, 5)))
def test_jacobi_property(X):
    A = X + X.T
    vals, V = jacobi_eigh(A)
    np.testing.assert_allclose(np.sort(vals), np.linalg.eigvalsh(A), atol=1e-9)
    np.testing.assert_allclose(V @ np.diag(vals) @ V.T, A, atol=1e-9)


def test_corridor_eigenpairs():
    ch = ChainModel.build(CORRIDOR, 0.0)
    res = ch.eig(2)
    np.testing.assert_allclose(res.values, [0.0, 0.5], atol=1e-12)
    assert abs(optimal_value(res) - 0.5) < 1e-12
    f1 = res.functions[:, 1]
    assert abs(f1[0] + f1[1]) < 1e-12


@pytest.mark.parametrize("name", BUILTIN_MAZES)
def test_eigen_invariants(name):
    ch = ChainModel.build(load_maze(name), 0.0)
    res = ch.eig(20)
    F = res.functions
    assert np.all(np.diff(res.values) >= -1e-12)
    np.testing.assert_allclose(F.T @ ch.W @ F, np.eye(20), atol=1e-8)
    np.testing.assert_allclose(ch.M @ F, (ch.W @ F) * res.values, atol=1e-8)
    assert abs(res.values[0]) < 1e-8
    np.testing.assert_allclose(F[:, 0], F[0, 0], atol=1e-8)
    assert np.all(res.all_values > -1e-10) and np.all(res.all_values < 2 + 1e-10)
    # independent generalized solver
    ref = scipy.linalg.eigh(ch.M, ch.W, eigvals_only=True)
    np.testing.assert_allclose(np.sort(res.all_values), ref, atol=1e-9)


def test_sign_convention(fourroom):
    F = ChainModel.build(fourroom, 0.0).eig(10).functions
    for k in range(F.shape[1]):
        j = np.argmax(np.abs(F[:, k]))
        assert F[j, k] > 0


def test_rank_exceeded():
    ch = ChainModel.build(CORRIDOR, 0.0)
    with pytest.raises(RankExceeded):
        ch.eig(3)


def test_optimal_value_monotone_and_bound(fourroom):
    ch = ChainModel.build(fourroom, 0.0)
    vals = [optimal_value(ch.eig(d)) for d in (1, 5, 10, 20)]
    assert abs(vals[0]) < 1e-8
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    res = ch.eig(20)
    assert abs(exact_objective(res.functions, ch.M) - optimal_value(res)) < 1e-8
    assert exact_objective(np.zeros((ch.n_states, 20)), ch.M) == 0.0
    rng = np.random.default_rng(1)
    w = np.sqrt(ch.rho)
    for _ in range(20):
        Q, _ = np.linalg.qr(w[:, None] * rng.normal(size=(ch.n_states, 20)))
        assert exact_objective(Q / w[:, None], ch.M) >= optimal_value(res) - 1e-10


def test_csv_round_trip(tmp_path, fourroom):
    ch = ChainModel.build(fourroom, 0.9)
    path = tmp_path / "dm.csv"
    write_matrix_csv(path, ch.Dm)
    np.testing.assert_array_equal(read_matrix_csv(path), ch.Dm)
