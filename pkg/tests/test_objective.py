import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lapdraw import approx
from lapdraw.gridworld import encode_batch, parse_maze
from lapdraw.objective import (
    LapRepConfig, attractive_term, embed_table, repulsive_term, total_loss, train_repr,
)
from lapdraw.replay import collect

SMALL = parse_maze("...\n.#.\n...")  # 8 states


def repulsive_double_sum(Pu, Pw, c):
    """Mean over rows of sum_jk (u_j u_k - c d_jk)(w_j w_k - c d_jk)."""
    d = Pu.shape[1]
    I = np.eye(d)
    vals = [np.sum((np.outer(u, u) - c * I) * (np.outer(w, w) - c * I)) for u, w in zip(Pu, Pw)]
    return float(np.mean(vals))


def test_attractive_hand_value():
    assert attractive_term(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])) == 12.5


def test_repulsive_hand_values():
    # orthogonal unit vectors in d=2: 0 - 1 - 1 + 2
    assert repulsive_term(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])) == 0.0
    # zero embedding pays c^2 d
    assert repulsive_term(np.zeros((1, 3)), np.zeros((1, 3))) == 3.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.floats(0.01, 1.0), st.integers(0, 2 ** 31))
def test_repulsive_closed_form_matches_double_sum(d, B, c, seed):
    rng = np.random.default_rng(seed)
    Pu, Pw = rng.normal(size=(B, d)), rng.normal(size=(B, d))
    assert abs(repulsive_term(Pu, Pw, c) - repulsive_double_sum(Pu, Pw, c)) < 1e-12 * max(1.0, abs(repulsive_double_sum(Pu, Pw, c)))


def test_term_shape_mismatch():
    with pytest.raises(ValueError):
        attractive_term(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(ValueError):
        repulsive_term(np.zeros((2, 3)), np.zeros((3, 3)))


def _small_problem(seed=0):
    feats = encode_batch(SMALL, np.arange(SMALL.n_states), "position")
    params = approx.init([2, 12, 3], seed)  # 75 parameters
    rng = np.random.default_rng(seed + 100)
    for b in params.biases:
        b[...] = rng.normal(scale=0.3, size=b.shape)
    n = SMALL.n_states
    pos = rng.integers(0, n, 6), rng.integers(0, n, 6)
    neg = rng.integers(0, n, 6), rng.integers(0, n, 6)
    return params, feats, pos, neg


@pytest.mark.parametrize("beta,c", [(1.0, 1.0), (5.0, 0.05), (0.0, 1.0)])
def test_loss_gradient_matches_finite_differences(beta, c):
    params, feats, pos, neg = _small_problem()
    assert params.n_params() <= 200
    _, _, _, g = total_loss(params, feats, pos, neg, beta, c)
    flat = params.flat()
    h = 1e-5
    num = np.empty_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = total_loss(params, feats, pos, neg, beta, c)[0]
        flat[i] = keep - h
        fm = total_loss(params, feats, pos, neg, beta, c)[0]
        flat[i] = keep
        num[i] = (fp - fm) / (2 * h)
    rel = np.linalg.norm(g.flat() - num) / max(np.linalg.norm(num), 1e-12)
    assert rel < 1e-4


def test_total_loss_components():
    params, feats, pos, neg = _small_problem(1)
    tot, att, rep, _ = total_loss(params, feats, pos, neg, 2.0, 0.5)
    emb = approx.forward(params, feats)
    assert abs(att - attractive_term(emb[pos[0]], emb[pos[1]])) < 1e-14
    assert abs(rep - repulsive_term(emb[neg[0]], emb[neg[1]], 0.5)) < 1e-12
    assert abs(tot - (att + 2.0 * rep)) < 1e-12


def test_loss_invariant_under_output_rotation():
    params, feats, pos, neg = _small_problem(2)
    before = total_loss(params, feats, pos, neg, 1.0, 1.0)[0]
    Q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(3, 3)))
    params.weights[-1][...] = params.weights[-1] @ Q
    params.biases[-1][...] = params.biases[-1] @ Q
    assert abs(total_loss(params, feats, pos, neg, 1.0, 1.0)[0] - before) < 1e-10


def test_config_defaults_and_validation():
    assert LapRepConfig(d=50).beta == 2.5
    with pytest.raises(ValueError):
        LapRepConfig(d=0)
    with pytest.raises(ValueError):
        LapRepConfig(beta=-1)
    with pytest.raises(ValueError):
        LapRepConfig(lam=1.0)
    with pytest.raises(ValueError):
        LapRepConfig(delta_scale=0.0)
    spec = parse_maze("...")
    assert LapRepConfig(d=2).layer_sizes(spec, "index") == [3, 2]
    assert LapRepConfig(d=2).layer_sizes(spec, "position") == [2, 200, 200, 2]


def test_zero_steps_returns_init():
    buf = collect(SMALL, 5, 10, 0)
    params, log = train_repr(LapRepConfig(d=2, steps=0), buf, SMALL, "index")
    assert len(log) == 0
    assert np.array_equal(params.flat(), approx.init([8, 2], 0).flat())


def test_training_is_deterministic():
    buf = collect(SMALL, 20, 10, 0)
    cfg = LapRepConfig(d=3, steps=300, seed=4)
    p1, l1 = train_repr(cfg, buf, SMALL, "index", log_interval=100)
    p2, l2 = train_repr(cfg, buf, SMALL, "index", log_interval=100)
    assert np.array_equal(p1.flat(), p2.flat())
    assert l1.rows() == l2.rows()
    assert l1.step == [100, 200, 300]


def test_log_includes_final_step():
    buf = collect(SMALL, 20, 10, 0)
    _, log = train_repr(LapRepConfig(d=2, steps=250), buf, SMALL, "index", log_interval=100)
    assert log.step == [100, 200, 250]


def test_beta_zero_collapses_embedding():
    buf = collect(SMALL, 50, 10, 0)
    params, log = train_repr(LapRepConfig(d=2, beta=0.0, steps=3000, lr=1e-2), buf, SMALL, "index")
    emb = embed_table(params, SMALL, "index")
    assert log.attractive[-1] < 1e-4
    assert np.ptp(emb, axis=0).max() < 0.05


def test_training_approaches_smallest_eigenfunctions():
    # on a tiny maze the penalized solution nearly spans the smallest eigenfunctions
    from lapdraw.chain import ChainModel
    from lapdraw.evaluate import objective_gap
    buf = collect(SMALL, 400, 50, 1)
    params, _ = train_repr(LapRepConfig(d=3, steps=6000, batch=64, lr=3e-3), buf, SMALL, "index")
    ch = ChainModel.build(SMALL, 0.0)
    rep = objective_gap(embed_table(params, SMALL, "index"), ch, 3)
    untrained = objective_gap(embed_table(approx.init([8, 3], 0), SMALL, "index"), ch, 3)
    assert rep.gap < 0.1 * untrained.gap
