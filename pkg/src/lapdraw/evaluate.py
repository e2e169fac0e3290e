"""Scoring embeddings against the exact Laplacian eigendecomposition."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .approx import MlpParams
from .chain import ChainModel, EigenResult, exact_objective, optimal_value
from .gridworld import GridSpec, encode_batch
from .objective import embed_table
from .replay import ReplayBuffer

RANK_TOL = 1e-8


@dataclass(frozen=True)
class EvalReport:
    method: str
    d: int
    n_transitions: int
    projected_objective: float
    optimal: float
    gap: float
    effective_rank: int

    def as_dict(self) -> dict:
        return asdict(self)


def embed_all_states(params: MlpParams, spec: GridSpec, repr_kind) -> np.ndarray:
    return embed_table(params, spec, repr_kind)


def project_orthonormal(Phi: np.ndarray, rho: np.ndarray, tol: float = RANK_TOL):
    """W-orthonormal basis of the column span of ``Phi``.

    Uses the SVD of ``W^{1/2} Phi``; left singular vectors with singular
    value above ``tol`` times the largest are kept and mapped back through
    ``W^{-1/2}``. Returns ``(basis, effective_rank)``.
    """
    Phi = np.asarray(Phi, float)
    if Phi.ndim == 1:
        Phi = Phi[:, None]
    w = np.sqrt(np.asarray(rho, float))
    U, S, _ = np.linalg.svd(w[:, None] * Phi, full_matrices=False)
    if S.size == 0 or S[0] == 0.0:
        return np.zeros((Phi.shape[0], 0)), 0
    r = int(np.sum(S > tol * S[0]))
    return U[:, :r] / w[:, None], r


def missing_direction_charge(eig: EigenResult, n_missing: int) -> float:
    """Pessimistic cost of directions an embedding fails to span.

    Each missing direction is charged the mean of the ``n_missing`` largest
    Laplacian eigenvalues.
    """
    if n_missing <= 0:
        return 0.0
    top = np.sort(eig.all_values)[::-1][:n_missing]
    return float(n_missing * np.mean(top))


def objective_gap(Phi: np.ndarray, chain: ChainModel, d: int, method: str = "embedding",
                  n_transitions: int = 0, eig: EigenResult | None = None) -> EvalReport:
    eig = chain.eig(d) if eig is None else eig
    basis, r = project_orthonormal(Phi, chain.rho)
    r = min(r, d)
    basis = basis[:, :r]
    value = exact_objective(basis, chain.M) + missing_direction_charge(eig, d - r)
    opt = optimal_value(eig)
    return EvalReport(method, d, int(n_transitions), value, opt, value - opt, r)


def stacked_transitions(buffer: ReplayBuffer, repr_kind) -> np.ndarray:
    """Unique non-zero rows ``psi(s_{t+1}) - psi(s_t)`` of the buffer."""
    spec = buffer.spec
    s, s2 = buffer.transitions()
    pairs = np.unique(np.column_stack([s, s2]), axis=0)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    feats = encode_batch(spec, np.arange(spec.n_states), repr_kind)
    rows = feats[pairs[:, 1]] - feats[pairs[:, 0]]
    # position differences agree only up to rounding, so dedupe on a rounded key
    rows = np.unique(np.round(rows, 12), axis=0)
    return rows[np.any(rows != 0, axis=1)]


def eigenoptions_baseline(buffer: ReplayBuffer, spec: GridSpec, repr_kind, d: int,
                          order: str = "ascending") -> np.ndarray:
    """Embedding ``f_i(s) = psi(s)^T e_i`` from the stacked-transition SVD.

    ``e_i`` are right singular vectors of the stacked matrix, ordered by
    ascending (smooth first) or descending singular value. The result can
    have fewer than ``d`` columns when the feature space is smaller.
    """
    Tm = stacked_transitions(buffer, repr_kind)
    feats = encode_batch(spec, np.arange(spec.n_states), repr_kind)
    k = feats.shape[1]
    if Tm.shape[0] == 0:
        E = np.eye(k)
        sv = np.zeros(k)
    else:
        _, S, Vt = np.linalg.svd(Tm, full_matrices=True)
        sv = np.zeros(k)
        sv[:S.size] = S
        E = Vt.T
    idx = np.argsort(sv, kind="stable")
    if order == "descending":
        idx = idx[::-1]
    elif order != "ascending":
        raise ValueError(f"unknown order {order!r}")
    return feats @ E[:, idx[:d]]


def baseline_report(buffer: ReplayBuffer, chain: ChainModel, repr_kind, d: int,
                    eig: EigenResult | None = None) -> EvalReport:
    """Better of the two singular-vector orderings, scored by objective gap."""
    eig = chain.eig(d) if eig is None else eig
    reports = []
    for order in ("ascending", "descending"):
        Phi = eigenoptions_baseline(buffer, buffer.spec, repr_kind, d, order)
        reports.append(objective_gap(Phi, chain, d, "eigenoptions", buffer.total_transitions, eig))
    return min(reports, key=lambda r: r.gap)
