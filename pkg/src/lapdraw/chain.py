"""Exact finite-state analysis of the uniform-policy Markov chain.

Everything here is dense linear algebra on ``|S| x |S|`` matrices and serves
as the ground truth the learned embeddings are measured against.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gridworld import N_ACTIONS, GridSpec


class NoStationary(RuntimeError):
    pass


class UnreachableState(ValueError):
    pass


class RankExceeded(ValueError):
    pass


def transition_matrix(spec: GridSpec) -> np.ndarray:
    """One-step transitions of the uniform random policy."""
    n = spec.n_states
    P = np.zeros((n, n))
    rows = np.repeat(np.arange(n), N_ACTIONS)
    np.add.at(P, (rows, spec.next_state.ravel()), 1.0 / N_ACTIONS)
    return P


def reset_chain(P: np.ndarray, delta: float, start: np.ndarray | None = None) -> np.ndarray:
    """Mix in a ``delta`` probability of jumping to the start distribution."""
    n = P.shape[0]
    p0 = np.full(n, 1.0 / n) if start is None else np.asarray(start, float) / np.sum(start)
    return (1.0 - delta) * P + delta * p0[None, :]


def stationary(P: np.ndarray, tol: float = 1e-13, max_iter: int = 1_000_000) -> np.ndarray:
    """Stationary distribution by power iteration on ``P.T``.

    Raises NoStationary if the L1 change does not drop below ``tol``
    within ``max_iter`` iterations.
    """
    n = P.shape[0]
    rho = np.full(n, 1.0 / n)
    PT = np.ascontiguousarray(P.T)
    for _ in range(max_iter):
        nxt = PT @ rho
        nxt /= nxt.sum()
        if np.abs(nxt - rho).sum() < tol:
            return nxt
        rho = nxt
    raise NoStationary(f"power iteration did not converge in {max_iter} iterations")


def discounted_matrix(P: np.ndarray, lam: float) -> np.ndarray:
    """Geometric mixture of multi-step transitions, ``(1-lam) P (I - lam P)^-1``."""
    if not 0.0 <= lam < 1.0:
        raise ValueError(f"lambda must lie in [0, 1), got {lam}")
    if lam == 0.0:
        return P.copy()
    n = P.shape[0]
    try:
        return np.linalg.solve(np.eye(n) - lam * P, (1.0 - lam) * P)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - cannot happen for lam < 1
        raise RuntimeError("discounted transition solve failed") from exc


def affinity_matrix(P_lambda: np.ndarray, rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, float)
    if np.any(rho <= 0):
        raise UnreachableState("stationary distribution has non-positive entries")
    half = 0.5 * P_lambda / rho[None, :]
    return half + half.T


def quadratic_form(Dm: np.ndarray, rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(M, W)`` with ``f.T @ M @ f`` equal to the Laplacian form <f, Lf>."""
    W = np.diag(rho)
    M = W - rho[:, None] * Dm * rho[None, :]
    M = 0.5 * (M + M.T)
    return M, W


# -- dense symmetric eigensolver ---------------------------------------------


def _round_robin(n: int):
    """Pairings for one cyclic sweep; each round pairs every index at most once."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p), max(p)) for p in pairs if max(p) < n]
        rounds.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(A: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations within a round act on disjoint index pairs, so a round is
    applied as one vectorized update. Stops when the Frobenius norm of the
    off-diagonal part falls below ``tol``. Returns unsorted eigenvalues and
    the matrix of eigenvectors (columns).
    """
    A = np.array(A, dtype=float, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    if n == 1:
        return A.diagonal().copy(), V
    rounds = _round_robin(n)

    def off(X):
        # direct sum over off-diagonal entries; subtracting the diagonal from the total cancels badly
        return np.sqrt(np.sum(X * X, where=~np.eye(n, dtype=bool)))

    for _ in range(max_sweeps):
        if off(A) < tol:
            break
        for P, Q in rounds:
            apq = A[P, Q]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            P, Q, apq = P[active], Q[active], apq[active]
            theta = (A[Q, Q] - A[P, P]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            colP, colQ = A[:, P].copy(), A[:, Q].copy()
            A[:, P] = colP * c - colQ * s
            A[:, Q] = colP * s + colQ * c
            rowP, rowQ = A[P, :].copy(), A[Q, :].copy()
            A[P, :] = c[:, None] * rowP - s[:, None] * rowQ
            A[Q, :] = s[:, None] * rowP + c[:, None] * rowQ
            vP, vQ = V[:, P].copy(), V[:, Q].copy()
            V[:, P] = vP * c - vQ * s
            V[:, Q] = vP * s + vQ * c
    else:
        if off(A) >= tol:
            raise RuntimeError(f"Jacobi did not converge in {max_sweeps} sweeps")
    return A.diagonal().copy(), V


def _fix_signs(F: np.ndarray) -> np.ndarray:
    F = F.copy()
    for k in range(F.shape[1]):
        col = F[:, k]
        mags = np.abs(col)
        # lowest index among entries tied (to rounding) for the largest magnitude
        j = int(np.flatnonzero(mags >= mags.max() * (1 - 1e-9))[0])
        if col[j] < 0:
            F[:, k] = -col
    return F


def _order(values: np.ndarray, F: np.ndarray, tie_tol: float = 1e-10) -> np.ndarray:
    order = list(np.argsort(values, kind="stable"))
    # exact-enough ties: fall back to lexicographic order of the vectors
    out, i = [], 0
    while i < len(order):
        j = i + 1
        while j < len(order) and values[order[j]] - values[order[i]] <= tie_tol:
            j += 1
        group = order[i:j]
        if len(group) > 1:
            group = sorted(group, key=lambda k: tuple(np.round(F[:, k], 12)))
        out.extend(group)
        i = j
    return np.array(out, dtype=np.int64)


@dataclass(frozen=True)
class EigenResult:
    values: np.ndarray
    functions: np.ndarray
    all_values: np.ndarray | None = None

    @property
    def d(self) -> int:
        return len(self.values)


def eig_smallest(M: np.ndarray, W: np.ndarray, d: int) -> EigenResult:
    """The ``d`` smallest generalized eigenpairs of ``(M, W)``, W-orthonormal."""
    n = M.shape[0]
    if d > n:
        raise RankExceeded(f"requested d={d} eigenpairs of a {n}-state chain")
    w = np.diag(W)
    r = 1.0 / np.sqrt(w)
    S = r[:, None] * M * r[None, :]
    S = 0.5 * (S + S.T)
    values, Y = jacobi_eigh(S)
    F = _fix_signs(r[:, None] * Y)
    idx = _order(values, F)
    values, F = values[idx], F[:, idx]
    return EigenResult(values[:d].copy(), F[:, :d].copy(), values.copy())


def optimal_value(result: EigenResult) -> float:
    return float(np.sum(result.values))


def exact_objective(Phi: np.ndarray, M: np.ndarray) -> float:
    """Graph drawing objective ``sum_k phi_k^T M phi_k``."""
    Phi = np.asarray(Phi, float)
    if Phi.ndim == 1:
        Phi = Phi[:, None]
    return float(np.einsum("uk,uv,vk->", Phi, M, Phi))


# -- the bundled model -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChainModel:
    P: np.ndarray
    rho: np.ndarray
    lam: float
    P_lambda: np.ndarray
    Dm: np.ndarray
    M: np.ndarray
    W: np.ndarray

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @classmethod
    def from_transitions(cls, P: np.ndarray, lam: float = 0.0) -> "ChainModel":
        rho = stationary(P)
        P_lam = discounted_matrix(P, lam)
        Dm = affinity_matrix(P_lam, rho)
        M, W = quadratic_form(Dm, rho)
        for a in (P, rho, P_lam, Dm, M, W):
            a.setflags(write=False)
        return cls(P, rho, float(lam), P_lam, Dm, M, W)

    @classmethod
    def build(cls, spec: GridSpec, lam: float = 0.0, reset_delta: float | None = None) -> "ChainModel":
        """Chain of the uniform policy on ``spec``.

        ``reset_delta`` mixes in uniform restarts, approximating episodic
        data collection with episodes of length ``1 / reset_delta``.
        """
        P = transition_matrix(spec)
        if reset_delta:
            P = reset_chain(P, reset_delta)
        return cls.from_transitions(P, lam)

    def eig(self, d: int) -> EigenResult:
        return eig_smallest(self.M, self.W, d)


def write_matrix_csv(path, A: np.ndarray, header: list[str] | None = None) -> None:
    """Row-major CSV with round-trip (17 significant digit) precision."""
    A = np.atleast_2d(np.asarray(A, float))
    with open(Path(path), "w", newline="") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in A:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_matrix_csv(path, skip_header: bool = False) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=int(skip_header), ndmin=2)
