"""Finite Markov chain utilities: validation, stationary law, spectral gap,
mixing-time bound and path sampling."""
from __future__ import annotations

from collections import deque
from typing import NamedTuple

import numba
import numpy as np

from .exceptions import ReducibleChainError, ZigHmmError

ROW_SUM_TOL = 1e-12


def check_transition_matrix(A, tol: float = ROW_SUM_TOL) -> np.ndarray:
    """Return ``A`` as a float array after checking it is row-stochastic."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ZigHmmError(f"transition matrix must be square and nonempty, got shape {A.shape}")
    if not np.all(np.isfinite(A)) or np.any(A < 0) or np.any(A > 1):
        raise ZigHmmError("transition matrix entries must lie in [0, 1]")
    err = np.abs(A.sum(axis=1) - 1.0).max()
    if err > tol:
        raise ZigHmmError(f"transition matrix rows must sum to 1 (max deviation {err:.3g})")
    return A


def check_probability_vector(p, tol: float = ROW_SUM_TOL, name: str = "probability vector") -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ZigHmmError(f"{name} must be a nonempty 1-d array")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ZigHmmError(f"{name} entries must be nonnegative")
    if abs(p.sum() - 1.0) > tol:
        raise ZigHmmError(f"{name} must sum to 1 (sum is {p.sum()!r})")
    return p


def _reachable(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        h = queue.popleft()
        for nxt in np.flatnonzero(adj[h]):
            if not seen[nxt]:
                seen[nxt] = True
                queue.append(nxt)
    return seen


def unreachable_states(A) -> list[int]:
    """States outside the strongly connected class of state 0 (empty iff irreducible)."""
    A = np.asarray(A, dtype=float)
    adj = A > 0
    ok = _reachable(adj, 0) & _reachable(adj.T, 0)
    return [int(h) for h in np.flatnonzero(~ok)]


def is_irreducible(A) -> bool:
    return not unreachable_states(A)


def stationary_distribution(A) -> np.ndarray:
    """Unique ``pi`` with ``pi^T A = pi^T`` and ``sum(pi) = 1``.

    Solved as the stacked least-squares system ``[(A^T - I); 1^T] pi = [0; 1]``.
    Raises :class:`ReducibleChainError` naming the states that are not in the
    communicating class of state 0.
    """
    A = check_transition_matrix(A, tol=1e-9)
    bad = unreachable_states(A)
    if bad:
        raise ReducibleChainError(f"transition matrix is reducible; states {bad} do not communicate with state 0", bad)
    M = A.shape[0]
    system = np.vstack([A.T - np.eye(M), np.ones((1, M))])
    rhs = np.zeros(M + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


class Spectrum(NamedTuple):
    modulus: float  # second-largest absolute eigenvalue
    signed: float  # second-largest eigenvalue (real part)
    positive_part: float  # max(0, signed)


def second_eigenvalue(A) -> Spectrum:
    """Second eigenvalue of a stochastic matrix (modulus, signed value, positive part)."""
    A = check_transition_matrix(A, tol=1e-9)
    M = A.shape[0]
    if M == 1:
        return Spectrum(0.0, 0.0, 0.0)
    if M == 2:
        lam = float(A[0, 0] + A[1, 1] - 1.0)
        return Spectrum(abs(lam), lam, max(0.0, lam))
    eig = np.linalg.eigvals(A)
    # drop the Perron root (the eigenvalue closest to 1)
    rest = np.delete(eig, int(np.argmin(np.abs(eig - 1.0))))
    modulus = float(np.abs(rest).max())
    signed = float(rest.real.max())
    return Spectrum(modulus, signed, max(0.0, signed))


def second_eigenvalue_modulus(A) -> float:
    return second_eigenvalue(A).modulus


def mixing_time_bound(A, eta: float) -> float:
    """Upper bound on the steps needed for every row of ``A^D`` to be within
    total variation ``eta`` of the stationary law:

        (1 / (1 - nu*)) * log(1 / (eta * min_h pi_h))

    with ``nu*`` the second-largest eigenvalue modulus.  Returns 0 when the
    tolerance is vacuous.
    """
    if not eta > 0:
        raise ZigHmmError("eta must be positive")
    nu = second_eigenvalue_modulus(A)
    if nu >= 1.0 - 1e-12:
        raise ZigHmmError(f"chain does not mix (second eigenvalue modulus {nu:.6g} >= 1)")
    pi = stationary_distribution(A)
    bound = np.log(1.0 / (eta * pi.min())) / (1.0 - nu)
    return float(max(bound, 0.0))


def tv_distance_to_stationary(A, D: int) -> float:
    """``max_h || A^D[h, :] - pi ||_TV`` by explicit matrix power."""
    A = check_transition_matrix(A, tol=1e-9)
    pi = stationary_distribution(A)
    power = np.linalg.matrix_power(A, int(D))
    return float(0.5 * np.abs(power - pi[None, :]).sum(axis=1).max())


@numba.njit(cache=True, nogil=True)
def _paths_from_uniforms(cum_pi, cum_A, classes, u):
    n, length = u.shape
    M = cum_pi.shape[1]
    out = np.empty((n, length), dtype=np.int64)
    for i in range(n):
        k = classes[i]
        h = 0
        while h < M - 1 and u[i, 0] >= cum_pi[k, h]:
            h += 1
        out[i, 0] = h
        for t in range(1, length):
            prev = h
            h = 0
            while h < M - 1 and u[i, t] >= cum_A[k, prev, h]:
                h += 1
            out[i, t] = h
    return out


def sample_paths(pis, As, classes, T: int, rng: np.random.Generator) -> np.ndarray:
    """Sample one chain of length ``T + 1`` per entry of ``classes``.

    ``pis`` is ``(K, M)`` and ``As`` is ``(K, M, M)``; returns an int array of
    shape ``(len(classes), T + 1)``.
    """
    pis = np.atleast_2d(np.asarray(pis, dtype=float))
    As = np.asarray(As, dtype=float)
    if As.ndim == 2:
        As = As[None]
    classes = np.asarray(classes, dtype=np.int64)
    u = rng.random((classes.shape[0], int(T) + 1))
    return _paths_from_uniforms(np.cumsum(pis, axis=1), np.cumsum(As, axis=2), classes, u)


def sample_chain(pi, A, T: int, rng: np.random.Generator) -> np.ndarray:
    """A single state path ``x_0..x_T`` with ``x_0 ~ pi`` and rows of ``A`` as kernels."""
    A = check_transition_matrix(A, tol=1e-9)
    pi = check_probability_vector(pi, tol=1e-9)
    return sample_paths(pi[None], A[None], np.zeros(1, dtype=np.int64), T, rng)[0]
