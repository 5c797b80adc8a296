"""Model-selection criteria and evaluation metrics."""
from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq, linear_sum_assignment
from scipy.stats import gamma as gamma_dist

from .emissions import log_density_table
from .exceptions import ZigHmmError
from .markov import stationary_distribution
from .params import MixtureHmmParams, parameter_count

# information criteria --------------------------------------------------------


def n_observations(data) -> int:
    from .inference import pack

    return pack(data).n_observations


def bic(fit, data=None) -> float:
    """loglik - (nu_K / 2) log(N_obs); larger is better."""
    n_obs = n_observations(data) if data is not None else fit.n_observations
    return float(fit.loglik - 0.5 * parameter_count(fit.K, fit.M) * math.log(n_obs))


def classification_entropy(tau) -> float:
    """sum_i sum_k zhat_ik log tau_ik with zhat the MAP partition (<= 0)."""
    tau = np.asarray(tau, dtype=float)
    top = tau[np.arange(tau.shape[0]), np.argmax(tau, axis=1)]
    return float(np.log(top).sum())


def icl(fit, data=None) -> float:
    return bic(fit, data) + classification_entropy(fit.tau)


@dataclass
class SelectionRow:
    K: int
    loglik: float
    nu_K: int
    bic: float
    icl: float
    entropy: float


def selection_row(fit, data=None) -> SelectionRow:
    b = bic(fit, data)
    ent = classification_entropy(fit.tau)
    return SelectionRow(fit.K, float(fit.loglik), parameter_count(fit.K, fit.M), b, b + ent, ent)


def select_components(data, K_range, M: int, config=None):
    """Fit every K in ``K_range``; returns (rows, {"bic": K, "icl": K}, fits)."""
    from .em import EmConfig, fit as em_fit
    from .inference import pack

    config = config or EmConfig()
    packed = pack(data)
    rows, fits = [], {}
    for K in K_range:
        res = em_fit(packed, int(K), M, config)
        fits[int(K)] = res
        rows.append(selection_row(res))
    best = {
        "bic": max(rows, key=lambda r: (r.bic, -r.K)).K,
        "icl": max(rows, key=lambda r: (r.icl, -r.K)).K,
    }
    return rows, best, fits


SELECTION_COLUMNS = ("K", "loglik", "nu_K", "bic", "icl", "entropy")


def write_selection_csv(rows, target) -> None:
    fh = open(target, "w", newline="", encoding="utf-8") if isinstance(target, (str, Path)) else target
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SELECTION_COLUMNS)
        for r in rows:
            w.writerow((r.K, repr(r.loglik), r.nu_K, repr(r.bic), repr(r.icl), repr(r.entropy)))
    finally:
        if isinstance(target, (str, Path)):
            fh.close()


# clustering agreement --------------------------------------------------------------


def _comb2(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1.0) / 2.0


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Hubert-Arabie adjusted Rand index from the contingency table."""
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape:
        raise ZigHmmError(f"label arrays differ in length ({a.size} vs {b.size})")
    if a.size == 0:
        raise ZigHmmError("label arrays are empty")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1.0)
    index = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    total = _comb2(a.size)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial (single cluster or all singletons)
        return 1.0
    return float((index - expected) / (max_index - expected))


# parameter error ------------------------------------------------------------------

MSE_BLOCKS = ("A", "epsilon", "shape", "rate", "delta")
EXHAUSTIVE_LIMIT = 100_000


def _sq_errors(est: MixtureHmmParams, true: MixtureHmmParams) -> dict:
    return {
        "A": (est.A - true.A) ** 2,
        "epsilon": (est.epsilon - true.epsilon) ** 2,
        "shape": (est.shape - true.shape) ** 2,
        "rate": (est.rate - true.rate) ** 2,
        "delta": (est.delta - true.delta) ** 2,
    }


def _greedy_alignment(est: MixtureHmmParams, true: MixtureHmmParams):
    em_est = np.column_stack([est.epsilon, est.shape, est.rate])
    em_true = np.column_stack([true.epsilon, true.shape, true.rate])
    cost = ((em_true[:, None, :] - em_est[None, :, :]) ** 2).sum(axis=2)
    _, states = linear_sum_assignment(cost)
    relabelled = est.permute(states=states)
    cost = ((true.A[:, None] - relabelled.A[None]) ** 2).sum(axis=(2, 3))
    cost += (true.delta[:, None] - relabelled.delta[None]) ** 2
    _, comps = linear_sum_assignment(cost)
    return comps, states


def align_params(est: MixtureHmmParams, true: MixtureHmmParams) -> MixtureHmmParams:
    """Relabel ``est`` (components and states jointly) to minimise the total
    squared error against ``true``."""
    if est.K != true.K or est.M != true.M:
        raise ZigHmmError(f"dimension mismatch: ({est.K}, {est.M}) vs ({true.K}, {true.M})")
    K, M = est.K, est.M
    if math.factorial(K) * math.factorial(M) > EXHAUSTIVE_LIMIT:
        warnings.warn("too many label permutations; using greedy assignment", RuntimeWarning, stacklevel=2)
        comps, states = _greedy_alignment(est, true)
        return est.permute(comps, states)
    best, best_cost = None, np.inf
    for states in itertools.permutations(range(M)):
        by_state = est.permute(states=states)
        for comps in itertools.permutations(range(K)):
            cand = by_state.permute(components=comps)
            cost = sum(v.sum() for v in _sq_errors(cand, true).values())
            if cost < best_cost:
                best, best_cost = cand, cost
    return best


def aligned_parameter_mse(est: MixtureHmmParams, true: MixtureHmmParams) -> dict:
    """Per-block mean squared error after optimal joint relabelling.

    Each block is averaged over its entries (A over K*M*M, delta over K, the
    emission blocks over M).
    """
    aligned = align_params(est, true)
    return {k: float(v.mean()) for k, v in _sq_errors(aligned, true).items()}


# marginal cutoffs -----------------------------------------------------------------


@dataclass
class Cutoffs:
    boundaries: list  # y values where the most probable state changes
    intervals: list  # (lower, upper, state) over (0, inf)
    zero_state: int  # most probable state at y == 0
    state_weights: np.ndarray

    @property
    def n_crossings(self) -> int:
        return len(self.boundaries)


def marginal_state_weights(params: MixtureHmmParams) -> np.ndarray:
    """P(X = h) = sum_k delta_k pi_kh."""
    return params.delta @ params.pi


def marginal_cutoffs(params: MixtureHmmParams, state_weights="marginal", grid_size: int = 20_000, xtol: float = 1e-6):
    """Values of y where ``argmax_h w_h g(y; h)`` changes.

    ``state_weights`` is ``"marginal"`` (the class-averaged initial laws),
    ``"uniform"``, or an explicit length-M array.  Crossings are located on a
    log-spaced grid and refined by bracketing root search.
    """
    M = params.M
    if isinstance(state_weights, str):
        if state_weights == "marginal":
            w = marginal_state_weights(params)
        elif state_weights == "uniform":
            w = np.full(M, 1.0 / M)
        else:
            raise ZigHmmError("state_weights must be 'marginal', 'uniform' or an array")
    else:
        w = np.asarray(state_weights, dtype=float)
        if w.shape != (M,):
            raise ZigHmmError(f"state_weights must have length {M}")
    with np.errstate(divide="ignore"):
        logw = np.log(w)
        zero_state = int(np.argmax(logw + np.log(params.epsilon)))
    if M == 1:
        return Cutoffs([], [(0.0, math.inf, 0)], zero_state, w)

    scale = 1.0 / params.rate
    lo = float(min(gamma_dist.ppf(1e-12, params.shape, scale=scale)))
    hi = float(max(gamma_dist.isf(1e-12, params.shape, scale=scale)))
    lo = max(lo, 1e-300)
    grid = np.geomspace(lo, hi, grid_size)

    def score(y):
        return logw + log_density_table(np.atleast_1d(y), params.epsilon, params.shape, params.rate)

    best = np.argmax(score(grid), axis=1)
    change = np.flatnonzero(best[1:] != best[:-1])
    boundaries, intervals = [], []
    left, left_state = 0.0, int(best[0])
    for j in change:
        s_left, s_right = int(best[j]), int(best[j + 1])

        def diff(y, a=s_left, b=s_right):
            v = score(y)[0]
            return v[a] - v[b]

        root = brentq(diff, grid[j], grid[j + 1], xtol=xtol, rtol=4 * np.finfo(float).eps)
        boundaries.append(float(root))
        intervals.append((left, float(root), left_state))
        left, left_state = float(root), s_right
    intervals.append((left, math.inf, left_state))
    if len(boundaries) > M - 1:
        warnings.warn(f"{len(boundaries)} crossings found for {M} states", RuntimeWarning, stacklevel=2)
    return Cutoffs(boundaries, intervals, zero_state, w)


def mean_time_per_state(params: MixtureHmmParams) -> np.ndarray:
    """K x M long-run share of time spent in each state (stationary laws)."""
    return np.vstack([stationary_distribution(a) for a in params.A])
