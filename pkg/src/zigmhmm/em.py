"""EM estimation with random restarts."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from .emissions import EPSILON_FLOOR, SHAPE_RATE_BOUNDS, gamma_mle_from_stats
from .exceptions import (
    DegenerateFitError,
    EstimationError,
    ReducibleChainError,
    ZeroLikelihoodError,
    ZigHmmError,
)
from .inference import (
    PackedData,
    _fb_stats_kernel,
    _raise_zero,
    _scaled_or_raise,
    class_posteriors,
    component_logliks,
    emission_table,
    map_labels,
    pack,
)
from .markov import stationary_distribution
from .params import MixtureHmmParams

logger = logging.getLogger(__name__)

TRANSITION_FLOOR = 1e-10
INIT_METHODS = ("kmeans", "random")
WARMUP_STEPS = 10
_RESTART_ERRORS = (EstimationError, ZeroLikelihoodError, ReducibleChainError, FloatingPointError)


@dataclass
class EmConfig:
    max_iter: int = 500
    rel_tol: float = 1e-8
    restarts: int = 50
    seed: int = 0
    stationary_init: bool = True
    min_state_occupancy: float = 1e-6
    n_jobs: int = 1
    init: str = "kmeans"

    def __post_init__(self):
        if int(self.max_iter) < 1:
            raise ZigHmmError("max_iter must be >= 1")
        if not float(self.rel_tol) > 0:
            raise ZigHmmError("rel_tol must be positive")
        if int(self.restarts) < 1:
            raise ZigHmmError("restarts must be >= 1")
        if int(self.n_jobs) < 1:
            raise ZigHmmError("n_jobs must be >= 1")
        if self.init not in INIT_METHODS:
            raise ZigHmmError(f"init must be one of {INIT_METHODS}")


@dataclass
class SufficientStats:
    """Expected counts from one E-step.

    n_k (K,), n_kh (K, M), n_kh0 (K, M), n_khl (K, M, M); per state:
    zero_weight = sum eta [y = 0], occupancy = sum eta, and the gamma
    statistics pos_weight / pos_sum / pos_log_sum over y > 0.
    """

    n_k: np.ndarray
    n_kh: np.ndarray
    n_kh0: np.ndarray
    n_khl: np.ndarray
    zero_weight: np.ndarray
    occupancy: np.ndarray
    pos_weight: np.ndarray
    pos_sum: np.ndarray
    pos_log_sum: np.ndarray
    tau: np.ndarray
    loglik: float

    @property
    def n_subjects(self) -> int:
        return self.tau.shape[0]


def e_step(data, params: MixtureHmmParams, tau=None) -> SufficientStats:
    """Expected sufficient statistics under ``params``.

    ``tau`` optionally fixes the class posteriors (for instance a hard
    partition); the log-likelihood is still that of ``params``.
    """
    data = pack(data)
    K, M, n = params.K, params.M, data.n_subjects
    b, shift = _scaled_or_raise(emission_table(data, params), data)
    logy = data.logy
    comp_ll = np.empty((n, K))
    per_k = []
    for k in range(K):
        seg_ll, occ, occ0, zocc, s1, s2, trans, bad = _fb_stats_kernel(
            b, shift, data.seg_start, data.seg_len, data.seg_subject, n, params.pi[k], params.A[k], data.y, logy
        )
        if bad >= 0:
            _raise_zero(bad, data)
        comp_ll[:, k] = np.bincount(data.seg_subject, weights=seg_ll, minlength=n)
        per_k.append((occ, occ0, zocc, s1, s2, trans))
    post, per_subject = class_posteriors(comp_ll, params.delta)
    if tau is None:
        tau = post
    else:
        tau = np.asarray(tau, dtype=float)
        if tau.shape != (n, K):
            raise ZigHmmError(f"tau must have shape {(n, K)}")

    n_kh = np.empty((K, M))
    n_kh0 = np.empty((K, M))
    n_khl = np.empty((K, M, M))
    zero_weight = np.zeros(M)
    pos_sum = np.zeros(M)
    pos_log_sum = np.zeros(M)
    for k, (occ, occ0, zocc, s1, s2, trans) in enumerate(per_k):
        w = tau[:, k]
        n_kh[k] = w @ occ
        n_kh0[k] = w @ occ0
        n_khl[k] = np.tensordot(w, trans, axes=1)
        zero_weight += w @ zocc
        pos_sum += w @ s1
        pos_log_sum += w @ s2
    occupancy = n_kh.sum(axis=0)
    return SufficientStats(
        n_k=tau.sum(axis=0),
        n_kh=n_kh,
        n_kh0=n_kh0,
        n_khl=n_khl,
        zero_weight=zero_weight,
        occupancy=occupancy,
        pos_weight=occupancy - zero_weight,
        pos_sum=pos_sum,
        pos_log_sum=pos_log_sum,
        tau=tau,
        loglik=float(per_subject.sum()),
    )


def _transition_objective(A, counts, start_counts):
    with np.errstate(divide="ignore", invalid="ignore"):
        pi = stationary_distribution(A)
        trans = np.where(counts > 0, counts * np.log(A), 0.0).sum()
        start = np.where(start_counts > 0, start_counts * np.log(pi), 0.0).sum()
    return float(trans + start)


def _stationary_transition_update(A_free, A_old, counts, start_counts, max_halvings=30):
    """Move from ``A_old`` towards ``A_free`` without decreasing the
    transition-plus-initial-state part of the EM objective when the initial
    law is tied to the stationary law of ``A``."""
    q_old = _transition_objective(A_old, counts, start_counts)
    step = 1.0
    for _ in range(max_halvings):
        cand = A_old + step * (A_free - A_old)
        try:
            q = _transition_objective(cand, counts, start_counts)
        except ReducibleChainError:
            q = -np.inf
        if q >= q_old:
            return cand
        step *= 0.5
    return A_old


def m_step(stats: SufficientStats, config: EmConfig | None = None, current: MixtureHmmParams | None = None):
    """Maximise the expected complete-data log-likelihood.

    With ``config.stationary_init`` the initial laws are the stationary laws
    of the updated transition matrices; ``current`` then enables a
    backtracking guard so that the update never lowers the objective.
    """
    config = config or EmConfig()
    floor = config.min_state_occupancy
    n = stats.n_subjects
    K, M = stats.n_kh.shape
    if np.any(stats.n_k < floor):
        raise DegenerateFitError("a component has (almost) no subjects", {"n_k": stats.n_k.tolist()})
    if np.any(stats.n_kh < floor):
        raise DegenerateFitError("a state has (almost) no occupancy in some component", {"n_kh": stats.n_kh.tolist()})
    delta = stats.n_k / n

    counts = stats.n_khl
    rows = counts.sum(axis=2, keepdims=True)
    if np.any(rows < floor):
        raise DegenerateFitError("a state has no outgoing transitions", {"n_khl_rows": rows[..., 0].tolist()})
    A = np.maximum(counts / rows, TRANSITION_FLOOR)
    A /= A.sum(axis=2, keepdims=True)
    pi = np.empty((K, M))
    for k in range(K):
        if config.stationary_init:
            if current is not None:
                A[k] = _stationary_transition_update(A[k], current.A[k], counts[k], stats.n_kh0[k])
            pi[k] = stationary_distribution(A[k])
        else:
            start = stats.n_kh0[k]
            pi[k] = start / start.sum()

    if np.any(stats.occupancy < floor) or np.any(stats.pos_weight < floor):
        raise DegenerateFitError("a state has no positive observations", {"pos_weight": stats.pos_weight.tolist()})
    epsilon = np.clip(stats.zero_weight / stats.occupancy, EPSILON_FLOOR, 1.0 - EPSILON_FLOOR)
    shape = np.empty(M)
    rate = np.empty(M)
    lo, hi = SHAPE_RATE_BOUNDS
    for h in range(M):
        init = None if current is None else (current.shape[h], current.rate[h])
        a, b = gamma_mle_from_stats(stats.pos_weight[h], stats.pos_sum[h], stats.pos_log_sum[h], init=init)
        shape[h] = min(max(a, lo), hi)
        rate[h] = min(max(b, lo), hi)
    return MixtureHmmParams(delta, pi, A, epsilon, shape, rate)


FEATURE_SETS = ("transitions", "occupancy", "both")


def _binned_features(data: PackedData, edges: np.ndarray, M: int, which: str) -> np.ndarray:
    """Per-subject summaries of the quantile-bin labels: occupancy shares (M)
    and/or row-normalised bin transition frequencies (M * M)."""
    labels = np.searchsorted(edges, data.y, side="left")
    labels[data.zero_mask] = 0
    subject = np.repeat(data.seg_subject, data.seg_len)
    occ = np.zeros((data.n_subjects, M))
    np.add.at(occ, (subject, labels), 1.0)
    occ /= occ.sum(axis=1, keepdims=True)
    last = np.zeros(data.y.size, dtype=bool)
    last[data.seg_start + data.seg_len - 1] = True
    src = np.flatnonzero(~last)
    counts = np.ones((data.n_subjects, M * M))
    np.add.at(counts, (subject[src], labels[src] * M + labels[src + 1]), 1.0)
    rows = counts.reshape(-1, M, M)
    trans = (rows / rows.sum(axis=2, keepdims=True)).reshape(-1, M * M)
    if which == "occupancy":
        return occ
    if which == "transitions":
        return trans
    return np.hstack([occ, trans])


def initialize(data, K: int, M: int, rng: np.random.Generator, method: str = "kmeans") -> MixtureHmmParams:
    """Random starting point.

    Emission laws come from M quantile bins of the pooled positive values
    (moment-matched gamma per bin); zeros are credited to the lowest bin and
    the zero shares are shrunk halfway towards the pooled zero fraction.
    Transition matrices are random and diagonally dominant; the initial laws
    are their stationary laws and the proportions are uniform.

    With ``method="kmeans"`` subjects are first clustered (seeded k-means) on
    summaries of their quantile-bin labels: occupancy shares, transition
    frequencies or both, the choice being drawn per restart.  The random start
    then goes through a few EM steps with the class posteriors fixed to that
    partition, so each component starts fitted to its own cluster.  Long
    sequences make class posteriors nearly hard, and a purely random start
    tends to hand every subject to a few components.
    """
    data = pack(data)
    if data.n_subjects < K:
        raise ZigHmmError(f"need at least K={K} subjects, got {data.n_subjects}")
    y = data.y
    pos = np.sort(y[y > 0])
    if pos.size < 2 * M:
        raise ZigHmmError(f"need at least {2 * M} positive observations, got {pos.size}")
    n_zero = int((y == 0).sum())
    pooled_zero = n_zero / y.size
    bins = np.array_split(pos, M)
    epsilon = np.empty(M)
    shape = np.empty(M)
    rate = np.empty(M)
    for h, chunk in enumerate(bins):
        m, v = chunk.mean(), chunk.var()
        if v > 0:
            shape[h], rate[h] = m * m / v, m / v
        else:
            shape[h], rate[h] = 1.0, 1.0 / m
        zeros_here = n_zero if h == 0 else 0
        share = zeros_here / (zeros_here + chunk.size)
        epsilon[h] = 0.5 * share + 0.5 * pooled_zero
    lo, hi = SHAPE_RATE_BOUNDS
    shape = np.clip(shape, lo, hi)
    rate = np.clip(rate, lo, hi)
    epsilon = np.clip(epsilon, EPSILON_FLOOR, 1.0 - EPSILON_FLOOR)

    A = np.empty((K, M, M))
    for k in range(K):
        for h in range(M):
            if M == 1:
                A[k, h] = 1.0
                continue
            diag = rng.uniform(0.6, 0.95)
            off = rng.dirichlet(np.ones(M - 1)) * (1.0 - diag)
            A[k, h] = np.insert(off, h, diag)
    if method not in INIT_METHODS:
        raise ZigHmmError(f"method must be one of {INIT_METHODS}")
    A = np.maximum(A, TRANSITION_FLOOR)
    A /= A.sum(axis=2, keepdims=True)
    pi = np.vstack([stationary_distribution(a) for a in A])
    params = MixtureHmmParams(np.full(K, 1.0 / K), pi, A, epsilon, shape, rate)
    if method == "random" or K == 1:
        return params
    edges = np.array([chunk[-1] for chunk in bins[:-1]])
    features = _binned_features(data, edges, M, FEATURE_SETS[int(rng.integers(len(FEATURE_SETS)))])
    labels = KMeans(K, n_init=1, random_state=int(rng.integers(2**31 - 1))).fit(features).labels_
    if np.unique(labels).size < K:
        raise DegenerateFitError("k-means left a component without subjects", {"labels": labels.tolist()})
    tau = np.eye(K)[labels]
    for _ in range(WARMUP_STEPS):
        params = m_step(e_step(data, params, tau=tau), EmConfig(), params)
    return params


@dataclass
class RunResult:
    params: MixtureHmmParams
    loglik: float
    loglik_trace: list
    n_iterations: int
    converged: bool


def run_em(data, init: MixtureHmmParams, config: EmConfig | None = None) -> RunResult:
    """Iterate E and M steps from ``init`` until the relative change of the
    log-likelihood drops below ``rel_tol`` or ``max_iter`` is reached."""
    config = config or EmConfig()
    data = pack(data)
    params = init
    stats = e_step(data, params)
    trace = [stats.loglik]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        params = m_step(stats, config, params)
        stats = e_step(data, params)
        prev = trace[-1]
        trace.append(stats.loglik)
        if abs(stats.loglik - prev) <= config.rel_tol * abs(prev):
            converged = True
            break
    return RunResult(params, stats.loglik, trace, it, converged)


@dataclass
class FitResult:
    params: MixtureHmmParams
    loglik: float
    loglik_trace: list
    tau: np.ndarray
    partition: np.ndarray
    n_iterations: int
    converged: bool
    restart_index: int
    n_observations: int
    restart_logliks: list = field(default_factory=list)
    n_degenerate: int = 0

    @property
    def K(self) -> int:
        return self.params.K

    @property
    def M(self) -> int:
        return self.params.M


def _one_restart(data: PackedData, K: int, M: int, config: EmConfig, r: int):
    rng = np.random.default_rng([int(config.seed), r])
    try:
        init = initialize(data, K, M, rng, config.init)
        return run_em(data, init, config)
    except _RESTART_ERRORS as exc:
        logger.debug("restart %d discarded: %s", r, exc)
        return exc


def fit(data, K: int, M: int, config: EmConfig | None = None) -> FitResult:
    """Best of ``config.restarts`` EM runs, relabelled canonically.

    Restart ``r`` draws its starting point from ``default_rng([seed, r])`` so
    results do not depend on ``n_jobs``.
    """
    config = config or EmConfig()
    data = pack(data)
    runs = range(int(config.restarts))
    if config.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=int(config.n_jobs)) as pool:
            results = list(pool.map(lambda r: _one_restart(data, K, M, config, r), runs))
    else:
        results = [_one_restart(data, K, M, config, r) for r in runs]

    best, best_r = None, -1
    logliks = []
    for r, res in enumerate(results):
        if isinstance(res, Exception):
            logliks.append(float("nan"))
            continue
        logliks.append(res.loglik)
        if best is None or res.loglik > best.loglik:
            best, best_r = res, r
    n_bad = sum(isinstance(res, Exception) for res in results)
    if best is None:
        raise DegenerateFitError(
            f"all {len(results)} restarts were degenerate", {"errors": [str(e) for e in results]}
        )
    return finalize(data, best, best_r, logliks, n_bad)


def finalize(data, run: RunResult, restart_index=0, restart_logliks=None, n_degenerate=0) -> FitResult:
    data = pack(data)
    params = run.params.canonical()
    tau, _ = class_posteriors(component_logliks(data, params), params.delta)
    return FitResult(
        params=params,
        loglik=run.loglik,
        loglik_trace=list(run.loglik_trace),
        tau=tau,
        partition=map_labels(tau),
        n_iterations=run.n_iterations,
        converged=run.converged,
        restart_index=restart_index,
        n_observations=data.n_observations,
        restart_logliks=list(restart_logliks or []),
        n_degenerate=n_degenerate,
    )
