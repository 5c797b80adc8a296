"""Forward/backward recursions, posteriors, likelihood and Viterbi decoding.

The recursions run on normalised tables: at every step the emission row is
divided by its maximum and the forward vector by its sum, and the logs of
both factors are kept in ``log_scale``.  The segment log-likelihood is
``log_scale.sum()``; ``alpha_hat[t] * beta_hat[t]`` is the smoothed state
posterior and sums to one at every ``t``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numba
import numpy as np
from scipy.special import logsumexp

from scipy.special import gammaln

from .emissions import log_density_table
from .exceptions import ZeroLikelihoodError, ZigHmmError
from .params import MixtureHmmParams
from .sequences import SegmentedSubject

# numba kernels ---------------------------------------------------------------


def scaled_emissions(logb):
    """Row-max-normalised emissions ``(b, shift)`` with ``logb = log(b) + shift``.

    Raises :class:`ZeroLikelihoodError` on a row where every state has zero mass.
    """
    shift = logb.max(axis=1)
    dead = np.flatnonzero(shift == -np.inf)
    if dead.size:
        raise ZeroLikelihoodError(f"zero likelihood under every state at t={dead[0]}", t=int(dead[0]))
    with np.errstate(invalid="ignore"):
        b = np.exp(logb - shift[:, None])
    return b, shift


@numba.njit(cache=True, nogil=True)
def _forward_block(b, start, L, pi, A, alpha, c):
    """Scaled forward pass on ``b[start:start + L]``; returns index of a zero-mass step or -1."""
    M = b.shape[1]
    tot = 0.0
    for h in range(M):
        alpha[0, h] = pi[h] * b[start, h]
        tot += alpha[0, h]
    if not tot > 0.0:
        return 0
    c[0] = tot
    for h in range(M):
        alpha[0, h] /= tot
    for t in range(1, L):
        tot = 0.0
        for ell in range(M):
            acc = 0.0
            for h in range(M):
                acc += alpha[t - 1, h] * A[h, ell]
            alpha[t, ell] = acc * b[start + t, ell]
            tot += alpha[t, ell]
        if not tot > 0.0:
            return t
        c[t] = tot
        for ell in range(M):
            alpha[t, ell] /= tot
    return -1


@numba.njit(cache=True, nogil=True)
def _backward_block(b, start, L, A, c, beta):
    M = b.shape[1]
    for h in range(M):
        beta[L - 1, h] = 1.0
    for t in range(L - 2, -1, -1):
        for h in range(M):
            acc = 0.0
            for ell in range(M):
                acc += A[h, ell] * b[start + t + 1, ell] * beta[t + 1, ell]
            beta[t, h] = acc / c[t + 1]


@numba.njit(cache=True, nogil=True)
def _forward_loglik_kernel(b, shift, seg_start, seg_len, pi, A):
    S = seg_start.shape[0]
    M = b.shape[1]
    maxlen = 1
    for s in range(S):
        if seg_len[s] > maxlen:
            maxlen = seg_len[s]
    alpha = np.empty((maxlen, M))
    c = np.empty(maxlen)
    seg_ll = np.zeros(S)
    for s in range(S):
        st, L = seg_start[s], seg_len[s]
        bad = _forward_block(b, st, L, pi, A, alpha, c)
        if bad >= 0:
            return seg_ll, st + bad
        ll = 0.0
        for t in range(L):
            ll += np.log(c[t]) + shift[st + t]
        seg_ll[s] = ll
    return seg_ll, -1


@numba.njit(cache=True, nogil=True)
def _fb_stats_kernel(b, shift, seg_start, seg_len, seg_subject, n_subjects, pi, A, y, logy):
    """Per-subject expected counts under one component (not yet weighted by tau)."""
    S = seg_start.shape[0]
    M = b.shape[1]
    maxlen = 1
    for s in range(S):
        if seg_len[s] > maxlen:
            maxlen = seg_len[s]
    alpha = np.empty((maxlen, M))
    beta = np.empty((maxlen, M))
    c = np.empty(maxlen)
    seg_ll = np.zeros(S)
    occ = np.zeros((n_subjects, M))
    occ0 = np.zeros((n_subjects, M))
    zero_occ = np.zeros((n_subjects, M))
    s1 = np.zeros((n_subjects, M))
    s2 = np.zeros((n_subjects, M))
    trans = np.zeros((n_subjects, M, M))
    g = np.empty(M)
    for s in range(S):
        st, L, i = seg_start[s], seg_len[s], seg_subject[s]
        bad = _forward_block(b, st, L, pi, A, alpha, c)
        if bad >= 0:
            return seg_ll, occ, occ0, zero_occ, s1, s2, trans, st + bad
        ll = 0.0
        for t in range(L):
            ll += np.log(c[t]) + shift[st + t]
        seg_ll[s] = ll
        _backward_block(b, st, L, A, c, beta)
        for t in range(L):
            tot = 0.0
            for h in range(M):
                g[h] = alpha[t, h] * beta[t, h]
                tot += g[h]
            yt = y[st + t]
            for h in range(M):
                gh = g[h] / tot
                occ[i, h] += gh
                if t == 0:
                    occ0[i, h] += gh
                if yt == 0.0:
                    zero_occ[i, h] += gh
                else:
                    s1[i, h] += gh * yt
                    s2[i, h] += gh * logy[st + t]
        for t in range(1, L):
            for h in range(M):
                ah = alpha[t - 1, h] / c[t]
                for ell in range(M):
                    trans[i, h, ell] += ah * A[h, ell] * b[st + t, ell] * beta[t, ell]
    return seg_ll, occ, occ0, zero_occ, s1, s2, trans, -1


@numba.njit(cache=True, nogil=True)
def _viterbi_kernel(logb, log_pi, log_A):
    L, M = logb.shape
    delta = np.empty((L, M))
    back = np.zeros((L, M), dtype=np.int64)
    for h in range(M):
        delta[0, h] = log_pi[h] + logb[0, h]
    for t in range(1, L):
        for ell in range(M):
            best = -np.inf
            arg = 0
            for h in range(M):
                v = delta[t - 1, h] + log_A[h, ell]
                if v > best:  # strict: ties keep the lowest index
                    best = v
                    arg = h
            delta[t, ell] = best + logb[t, ell]
            back[t, ell] = arg
    path = np.empty(L, dtype=np.int64)
    best = -np.inf
    arg = 0
    for h in range(M):
        if delta[L - 1, h] > best:
            best = delta[L - 1, h]
            arg = h
    path[L - 1] = arg
    for t in range(L - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, best


# packed data -------------------------------------------------------------------


@dataclass
class PackedData:
    """All segments of all subjects concatenated into one flat array."""

    y: np.ndarray
    seg_start: np.ndarray
    seg_len: np.ndarray
    seg_subject: np.ndarray
    n_subjects: int
    subject_ids: list

    @cached_property
    def zero_mask(self) -> np.ndarray:
        return self.y == 0

    @cached_property
    def logy(self) -> np.ndarray:
        """log(y) where y > 0, else 0."""
        out = np.zeros_like(self.y)
        pos = ~self.zero_mask
        out[pos] = np.log(self.y[pos])
        return out

    @property
    def n_observations(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_transitions(self) -> int:
        return int((self.seg_len - 1).sum())

    def subject_transitions(self) -> np.ndarray:
        return np.bincount(self.seg_subject, weights=self.seg_len - 1, minlength=self.n_subjects)


def as_subjects(data) -> list[SegmentedSubject]:
    """Coerce a dataset to a list of :class:`SegmentedSubject`.

    Accepted items: ``SegmentedSubject`` or a 1-d array treated as one
    gap-free segment.
    """
    if isinstance(data, SegmentedSubject):
        return [data]
    out = []
    for i, item in enumerate(data):
        if isinstance(item, SegmentedSubject):
            out.append(item)
        else:
            arr = np.asarray(item, dtype=float)
            if arr.ndim != 1:
                raise ZigHmmError("each subject must be a 1-d sequence or a SegmentedSubject")
            if np.isnan(arr).any():
                raise ZigHmmError("raw arrays with NaN must be segmented first (see segment_on_missing)")
            out.append(SegmentedSubject.single(str(i), arr))
    return out


def pack(data) -> PackedData:
    if isinstance(data, PackedData):
        return data
    subjects = as_subjects(data)
    if not subjects:
        raise ZigHmmError("dataset is empty")
    segs, subj = [], []
    for i, s in enumerate(subjects):
        for seg in s.segments:
            segs.append(seg)
            subj.append(i)
    lens = np.array([s.size for s in segs], dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(lens)[:-1]]).astype(np.int64)
    y = np.concatenate(segs)
    if not np.all(np.isfinite(y)) or np.any(y < 0):
        raise ZigHmmError("observations must be finite and nonnegative")
    return PackedData(y, starts, lens, np.array(subj, dtype=np.int64), len(subjects), [s.subject_id for s in subjects])


def emission_table(data: PackedData, params: MixtureHmmParams) -> np.ndarray:
    """``(N, M)`` log emission table, reusing the cached log-values of ``data``."""
    a, b, eps = params.shape, params.rate, params.epsilon
    with np.errstate(divide="ignore"):
        const = np.log1p(-eps) + a * np.log(b) - gammaln(a)
        out = const[None, :] + (a - 1.0)[None, :] * data.logy[:, None] - b[None, :] * data.y[:, None]
        zero = data.zero_mask
        if zero.any():
            out[zero] = np.log(eps)[None, :]
    return out


def _scaled_or_raise(logb, data: PackedData):
    try:
        return scaled_emissions(logb)
    except ZeroLikelihoodError as exc:
        _raise_zero(exc.t, data)


def _raise_zero(bad: int, data: PackedData):
    seg = int(np.searchsorted(data.seg_start, bad, side="right") - 1)
    sid = data.subject_ids[data.seg_subject[seg]]
    t = int(bad - data.seg_start[seg])
    raise ZeroLikelihoodError(f"zero likelihood under every state: subject {sid}, segment {seg}, t={t}", t=t)


# component / subject likelihoods ----------------------------------------------


def component_logliks(data, params: MixtureHmmParams, logb=None) -> np.ndarray:
    """``(n, K)`` matrix of log p(y_i | Z_ik = 1)."""
    data = pack(data)
    if logb is None:
        logb = emission_table(data, params)
    b, shift = _scaled_or_raise(logb, data)
    out = np.empty((data.n_subjects, params.K))
    for k in range(params.K):
        seg_ll, bad = _forward_loglik_kernel(b, shift, data.seg_start, data.seg_len, params.pi[k], params.A[k])
        if bad >= 0:
            _raise_zero(bad, data)
        out[:, k] = np.bincount(data.seg_subject, weights=seg_ll, minlength=data.n_subjects)
    return out


def class_posteriors(comp_ll: np.ndarray, delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(tau, per-subject log-likelihood) from component log-likelihoods."""
    with np.errstate(divide="ignore"):
        joint = comp_ll + np.log(delta)[None, :]
    norm = logsumexp(joint, axis=1)
    return np.exp(joint - norm[:, None]), norm


def total_loglik(data, params: MixtureHmmParams) -> float:
    """sum_i log sum_k delta_k prod_s p(y_is | k)."""
    _, per_subject = class_posteriors(component_logliks(data, params), params.delta)
    return float(per_subject.sum())


def map_labels(tau: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest index."""
    return np.argmax(np.asarray(tau), axis=1)


# single-segment API -------------------------------------------------------------


def _segment_logb(segment, params: MixtureHmmParams) -> np.ndarray:
    seg = np.asarray(segment, dtype=float)
    if seg.ndim != 1 or seg.size == 0:
        raise ZigHmmError("segment must be a nonempty 1-d array")
    if not np.all(np.isfinite(seg)) or np.any(seg < 0):
        raise ZigHmmError("segment values must be finite and nonnegative")
    return log_density_table(seg, params.epsilon, params.shape, params.rate)


def _segment_tables(logb, pi, A):
    L, M = logb.shape
    b, shift = scaled_emissions(logb)
    alpha = np.empty((L, M))
    c = np.empty(L)
    bad = _forward_block(b, 0, L, pi, A, alpha, c)
    if bad >= 0:
        raise ZeroLikelihoodError(f"zero likelihood under every state at t={bad}", t=int(bad))
    return b, shift, alpha, c


def forward(segment, k: int, params: MixtureHmmParams):
    """Scaled forward pass of one segment under component ``k``.

    Returns ``(alpha_hat, log_scale, loglik)``.  The unnormalised forward
    variable is ``alpha_hat[t] * exp(log_scale[:t + 1].sum())``.
    """
    logb = _segment_logb(segment, params)
    _, shift, alpha, c = _segment_tables(logb, params.pi[k], params.A[k])
    log_scale = np.log(c) + shift
    return alpha, log_scale, float(log_scale.sum())


def backward(segment, k: int, params: MixtureHmmParams):
    """Scaled backward table sharing the forward scale factors.

    The unnormalised backward variable is ``beta_hat[t] * exp(log_scale[t + 1:].sum())``.
    """
    logb = _segment_logb(segment, params)
    b, _, _, c = _segment_tables(logb, params.pi[k], params.A[k])
    beta = np.empty_like(b)
    _backward_block(b, 0, b.shape[0], params.A[k], c, beta)
    return beta


def backward_loglik(segment, k: int, params: MixtureHmmParams) -> float:
    """log sum_h pi_h g(y_0) beta_0(h), evaluated from the backward table alone."""
    logb = _segment_logb(segment, params)
    beta = backward(segment, k, params)
    _, log_scale, _ = forward(segment, k, params)
    with np.errstate(divide="ignore"):
        head = logsumexp(np.log(params.pi[k]) + logb[0] + np.log(beta[0]))
    return float(head + log_scale[1:].sum())


def viterbi(segment, k: int, params: MixtureHmmParams) -> np.ndarray:
    """Most probable state path of one segment under component ``k``."""
    logb = _segment_logb(segment, params)
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi[k])
        log_A = np.log(params.A[k])
    path, best = _viterbi_kernel(logb, log_pi, log_A)
    if best == -np.inf:
        raise ZeroLikelihoodError("every state path has zero probability")
    return path


# per-subject posteriors ---------------------------------------------------------


@dataclass
class PosteriorTables:
    """Posterior quantities of one subject.

    gamma[s] : (K, L_s, M) state posteriors per component
    xi[s]    : (K, L_s - 1, M, M) pair posteriors per component
    eta[s]   : (L_s, M) state posteriors mixed over components
    """

    tau: np.ndarray
    gamma: list
    xi: list
    eta: list
    loglik_by_component: np.ndarray
    loglik: float


def posteriors(subject, params: MixtureHmmParams) -> PosteriorTables:
    subject = as_subjects([subject])[0] if not isinstance(subject, SegmentedSubject) else subject
    K, M = params.K, params.M
    comp_ll = np.zeros(K)
    gammas, xis = [], []
    for seg in subject.segments:
        logb = _segment_logb(seg, params)
        L = logb.shape[0]
        g_seg = np.empty((K, L, M))
        x_seg = np.empty((K, max(L - 1, 0), M, M))
        for k in range(K):
            A = params.A[k]
            b, shift, alpha, c = _segment_tables(logb, params.pi[k], A)
            beta = np.empty_like(b)
            _backward_block(b, 0, L, A, c, beta)
            comp_ll[k] += np.log(c).sum() + shift.sum()
            g = alpha * beta
            g_seg[k] = g / g.sum(axis=1, keepdims=True)
            if L > 1:
                x = alpha[:-1, :, None] * A[None] * (b[1:] * beta[1:])[:, None, :] / c[1:, None, None]
                x_seg[k] = x / x.sum(axis=(1, 2), keepdims=True)
        gammas.append(g_seg)
        xis.append(x_seg)
    tau, norm = class_posteriors(comp_ll[None], params.delta)
    tau = tau[0]
    etas = [np.einsum("k,klm->lm", tau, g) for g in gammas]
    return PosteriorTables(tau, gammas, xis, etas, comp_ll, float(norm[0]))


@dataclass
class DecodedSubject:
    subject_id: str
    map_class: int
    tau: np.ndarray
    paths: list
    eta: list
    starts: list


def decode_subject(subject, params: MixtureHmmParams) -> DecodedSubject:
    """MAP class, Viterbi paths under that class and mixed state posteriors."""
    subject = subject if isinstance(subject, SegmentedSubject) else as_subjects([subject])[0]
    post = posteriors(subject, params)
    k_hat = int(np.argmax(post.tau))
    paths = [viterbi(seg, k_hat, params) for seg in subject.segments]
    return DecodedSubject(subject.subject_id, k_hat, post.tau, paths, post.eta, list(subject.starts))
