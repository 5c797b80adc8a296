"""Zero-inflated gamma (ZIG) emission laws.

A ZIG variable is exactly 0 with probability ``epsilon`` and otherwise follows a
gamma law with ``shape`` a and ``rate`` b.  The value 0 is treated as a pure atom:
the continuous part puts no mass on the single point {0}, so

    log g(0)  = log(epsilon)
    log g(y)  = log(1 - epsilon) + a log b - lgamma(a) + (a - 1) log y - b y,   y > 0
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, polygamma

from .exceptions import EstimationError, ZigHmmError

# floors applied by the EM driver; kept here so tests can probe them
EPSILON_FLOOR = 1e-10
SHAPE_RATE_BOUNDS = (1e-8, 1e8)


@dataclass(frozen=True)
class ZigParams:
    """Parameters of one zero-inflated gamma state."""

    epsilon: float
    shape: float
    rate: float

    def __post_init__(self):
        eps, a, b = float(self.epsilon), float(self.shape), float(self.rate)
        if not 0.0 <= eps <= 1.0:
            raise ZigHmmError(f"epsilon must lie in [0, 1], got {eps!r}")
        if not (np.isfinite(a) and a > 0):
            raise ZigHmmError(f"shape must be positive and finite, got {a!r}")
        if not (np.isfinite(b) and b > 0):
            raise ZigHmmError(f"rate must be positive and finite, got {b!r}")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "shape", a)
        object.__setattr__(self, "rate", b)

    def mean(self) -> float:
        return zig_mean(self)

    def log_density(self, y):
        return zig_log_density(y, self)

    def sample(self, rng: np.random.Generator, size=None):
        return zig_sample(self, rng, size)


def _check_values(y) -> np.ndarray:
    arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ZigHmmError("observations must be finite")
    if np.any(arr < 0):
        raise ZigHmmError("observations must be nonnegative")
    return arr


def gamma_log_density(y, shape, rate):
    """Gamma(shape, rate) log-density for strictly positive ``y`` (no checks)."""
    y = np.asarray(y, dtype=float)
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(y) - rate * y


def zig_log_density(y, p: ZigParams):
    """Log of the ZIG density/mass at ``y`` (scalar or array).

    Returns ``-inf`` where the mass is exactly zero, e.g. ``y == 0`` with
    ``epsilon == 0`` or ``y > 0`` with ``epsilon == 1``.
    """
    arr = _check_values(y)
    out = np.empty(arr.shape, dtype=float)
    zero = arr == 0
    with np.errstate(divide="ignore"):
        out[zero] = np.log(p.epsilon)
        pos = ~zero
        if np.any(pos):
            out[pos] = np.log1p(-p.epsilon) + gamma_log_density(arr[pos], p.shape, p.rate)
    if out.ndim == 0:
        return float(out)
    return out


def log_density_table(y, epsilon, shape, rate) -> np.ndarray:
    """Log emission table of shape ``(len(y), M)`` for M states at once.

    ``y`` is assumed validated (finite, nonnegative); this is the hot path of
    the E-step.
    """
    y = np.asarray(y, dtype=float)
    epsilon = np.asarray(epsilon, dtype=float)
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    out = np.empty((y.shape[0], epsilon.shape[0]), dtype=float)
    zero = y == 0
    with np.errstate(divide="ignore"):
        out[zero, :] = np.log(epsilon)[None, :]
        ypos = y[~zero]
        logy = np.log(ypos)[:, None]
        out[~zero, :] = (
            np.log1p(-epsilon)
            + shape * np.log(rate)
            - gammaln(shape)
            + (shape - 1.0) * logy
            - rate * ypos[:, None]
        )
    return out


def zig_mean(p: ZigParams) -> float:
    return (1.0 - p.epsilon) * p.shape / p.rate


def zig_sample(p: ZigParams, rng: np.random.Generator, size=None):
    """Draw from the ZIG law: exact zeros with probability epsilon, else gamma."""
    zero = rng.random(size) < p.epsilon
    draws = rng.gamma(p.shape, 1.0 / p.rate, size)
    return np.where(zero, 0.0, draws) if size is not None else (0.0 if zero else float(draws))


def sample_states(y_states, epsilon, shape, rate, rng: np.random.Generator) -> np.ndarray:
    """Vectorised ZIG sampling: one draw per entry of the integer array ``y_states``."""
    states = np.asarray(y_states, dtype=np.intp)
    epsilon = np.asarray(epsilon, dtype=float)
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    zero = rng.random(states.shape) < epsilon[states]
    draws = rng.gamma(shape[states], 1.0 / rate[states])
    return np.where(zero, 0.0, draws)


def weighted_zero_fraction(values, weights) -> float:
    """Weighted share of exact zeros: sum(w * [y == 0]) / sum(w)."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape:
        raise ZigHmmError("values and weights must have the same shape")
    total = weights.sum()
    if not total > 0:
        raise EstimationError("total weight must be positive")
    return float(weights[values == 0].sum() / total)


def _initial_shape(s: float) -> float:
    # closed-form approximation to the root of log a - digamma(a) = s
    return (3.0 - s + np.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)


def gamma_mle_from_stats(total_weight, weighted_sum, weighted_log_sum, init=None, max_iter=100, tol=1e-10):
    """Weighted gamma MLE from sufficient statistics.

    ``total_weight`` = sum w, ``weighted_sum`` = sum w*y, ``weighted_log_sum`` =
    sum w*log(y), all over strictly positive y.  Solves
    ``log a - digamma(a) = log(S1/W) - S2/W`` by safeguarded Newton iteration
    on ``u = log a`` and profiles ``b = a W / S1``.

    Returns ``(shape, rate)``.
    """
    W, S1, S2 = float(total_weight), float(weighted_sum), float(weighted_log_sum)
    if not (W > 0 and S1 > 0):
        raise EstimationError(f"gamma MLE needs positive total weight and weighted sum (W={W}, S1={S1})")
    s = np.log(S1 / W) - S2 / W
    if not s > 1e-15:
        raise EstimationError(
            f"gamma MLE is degenerate: weighted values have no spread (log-mean minus mean-log = {s:.3g})"
        )

    def f(u):
        a = np.exp(u)
        return np.log(a) - digamma(a) - s

    if init is not None and init[0] > 0:
        u = float(np.log(init[0]))
    else:
        u = float(np.log(_initial_shape(s)))
    # f is strictly decreasing in u; grow a bracket around the starting point
    lo, hi = u - 1.0, u + 1.0
    while f(lo) < 0:
        lo -= 2.0
        if lo < -60:
            raise EstimationError("gamma MLE failed to bracket the shape parameter")
    while f(hi) > 0:
        hi += 2.0
        if hi > 60:
            raise EstimationError("gamma MLE failed to bracket the shape parameter")

    for _ in range(max_iter):
        a = np.exp(u)
        fu = np.log(a) - digamma(a) - s
        if fu > 0:
            lo = max(lo, u)
        else:
            hi = min(hi, u)
        deriv = 1.0 - a * float(polygamma(1, a))
        step = fu / deriv if deriv < 0 else np.inf
        u_new = u - step
        if not (lo < u_new < hi):
            u_new = 0.5 * (lo + hi)
        if abs(u_new - u) < tol:
            u = u_new
            break
        u = u_new
    else:
        raise EstimationError("gamma MLE Newton iteration did not converge")
    a = float(np.exp(u))
    return a, a * W / S1


def weighted_gamma_mle(values, weights, init=None):
    """Gamma(shape, rate) maximising ``sum_t w_t log gamma_density(y_t; a, b)``.

    Only strictly positive ``values`` are allowed; zeros belong to the atom of
    the ZIG law and must be removed by the caller.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape:
        raise ZigHmmError("values and weights must have the same shape")
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise ZigHmmError("gamma MLE requires strictly positive finite values")
    if np.any(weights < 0):
        raise ZigHmmError("weights must be nonnegative")
    active = weights > 0
    if active.sum() < 2:
        raise EstimationError("gamma MLE needs at least two values with positive weight")
    v, w = values[active], weights[active]
    if np.all(v == v[0]):
        raise EstimationError("gamma MLE is degenerate: all weighted values are equal (zero variance)")
    return gamma_mle_from_stats(w.sum(), np.dot(w, v), np.dot(w, np.log(v)), init=init)


def weighted_gamma_loglik(shape, rate, values, weights) -> float:
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    return float(np.dot(weights, gamma_log_density(values, shape, rate)))
