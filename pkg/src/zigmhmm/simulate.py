"""Data generation and the simulation-study harnesses."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import em as _em
from .emissions import sample_states
from .exceptions import DegenerateFitError, ZigHmmError
from .inference import component_logliks, pack, viterbi
from .params import MixtureHmmParams
from .selection import adjusted_rand_index, aligned_parameter_mse
from .sequences import RawSeries, segment_on_missing

logger = logging.getLogger(__name__)

# (e, a_2) per named design
CASES = {
    "hard": (0.75, 3.0),
    "medium_hard": (0.90, 3.0),
    "medium_easy": (0.75, 5.0),
    "easy": (0.90, 5.0),
}

MISSINGNESS = ("none", "mcar1", "mcar2", "mnar")
MCAR_RUNS = {"mcar1": [(1, 10)], "mcar2": [(2, 20)]}


def scenario_params(case: str) -> MixtureHmmParams:
    """Two classes, two ZIG states, symmetric transition designs."""
    key = case.replace("-", "_")
    if key not in CASES:
        raise ZigHmmError(f"unknown case {case!r}; choose from {sorted(CASES)}")
    e, a2 = CASES[key]
    A1 = [[e, 1 - e], [1 - e, e]]
    A2 = [[1 - e, e], [e, 1 - e]]
    return MixtureHmmParams(
        delta=[0.5, 0.5],
        pi=[[0.5, 0.5], [0.5, 0.5]],
        A=[A1, A2],
        epsilon=[0.1, 0.1],
        shape=[1.0, a2],
        rate=[1.0, 1.0],
    )


@dataclass
class ScenarioSpec:
    case: object = "medium_hard"  # a case name or a MixtureHmmParams
    n: int = 100
    T: int = 500
    missingness: str = "none"
    replicates: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.missingness not in MISSINGNESS:
            raise ZigHmmError(f"missingness must be one of {MISSINGNESS}")
        if self.n < 1 or self.T < 0 or self.replicates < 1:
            raise ZigHmmError("n and replicates must be >= 1 and T >= 0")

    @property
    def params(self) -> MixtureHmmParams:
        return self.case if isinstance(self.case, MixtureHmmParams) else scenario_params(self.case)


@dataclass
class SimulatedDataset:
    """``values`` is ``(n, T + 1)`` with NaN where masked; ``complete`` is unmasked."""

    values: np.ndarray
    complete: np.ndarray
    z: np.ndarray
    x: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def subject_ids(self) -> list[str]:
        return [str(i + 1) for i in range(self.n)]

    def series(self) -> list[RawSeries]:
        return [RawSeries.from_values(sid, row) for sid, row in zip(self.subject_ids(), self.values)]

    def subjects(self, min_gap: int = 1):
        return [segment_on_missing(s, min_gap) for s in self.series()]

    def masked(self, values: np.ndarray) -> "SimulatedDataset":
        return SimulatedDataset(values, self.complete, self.z, self.x)


def sample_dataset(params: MixtureHmmParams, n: int, T: int, rng: np.random.Generator) -> SimulatedDataset:
    """Draw classes, state paths and ZIG observations for ``n`` subjects."""
    from .markov import sample_paths

    z = rng.choice(params.K, size=n, p=params.delta)
    x = sample_paths(params.pi, params.A, z, T, rng)
    y = sample_states(x, params.epsilon, params.shape, params.rate, rng)
    return SimulatedDataset(y.copy(), y, z, x)


def apply_mcar(values, runs, rng: np.random.Generator) -> np.ndarray:
    """Mask ``count`` runs of ``length`` consecutive values per subject.

    ``runs`` is a list of ``(count, length)``.  Runs are placed uniformly at
    random without overlapping (rejection sampling).
    """
    values = np.array(values, dtype=float, ndmin=2)
    out = values.copy()
    width = values.shape[1]
    lengths = [length for count, length in runs for _ in range(count)]
    if sum(lengths) > width:
        raise ZigHmmError(f"missing runs of total length {sum(lengths)} do not fit in {width} values")
    for i in range(values.shape[0]):
        for _ in range(10_000):
            taken = np.zeros(width, dtype=bool)
            ok = True
            for length in lengths:
                start = int(rng.integers(0, width - length + 1))
                if taken[start : start + length].any():
                    ok = False
                    break
                taken[start : start + length] = True
            if ok:
                out[i, taken] = np.nan
                break
        else:
            raise ZigHmmError("could not place non-overlapping missing runs")
    return out


def apply_mnar(values, rng: np.random.Generator) -> np.ndarray:
    """Keep each value with probability ``exp(y) / (1 + exp(y))``."""
    values = np.array(values, dtype=float, ndmin=2)
    keep = rng.random(values.shape) < expit(np.nan_to_num(values))
    return np.where(keep, values, np.nan)


def apply_missingness(values, kind: str, rng: np.random.Generator) -> np.ndarray:
    if kind == "none":
        return np.array(values, dtype=float, ndmin=2)
    if kind in MCAR_RUNS:
        return apply_mcar(values, MCAR_RUNS[kind], rng)
    if kind == "mnar":
        return apply_mnar(values, rng)
    raise ZigHmmError(f"unknown missingness {kind!r}")


def simulate(spec: ScenarioSpec, rng: np.random.Generator | None = None) -> SimulatedDataset:
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    data = sample_dataset(spec.params, spec.n, spec.T, rng)
    return data.masked(apply_missingness(data.complete, spec.missingness, rng))


# misclassification decay ----------------------------------------------------------


@dataclass
class CurvePoint:
    T: int
    median: float
    q05: float
    q95: float
    error_rate: float


def misclassification_experiment(params, T_grid, replicates: int, rng: np.random.Generator) -> list[CurvePoint]:
    """Classify fresh sequences with the true parameters.

    For each length ``T`` draws ``replicates`` sequences and records
    ``log P(Z = k | y) / P(Z = k0 | y)`` (the largest over wrong classes k,
    k0 the generating class) and the MAP error rate.
    """
    params = params if isinstance(params, MixtureHmmParams) else scenario_params(params)
    if params.K < 2:
        raise ZigHmmError("misclassification needs at least two classes")
    out = []
    logd = np.log(params.delta)
    for T in T_grid:
        data = sample_dataset(params, replicates, int(T), rng)
        ll = component_logliks(list(data.complete), params) + logd[None, :]
        own = ll[np.arange(replicates), data.z]
        others = ll.copy()
        others[np.arange(replicates), data.z] = -np.inf
        ratio = others.max(axis=1) - own
        pred = np.argmax(ll, axis=1)
        q05, med, q95 = np.quantile(ratio, [0.05, 0.5, 0.95])
        out.append(CurvePoint(int(T), float(med), float(q05), float(q95), float(np.mean(pred != data.z))))
    return out


def write_curve_csv(points, target, case: str | None = None) -> None:
    fh = open(target, "w", newline="", encoding="utf-8") if isinstance(target, (str, Path)) else target
    try:
        w = csv.writer(fh, lineterminator="\n")
        head = ["T", "median", "q05", "q95", "error_rate"]
        w.writerow((["case"] if case is not None else []) + head)
        for p in points:
            row = [p.T, repr(p.median), repr(p.q05), repr(p.q95), repr(p.error_rate)]
            w.writerow(([case] if case is not None else []) + row)
    finally:
        if isinstance(target, (str, Path)):
            fh.close()


# estimator convergence / robustness -------------------------------------------------


def state_ari(dataset: SimulatedDataset, subjects, fitted: MixtureHmmParams, partition) -> float:
    """ARI between true states and Viterbi paths under each subject's MAP class,
    pooled over every observed time point."""
    truth, est = [], []
    for i, subj in enumerate(subjects):
        k = int(partition[i])
        for seg, start in zip(subj.segments, subj.starts):
            est.append(viterbi(seg, k, fitted))
            truth.append(dataset.x[i, start : start + seg.size])
    return adjusted_rand_index(np.concatenate(truth), np.concatenate(est))


CONVERGENCE_COLUMNS = (
    "n",
    "T",
    "missingness",
    "partition_ari",
    "state_ari",
    "mse_A",
    "mse_epsilon",
    "mse_shape",
    "mse_rate",
    "mse_delta",
    "replicates",
    "n_degenerate",
)


def run_replicate(params, n, T, missingness, config, seed, rep):
    """Simulate, mask, fit and score one replicate; returns a metrics dict or None if degenerate.

    The complete data depend on ``(seed, n, T, rep)`` only, so cells that
    differ only in missingness share their underlying samples.
    """
    data = sample_dataset(params, n, T, np.random.default_rng([seed, n, T, rep]))
    mask_rng = np.random.default_rng([seed, n, T, rep, MISSINGNESS.index(missingness)])
    data = data.masked(apply_missingness(data.complete, missingness, mask_rng))
    subjects = data.subjects()
    packed = pack(subjects)
    try:
        fit = _em.fit(packed, params.K, params.M, config)
    except DegenerateFitError:
        return None
    mse = aligned_parameter_mse(fit.params, params)
    return {
        "partition_ari": adjusted_rand_index(data.z, fit.partition),
        "state_ari": state_ari(data, subjects, fit.params, fit.partition),
        **{f"mse_{k}": v for k, v in mse.items()},
    }


def convergence_experiment(cells, case="medium_hard", replicates: int = 50, config=None, seed: int = 0) -> list[dict]:
    """Average fit quality over replicates for each ``(n, T, missingness)`` cell."""
    params = case if isinstance(case, MixtureHmmParams) else scenario_params(case)
    config = config or _em.EmConfig(restarts=10)
    rows = []
    for n, T, missingness in cells:
        if missingness not in MISSINGNESS:
            raise ZigHmmError(f"unknown missingness {missingness!r}")
        results = [run_replicate(params, n, T, missingness, config, seed, rep) for rep in range(replicates)]
        good = [r for r in results if r is not None]
        row = {"n": n, "T": T, "missingness": missingness, "replicates": replicates, "n_degenerate": len(results) - len(good)}
        for key in CONVERGENCE_COLUMNS[3:10]:
            row[key] = float(np.mean([r[key] for r in good])) if good else float("nan")
        logger.info("cell n=%d T=%d %s: %s", n, T, missingness, row)
        rows.append(row)
    return rows


def write_convergence_csv(rows, target) -> None:
    fh = open(target, "w", newline="", encoding="utf-8") if isinstance(target, (str, Path)) else target
    try:
        w = csv.DictWriter(fh, fieldnames=CONVERGENCE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    finally:
        if isinstance(target, (str, Path)):
            fh.close()
