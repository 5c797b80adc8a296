"""Observation ingestion and segmentation on missing runs.

Each subject's series is cut at every interior missing run; the observed
pieces are then modelled as independent sequences of the same class, each
started from the stationary law.  That shortcut is sound only when every gap
is longer than the mixing time of the fitted chains, which
:func:`validate_gap_assumption` checks after fitting.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ParseError, ZigHmmError
from .markov import mixing_time_bound, tv_distance_to_stationary

HEADER = ("subject_id", "t", "value")
SEGMENT_HEADER = ("subject_id", "segment_index", "t_local", "value")
MISSING_TOKENS = ("", "NA")


@dataclass
class RawSeries:
    """One subject's minute series; missing values are NaN."""

    subject_id: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.subject_id = str(self.subject_id)
        self.times = np.asarray(self.times, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise ZigHmmError("times and values must be 1-d arrays of equal length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ZigHmmError(f"subject {self.subject_id}: times must be strictly increasing")
        observed = self.values[~np.isnan(self.values)]
        if np.any(~np.isfinite(observed)) or np.any(observed < 0):
            raise ZigHmmError(f"subject {self.subject_id}: observed values must be finite and nonnegative")

    @classmethod
    def from_values(cls, subject_id, values, t0: int = 0) -> "RawSeries":
        values = np.asarray(values, dtype=float)
        return cls(subject_id, np.arange(t0, t0 + values.size), values)

    def dense(self) -> np.ndarray:
        """Values on the unit grid from the first to last time; absent times are NaN."""
        if self.times.size == 0:
            return np.empty(0)
        out = np.full(int(self.times[-1] - self.times[0]) + 1, np.nan)
        out[self.times - self.times[0]] = self.values
        return out

    @property
    def missing_fraction(self) -> float:
        return float(np.isnan(self.values).mean()) if self.values.size else 0.0


@dataclass
class SegmentedSubject:
    """Observed runs of one subject with the lengths of the gaps between them.

    ``starts[s]`` is the absolute time of the first value of segment ``s``.
    ``short_gaps`` lists interior gaps shorter than the requested minimum;
    they are split anyway and kept for the validity report.
    """

    subject_id: str
    segments: list
    gaps: list = field(default_factory=list)
    starts: list = field(default_factory=list)
    short_gaps: list = field(default_factory=list)

    def __post_init__(self):
        self.segments = [np.asarray(s, dtype=float) for s in self.segments]
        if not self.segments:
            raise ZigHmmError(f"subject {self.subject_id}: no observed segment")
        if any(s.size == 0 for s in self.segments):
            raise ZigHmmError(f"subject {self.subject_id}: empty segment")
        if len(self.gaps) != len(self.segments) - 1:
            raise ZigHmmError("there must be exactly one gap between consecutive segments")
        if not self.starts:
            starts, t = [], 0
            for seg, gap in zip(self.segments, list(self.gaps) + [0]):
                starts.append(t)
                t += seg.size + gap
            self.starts = starts

    @classmethod
    def single(cls, subject_id, values) -> "SegmentedSubject":
        return cls(str(subject_id), [np.asarray(values, dtype=float)])

    @property
    def n_observations(self) -> int:
        return int(sum(s.size for s in self.segments))

    @property
    def span(self) -> int:
        """Length of the trimmed series (segments plus gaps)."""
        return self.n_observations + int(sum(self.gaps))

    def flatten(self) -> np.ndarray:
        """Trimmed series with NaN in the gaps."""
        parts = []
        for s, seg in enumerate(self.segments):
            parts.append(seg)
            if s < len(self.gaps):
                parts.append(np.full(self.gaps[s], np.nan))
        return np.concatenate(parts)


def segment_on_missing(series, min_gap: int = 1, on_short_gap: str = "split", subject_id=None) -> SegmentedSubject:
    """Trim edge missingness and split at every interior missing run.

    ``series`` is a :class:`RawSeries` or a 1-d array with NaN for missing.
    Gaps shorter than ``min_gap`` are split anyway and recorded in
    ``short_gaps`` (``on_short_gap="split"``) or raise (``"error"``).
    """
    if min_gap < 1:
        raise ZigHmmError("min_gap must be a positive integer")
    if on_short_gap not in ("split", "error"):
        raise ZigHmmError("on_short_gap must be 'split' or 'error'")
    if isinstance(series, RawSeries):
        sid, values, t0 = series.subject_id, series.dense(), int(series.times[0]) if series.times.size else 0
    else:
        sid, values, t0 = str(subject_id if subject_id is not None else ""), np.asarray(series, dtype=float), 0
    observed = ~np.isnan(values)
    if not observed.any():
        raise ZigHmmError(f"subject {sid}: all values are missing")
    idx = np.flatnonzero(observed)
    first, last = idx[0], idx[-1]
    values, observed = values[first : last + 1], observed[first : last + 1]
    # boundaries of maximal observed runs
    flips = np.flatnonzero(np.diff(observed.astype(np.int8)))
    run_starts = np.concatenate([[0], flips[observed[flips + 1]] + 1])
    run_ends = np.concatenate([flips[~observed[flips + 1]] + 1, [values.size]])
    segments = [values[a:b].copy() for a, b in zip(run_starts, run_ends)]
    gaps = [int(run_starts[j + 1] - run_ends[j]) for j in range(len(segments) - 1)]
    short = [g for g in gaps if g < min_gap]
    if short and on_short_gap == "error":
        raise ZigHmmError(f"subject {sid}: missing runs shorter than min_gap={min_gap}: {sorted(set(short))}")
    starts = [int(t0 + first + a) for a in run_starts]
    return SegmentedSubject(sid, segments, gaps, starts, short)


def segment_all(series_list, min_gap: int = 1, on_short_gap: str = "split") -> list[SegmentedSubject]:
    return [segment_on_missing(s, min_gap, on_short_gap) for s in series_list]


# CSV ---------------------------------------------------------------------


def _open_text(source):
    if isinstance(source, (str, Path)):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"), newline="")
    if isinstance(source, (io.BufferedIOBase, io.RawIOBase)):
        return io.TextIOWrapper(source, encoding="utf-8", newline="")
    return source


def parse_long_csv(source) -> list[RawSeries]:
    """Read ``subject_id,t,value`` rows into one :class:`RawSeries` per subject.

    ``value`` may be empty or ``NA`` for missing.  Subjects keep their order of
    first appearance; rows are sorted by ``t`` within a subject.
    """
    fh = _open_text(source)
    close = fh is not source and isinstance(source, (str, Path))
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        if tuple(h.strip() for h in header) != HEADER:
            raise ParseError(f"expected header {','.join(HEADER)!r}, got {','.join(header)!r}", line=1)
        rows: dict[str, dict[int, tuple[float, int]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line=lineno)
            sid, t_raw, v_raw = (x.strip() for x in row)
            if not sid:
                raise ParseError("empty subject_id", line=lineno)
            try:
                t = int(t_raw)
            except ValueError:
                raise ParseError(f"t must be an integer, got {t_raw!r}", line=lineno) from None
            if v_raw in MISSING_TOKENS:
                v = math.nan
            else:
                try:
                    v = float(v_raw)
                except ValueError:
                    raise ParseError(f"value must be a number or NA, got {v_raw!r}", line=lineno) from None
                if not math.isfinite(v):
                    raise ParseError(f"value must be finite, got {v_raw!r}", line=lineno)
                if v < 0:
                    raise ParseError(f"value must be nonnegative, got {v_raw!r}", line=lineno)
            per = rows.setdefault(sid, {})
            if t in per:
                raise ParseError(
                    f"duplicate (subject_id, t) = ({sid}, {t}); first seen on line {per[t][1]}", line=lineno
                )
            per[t] = (v, lineno)
    finally:
        if close:
            fh.close()
    out = []
    for sid, per in rows.items():
        ts = np.array(sorted(per), dtype=np.int64)
        out.append(RawSeries(sid, ts, np.array([per[t][0] for t in ts], dtype=float)))
    return out


def _fmt(v: float) -> str:
    return "NA" if math.isnan(v) else repr(float(v))


def write_long_csv(series_list, target) -> None:
    """Write series in the ``subject_id,t,value`` layout (``NA`` for missing)."""
    fh = open(target, "w", newline="", encoding="utf-8") if isinstance(target, (str, Path)) else target
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for s in series_list:
            for t, v in zip(s.times, s.values):
                w.writerow((s.subject_id, int(t), _fmt(v)))
    finally:
        if isinstance(target, (str, Path)):
            fh.close()


def write_segments_csv(subjects, target) -> None:
    """Dump segments as ``subject_id,segment_index,t_local,value``."""
    fh = open(target, "w", newline="", encoding="utf-8") if isinstance(target, (str, Path)) else target
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SEGMENT_HEADER)
        for subj in subjects:
            for s, seg in enumerate(subj.segments):
                for t, v in enumerate(seg):
                    w.writerow((subj.subject_id, s, t, _fmt(v)))
    finally:
        if isinstance(target, (str, Path)):
            fh.close()


# validity of the independent-segment approximation -------------------------


@dataclass
class GapReport:
    status: str  # "PASS", "FAIL" or "VACUOUS PASS"
    eta: float
    d_min: int | None
    bounds: list
    tv_at_d_min: list
    failing_components: list
    n_short_gaps: int = 0

    @property
    def passed(self) -> bool:
        return self.status != "FAIL"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "eta": self.eta,
            "d_min": self.d_min,
            "mixing_time_bounds": list(self.bounds),
            "tv_at_d_min": list(self.tv_at_d_min),
            "failing_components": list(self.failing_components),
            "n_short_gaps": self.n_short_gaps,
        }


def validate_gap_assumption(subjects, params, eta: float = 5e-4) -> GapReport:
    """Compare the smallest interior gap with each class's mixing-time bound.

    PASS when ``d_min`` is at least the bound for every class; FAIL lists the
    offending classes.  The total-variation distance reached at ``d_min`` is
    computed by explicit matrix power and reported either way.
    """
    gaps = [g for s in subjects for g in s.gaps]
    n_short = sum(len(s.short_gaps) for s in subjects)
    bounds = [mixing_time_bound(a, eta) for a in params.A]
    if not gaps:
        return GapReport("VACUOUS PASS", eta, None, bounds, [], [], n_short)
    d_min = int(min(gaps))
    tv = [tv_distance_to_stationary(a, d_min) for a in params.A]
    failing = [k for k, b in enumerate(bounds) if d_min < b]
    return GapReport("FAIL" if failing else "PASS", eta, d_min, bounds, tv, failing, n_short)
