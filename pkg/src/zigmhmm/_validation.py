"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ZigHmmError
from .sequences import RawSeries, SegmentedSubject, segment_on_missing


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ZigHmmError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ZigHmmError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_sequences(X, min_gap: int = 1) -> list[SegmentedSubject]:
    """Coerce ``X`` to a list of :class:`SegmentedSubject`.

    ``X`` may be a 2-d array (one row per subject, NaN for missing), a list of
    1-d arrays of possibly different lengths, a list of :class:`RawSeries`,
    or a list of already segmented subjects.  Items may be mixed.
    """
    if isinstance(X, (SegmentedSubject, RawSeries)):
        X = [X]
    elif isinstance(X, np.ndarray):
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2:
            raise ZigHmmError(f"expected a 2-d array of sequences, got shape {X.shape}")
    try:
        items = list(X)
    except TypeError:
        raise ZigHmmError(f"expected a collection of sequences, got {type(X).__name__}") from None
    if not items:
        raise ZigHmmError("no sequences given")
    out = []
    for i, item in enumerate(items):
        if isinstance(item, SegmentedSubject):
            out.append(item)
        elif isinstance(item, RawSeries):
            out.append(segment_on_missing(item, min_gap))
        else:
            arr = np.asarray(item, dtype=float)
            if arr.ndim != 1:
                raise ZigHmmError(f"sequence {i} is not 1-d (shape {arr.shape})")
            if np.any(np.isinf(arr)) or np.any(arr[~np.isnan(arr)] < 0):
                raise ZigHmmError(f"sequence {i} has negative or infinite values")
            out.append(segment_on_missing(arr, min_gap, subject_id=str(i)))
    return out
