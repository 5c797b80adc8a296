"""scikit-learn style front end for the mixture of ZIG hidden Markov models."""
from __future__ import annotations

import math
import numbers

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive_int, check_sequences
from .em import EmConfig, fit as em_fit
from .exceptions import ZigHmmError
from .inference import class_posteriors, component_logliks, decode_subject, map_labels, pack
from .params import parameter_count
from .selection import classification_entropy
from .sequences import validate_gap_assumption


class MixtureZigHMM(ClusterMixin, BaseEstimator):
    """Cluster sequences with a finite mixture of hidden Markov models.

    Every class has its own transition matrix; the zero-inflated gamma
    emission laws of the hidden states are shared by all classes.  Missing
    values (NaN) split a sequence into independent segments.

    Parameters
    ----------
    n_components : int
        Number of classes K.
    n_states : int
        Number of hidden states M.
    max_iter, tol : EM stopping rule (relative change of the log-likelihood).
    n_init : int
        Number of random restarts; the best log-likelihood wins.
    random_state : int or None
        Seed of the restart generator.
    stationary_init : bool
        Tie each initial law to the stationary law of its transition matrix.
    min_gap : int
        Interior missing runs shorter than this are flagged in the gap report.
    gap_eta : float
        Total-variation target of the gap-validity check.
    n_jobs : int
        Worker threads used across restarts.

    Attributes
    ----------
    params_ : MixtureHmmParams in canonical order
    tau_ : (n, K) class posteriors of the training subjects
    labels_ : MAP classes of the training subjects
    loglik_ : training log-likelihood
    n_iter_, converged_ : EM diagnostics of the retained run
    gap_report_ : GapReport for the training segments
    """

    def __init__(
        self,
        n_components=2,
        n_states=2,
        max_iter=500,
        tol=1e-8,
        n_init=50,
        random_state=0,
        stationary_init=True,
        min_gap=1,
        gap_eta=5e-4,
        n_jobs=1,
    ):
        self.n_components = n_components
        self.n_states = n_states
        self.max_iter = max_iter
        self.tol = tol
        self.n_init = n_init
        self.random_state = random_state
        self.stationary_init = stationary_init
        self.min_gap = min_gap
        self.gap_eta = gap_eta
        self.n_jobs = n_jobs

    def _seed(self) -> int:
        rs = self.random_state
        if rs is None:
            return int(np.random.SeedSequence().entropy)
        if isinstance(rs, numbers.Integral) and not isinstance(rs, bool):
            if rs < 0:
                raise ZigHmmError("random_state must be nonnegative")
            return int(rs)
        if isinstance(rs, (np.random.Generator, np.random.RandomState)):
            return int(rs.integers(2**63) if isinstance(rs, np.random.Generator) else rs.randint(2**31))
        raise ZigHmmError(f"random_state must be None, an int or a numpy generator, got {rs!r}")

    def _config(self) -> EmConfig:
        return EmConfig(
            max_iter=check_positive_int(self.max_iter, "max_iter"),
            rel_tol=float(self.tol),
            restarts=check_positive_int(self.n_init, "n_init"),
            seed=self._seed(),
            stationary_init=bool(self.stationary_init),
            n_jobs=check_positive_int(self.n_jobs, "n_jobs"),
        )

    def _subjects(self, X):
        return check_sequences(X, check_positive_int(self.min_gap, "min_gap"))

    def fit(self, X, y=None):
        """Estimate the model from the sequences in ``X`` (``y`` is ignored)."""
        K = check_positive_int(self.n_components, "n_components")
        M = check_positive_int(self.n_states, "n_states")
        subjects = self._subjects(X)
        if len(subjects) < K:
            raise ZigHmmError(f"need at least n_components={K} sequences, got {len(subjects)}")
        result = em_fit(pack(subjects), K, M, self._config())
        self.fit_result_ = result
        self.params_ = result.params
        self.tau_ = result.tau
        self.labels_ = result.partition
        self.loglik_ = result.loglik
        self.n_iter_ = result.n_iterations
        self.converged_ = result.converged
        self.gap_report_ = validate_gap_assumption(subjects, result.params, self.gap_eta)
        return self

    def _component_logliks(self, X):
        check_is_fitted(self, "params_")
        data = pack(self._subjects(X))
        return data, component_logliks(data, self.params_)

    def predict_proba(self, X) -> np.ndarray:
        """Class posteriors, shape ``(n_sequences, K)``."""
        _, ll = self._component_logliks(X)
        return class_posteriors(ll, self.params_.delta)[0]

    def transform(self, X) -> np.ndarray:
        """Alias of :meth:`predict_proba`, so the model can sit in a pipeline."""
        return self.predict_proba(X)

    def predict(self, X) -> np.ndarray:
        """MAP class of every sequence (ties go to the lower index)."""
        return map_labels(self.predict_proba(X))

    def score_samples(self, X) -> np.ndarray:
        """Log-likelihood of each sequence."""
        _, ll = self._component_logliks(X)
        return class_posteriors(ll, self.params_.delta)[1]

    def score(self, X, y=None) -> float:
        """Total log-likelihood of ``X``."""
        return float(self.score_samples(X).sum())

    def bic(self, X) -> float:
        """Penalised log-likelihood; larger is better."""
        data, ll = self._component_logliks(X)
        total = class_posteriors(ll, self.params_.delta)[1].sum()
        nu = parameter_count(self.params_.K, self.params_.M)
        return float(total - 0.5 * nu * math.log(data.n_observations))

    def icl(self, X) -> float:
        """BIC plus the classification entropy of the MAP partition."""
        return self.bic(X) + classification_entropy(self.predict_proba(X))

    def decode(self, X) -> list:
        """Per-sequence MAP class, Viterbi paths and state posteriors."""
        check_is_fitted(self, "params_")
        return [decode_subject(s, self.params_) for s in self._subjects(X)]
