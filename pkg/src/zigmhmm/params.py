"""Parameter container for the mixture of ZIG hidden Markov models."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .emissions import ZigParams, zig_mean
from .exceptions import ZigHmmError
from .markov import check_probability_vector, check_transition_matrix, stationary_distribution

FORMAT_VERSION = 1


@dataclass
class MixtureHmmParams:
    """Full parameter vector of the model.

    Attributes
    ----------
    delta : (K,) class proportions
    pi : (K, M) initial state law of each class
    A : (K, M, M) transition matrix of each class
    epsilon, shape, rate : (M,) ZIG parameters, one per state and shared by
        all classes
    """

    delta: np.ndarray
    pi: np.ndarray
    A: np.ndarray
    epsilon: np.ndarray
    shape: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        self.delta = np.array(self.delta, dtype=float)
        self.pi = np.array(self.pi, dtype=float, ndmin=2)
        self.A = np.array(self.A, dtype=float)
        if self.A.ndim == 2:
            self.A = self.A[None]
        self.epsilon = np.array(self.epsilon, dtype=float, ndmin=1)
        self.shape = np.array(self.shape, dtype=float, ndmin=1)
        self.rate = np.array(self.rate, dtype=float, ndmin=1)
        self.validate()

    @property
    def K(self) -> int:
        return self.delta.shape[0]

    @property
    def M(self) -> int:
        return self.epsilon.shape[0]

    def validate(self, tol: float = 1e-9) -> None:
        K, M = self.delta.shape[0], self.epsilon.shape[0]
        if self.delta.ndim != 1 or K < 1:
            raise ZigHmmError("delta must be a nonempty 1-d array")
        check_probability_vector(self.delta, tol=tol, name="delta")
        if np.any(self.delta <= 0):
            raise ZigHmmError("class proportions must be strictly positive")
        if self.pi.shape != (K, M):
            raise ZigHmmError(f"pi must have shape {(K, M)}, got {self.pi.shape}")
        if self.A.shape != (K, M, M):
            raise ZigHmmError(f"A must have shape {(K, M, M)}, got {self.A.shape}")
        if self.shape.shape != (M,) or self.rate.shape != (M,):
            raise ZigHmmError("epsilon, shape and rate must all have length M")
        for k in range(K):
            check_probability_vector(self.pi[k], tol=tol, name=f"pi[{k}]")
            check_transition_matrix(self.A[k], tol=tol)
        for h in range(M):
            ZigParams(self.epsilon[h], self.shape[h], self.rate[h])

    def emission(self, h: int) -> ZigParams:
        return ZigParams(self.epsilon[h], self.shape[h], self.rate[h])

    @property
    def emissions(self) -> list[ZigParams]:
        return [self.emission(h) for h in range(self.M)]

    def state_means(self) -> np.ndarray:
        return np.array([zig_mean(p) for p in self.emissions])

    def copy(self) -> "MixtureHmmParams":
        return MixtureHmmParams(
            self.delta.copy(), self.pi.copy(), self.A.copy(), self.epsilon.copy(), self.shape.copy(), self.rate.copy()
        )

    def permute(self, components=None, states=None) -> "MixtureHmmParams":
        """Relabel components and/or states.

        ``components[j]`` is the old index placed at new position ``j``
        (likewise for ``states``); states are permuted globally because the
        emission laws are shared across components.
        """
        c = np.arange(self.K) if components is None else np.asarray(components)
        s = np.arange(self.M) if states is None else np.asarray(states)
        return MixtureHmmParams(
            delta=self.delta[c],
            pi=self.pi[np.ix_(c, s)],
            A=self.A[c][:, s][:, :, s],
            epsilon=self.epsilon[s],
            shape=self.shape[s],
            rate=self.rate[s],
        )

    def canonical_order(self) -> tuple[np.ndarray, np.ndarray]:
        """(component order, state order): states by increasing ZIG mean,
        then components by decreasing ``A_k[0, 0]`` in the new state labels."""
        states = np.argsort(self.state_means(), kind="stable")
        first = self.A[:, states[0], states[0]]
        components = np.argsort(-first, kind="stable")
        return components, states

    def canonical(self) -> "MixtureHmmParams":
        comps, states = self.canonical_order()
        return self.permute(comps, states)

    def with_stationary_pi(self) -> "MixtureHmmParams":
        out = self.copy()
        out.pi = np.vstack([stationary_distribution(a) for a in self.A])
        return out

    # persistence -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "K": self.K,
            "M": self.M,
            "delta": self.delta.tolist(),
            "pi": self.pi.tolist(),
            "A": self.A.tolist(),
            "emissions": [
                {"epsilon": float(e), "shape": float(a), "rate": float(b)}
                for e, a, b in zip(self.epsilon, self.shape, self.rate)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MixtureHmmParams":
        if doc.get("version") != FORMAT_VERSION:
            raise ZigHmmError(f"unsupported model format version {doc.get('version')!r}")
        em = doc["emissions"]
        params = cls(
            delta=doc["delta"],
            pi=doc["pi"],
            A=doc["A"],
            epsilon=[e["epsilon"] for e in em],
            shape=[e["shape"] for e in em],
            rate=[e["rate"] for e in em],
        )
        if params.K != doc["K"] or params.M != doc["M"]:
            raise ZigHmmError("declared K/M do not match the parameter arrays")
        return params

    def to_json(self) -> str:
        # json uses repr() for floats, the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MixtureHmmParams":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "MixtureHmmParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def allclose(self, other: "MixtureHmmParams", **kw) -> bool:
        return all(
            np.allclose(getattr(self, f), getattr(other, f), **kw)
            for f in ("delta", "pi", "A", "epsilon", "shape", "rate")
        )


def parameter_count(K: int, M: int) -> int:
    """Number of free parameters: (K - 1) + K (M + M^2) + 3M."""
    return (K - 1) + K * (M + M * M) + 3 * M
