"""Scalar objective terms, the joint objective and the augmented Lagrangian.

Everything here is evaluated directly from its definition; the solver's
analytic gradients are checked against finite differences of these values.
"""

from dataclasses import dataclass, field
from typing import Dict, Union

import numpy as np

from .conv import FilterBank
from .errors import InvalidArgumentError, NumericalError
from .relevance import GraphOperator, penalty_value


@dataclass
class Hyperparams:
    lambda1: float = 0.1
    lambda2: float = 0.01
    beta: float = 1.0
    u: int = 8
    h: Union[int, Dict[int, int]] = 2
    clamp_negative_relevance: bool = False

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InvalidArgumentError("lambda1 and lambda2 must be non-negative")
        if not self.beta > 0:
            raise InvalidArgumentError("beta must be positive")
        if self.u < 1:
            raise InvalidArgumentError("u must be >= 1")
        hs = self.h.values() if isinstance(self.h, dict) else [self.h]
        if any(int(h) < 1 for h in hs):
            raise InvalidArgumentError("window sizes must be >= 1")

    def window(self, modality: int) -> int:
        if isinstance(self.h, dict):
            return int(self.h[modality])
        return int(self.h)

    def to_dict(self):
        h = {str(k): int(v) for k, v in self.h.items()} if isinstance(self.h, dict) else int(self.h)
        return {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "beta": self.beta,
            "u": self.u,
            "h": h,
            "clamp_negative_relevance": self.clamp_negative_relevance,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("h"), dict):
            d["h"] = {int(k): int(v) for k, v in d["h"].items()}
        return cls(**d)


@dataclass
class ModelParams:
    banks: Dict[int, FilterBank]
    v: np.ndarray

    def copy(self):
        return ModelParams({j: b.copy() for j, b in self.banks.items()}, self.v.copy())


@dataclass
class TrainState:
    """Free embeddings ``Z``, filter embeddings ``Zbar`` and multipliers ``A``.

    All three are ``u x theta``. ``indicators`` maps a modality to its
    ``(n_j, u)`` table of argmax windows.
    """

    Z: np.ndarray
    Zbar: np.ndarray
    A: np.ndarray
    indicators: Dict[int, np.ndarray] = field(default_factory=dict)
    outer_iter: int = 0

    def __post_init__(self):
        if not (self.Z.shape == self.Zbar.shape == self.A.shape):
            raise InvalidArgumentError(
                f"Z {self.Z.shape}, Zbar {self.Zbar.shape} and A {self.A.shape} must share a shape"
            )


def _check_finite(value, what):
    if not np.isfinite(value):
        raise NumericalError(f"{what} evaluated to {value}")
    return value


def classification_loss(v, Z, labels) -> float:
    v = np.asarray(v, dtype=np.float64)
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.float64)
    if Z.shape != (v.shape[0], labels.shape[0]):
        raise InvalidArgumentError(
            f"Z shape {Z.shape} inconsistent with v {v.shape} and labels {labels.shape}"
        )
    r = labels - v @ Z
    return _check_finite(float(r @ r), "classification loss")


def ridge_term(v, banks) -> float:
    total = float(np.sum(np.square(v)))
    for bank in (banks.values() if isinstance(banks, dict) else banks):
        total += float(np.sum(np.square(bank.filters)))
    return _check_finite(total, "ridge term")


def joint_objective(params: ModelParams, Z, labels, L: GraphOperator, hp: Hyperparams) -> float:
    value = classification_loss(params.v, Z, labels) + hp.lambda1 * ridge_term(params.v, params.banks)
    if hp.lambda2:
        value += hp.lambda2 * penalty_value(Z, L)
    return _check_finite(value, "joint objective")


def augmented_lagrangian(params: ModelParams, state: TrainState, labels, L: GraphOperator,
                         hp: Hyperparams) -> float:
    """Joint objective in the free ``Z`` plus multiplier and quadratic penalty terms.

    ``state.Zbar`` must reflect the current filters.
    """
    E = state.Z - state.Zbar
    value = joint_objective(params, state.Z, labels, L, hp)
    value += float(np.sum(state.A * E)) + 0.5 * hp.beta * float(np.sum(E * E))
    return _check_finite(value, "augmented Lagrangian")


def constraint_residual(state: TrainState) -> float:
    if state.Z.size == 0:
        return 0.0
    return float(np.max(np.abs(state.Z - state.Zbar)))


def relative_change(old: float, new: float) -> float:
    return abs(old - new) / max(abs(old), 1e-300)


def stack_labels(samples) -> np.ndarray:
    labels = [s.label for s in samples]
    if any(lab is None for lab in labels):
        raise InvalidArgumentError("every sample needs a +1/-1 label")
    return np.asarray(labels, dtype=np.float64)
