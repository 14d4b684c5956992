"""Simulated three-class multinomial-logistic experiment.

Two latent scores drive the classes::

    f1 = 4*x0*x1 + 4*x0 + 4*x1 + sum_i beta1[i] * x[i+2]
    f2 = 4*x0*x1 - 4*x0 - 4*x1 + sum_i beta2[i] * x[i+2]

with class probabilities ``softmax([f1, f2, 0])``.  Class 0 collects the
(+, +) quadrant of features 0/1, class 1 the (-, -) quadrant and class 2 both
mixed-sign quadrants, giving two distinct routes to the same class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError
from .rng import (
    STREAM_SIMULATE_BETA,
    STREAM_SIMULATE_INPUTS,
    STREAM_SIMULATE_LABELS,
    RngStream,
)

N_FEATURES = 10
INTERACTION_WEIGHT = 4.0
MAIN_WEIGHT = 4.0
CLASS_NAMES = ("Class 0", "Class 1", "Class 2")


@dataclass(frozen=True, eq=False)
class ResponseModel:
    beta1: np.ndarray
    beta2: np.ndarray

    def __post_init__(self):
        b1 = np.asarray(self.beta1, dtype=np.float64)
        b2 = np.asarray(self.beta2, dtype=np.float64)
        if b1.shape != (N_FEATURES - 2,) or b2.shape != (N_FEATURES - 2,):
            raise ConfigError(f"beta vectors must have length {N_FEATURES - 2}")
        if not (np.all(np.isfinite(b1)) and np.all(np.isfinite(b2))):
            raise ConfigError("beta coefficients must be finite")
        object.__setattr__(self, "beta1", b1)
        object.__setattr__(self, "beta2", b2)

    @classmethod
    def zeros(cls) -> "ResponseModel":
        return cls(np.zeros(N_FEATURES - 2), np.zeros(N_FEATURES - 2))

    @classmethod
    def draw(cls, rng: RngStream) -> "ResponseModel":
        z = rng.normal(2 * (N_FEATURES - 2))
        return cls(z[: N_FEATURES - 2], z[N_FEATURES - 2 :])

    def scores(self, x: np.ndarray) -> np.ndarray:
        """Latent scores ``(f1, f2)`` for each row of ``x`` (shape ``(..., 2)``)."""
        x = np.asarray(x, dtype=np.float64)
        inter = INTERACTION_WEIGHT * x[..., 0] * x[..., 1]
        main = MAIN_WEIGHT * (x[..., 0] + x[..., 1])
        f1 = inter + main + x[..., 2:] @ self.beta1
        f2 = inter - main + x[..., 2:] @ self.beta2
        return np.stack([f1, f2], axis=-1)


def sample_inputs(n: int, rng: RngStream) -> Dataset:
    if n < 1:
        raise ConfigError("n must be at least 1")
    x = rng.uniform(n * N_FEATURES, -5.0, 5.0).reshape(n, N_FEATURES)
    return Dataset(x, None, [f"Feature {i}" for i in range(N_FEATURES)])


def class_probabilities(x, m: ResponseModel) -> np.ndarray:
    """Softmax of ``(f1, f2, 0)``, shifted by ``max(0, f1, f2)`` for stability.

    Accepts a single 10-vector or an ``(n, 10)`` matrix.
    """
    f = m.scores(x)
    logits = np.concatenate([f, np.zeros(f.shape[:-1] + (1,))], axis=-1)
    shift = np.max(logits, axis=-1, keepdims=True)  # >= 0 because of the zero logit
    e = np.exp(logits - shift)
    return e / e.sum(axis=-1, keepdims=True)


def sample_labels(probs, rng: RngStream) -> np.ndarray:
    """Inverse-CDF draw per row, one uniform each, classes scanned in order."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-9) or np.any(probs < 0):
        raise DataError("each probability row must be non-negative and sum to 1")
    u = rng.uniform(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    k = probs.shape[1]
    labels = np.sum(u[:, None] >= cdf[:, :-1], axis=1)
    return np.minimum(labels, k - 1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class Simulation:
    data: Dataset
    model: ResponseModel
    probabilities: np.ndarray


def simulate(n: int = 1500, seed: int = 0) -> Simulation:
    """Full experiment (inputs, beta, labels) as a pure function of ``seed``."""
    inputs = sample_inputs(n, RngStream(seed, STREAM_SIMULATE_INPUTS))
    model = ResponseModel.draw(RngStream(seed, STREAM_SIMULATE_BETA))
    probs = class_probabilities(inputs.features, model)
    labels = sample_labels(probs, RngStream(seed, STREAM_SIMULATE_LABELS))
    data = Dataset(inputs.features, labels, inputs.feature_names, CLASS_NAMES)
    return Simulation(data, model, probs)


def quadrant_labels(x: np.ndarray) -> np.ndarray:
    """Ground-truth quadrant of features 0/1: 0=(+,+), 1=(-,-), 2=(+,-), 3=(-,+)."""
    pos0 = x[:, 0] > 0
    pos1 = x[:, 1] > 0
    q = np.where(pos0 & pos1, 0, np.where(~pos0 & ~pos1, 1, np.where(pos0, 2, 3)))
    return q.astype(np.int64)


def expected_class(x: np.ndarray) -> np.ndarray:
    """Class implied by the signs of features 0 and 1 alone."""
    return np.minimum(quadrant_labels(x), 2)


def smoke_dataset(n: int = 2422, p: int = 39, seed: int = 0) -> Dataset:
    """Generated three-class table with the ADNI data's dimensions.

    Purely synthetic: a few informative columns drive a softmax over three
    classes, the rest are noise, and everything is min-max scaled.  It only
    exercises the CSV pipeline end to end.
    """
    from .rng import STREAM_SMOKE

    rng = RngStream(seed, STREAM_SMOKE)
    x = rng.normal(n * p).reshape(n, p)
    w = rng.normal(3 * 6).reshape(6, 3) * 1.5
    logits = x[:, :6] @ w
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    labels = sample_labels(probs, rng.derive(1))
    names = [f"marker_{i:02d}" for i in range(p)]
    lo, hi = x.min(axis=0), x.max(axis=0)
    x = (x - lo) / np.where(hi > lo, hi - lo, 1.0)
    return Dataset(x, labels, names, ("CN", "MCI", "AD"))


def beta_table(model: ResponseModel) -> list[tuple[str, float, float]]:
    return [(f"Feature {i + 2}", float(model.beta1[i]), float(model.beta2[i]))
            for i in range(N_FEATURES - 2)]
