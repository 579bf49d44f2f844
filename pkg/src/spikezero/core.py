"""Shared numeric primitives.

Dense real vectors are plain 1-D float64 numpy arrays throughout the
package; :func:`as_vector` is the single validation gate. The module also
provides the elementwise operations used by the update rules, learning-rate
schedules, and the seeded RNG streams that make every stochastic routine
replayable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "as_vector",
    "hadamard",
    "exp_map",
    "LearningRateSchedule",
    "RngStream",
]

# exp() overflows float64 just above this exponent
_EXP_MAX = 709.0


def as_vector(values, name: str = "vector") -> np.ndarray:
    """Coerce ``values`` to a finite 1-D float64 array or raise ValueError."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def hadamard(a, b) -> np.ndarray:
    """Componentwise product of two equal-length vectors."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a * b


def exp_map(v, sign: int = 1) -> np.ndarray:
    """Componentwise ``exp(sign * v)`` with an explicit overflow check.

    ``sign`` must be +1 or -1. Raises OverflowError naming the first
    offending index if any component would overflow float64.
    """
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    v = as_vector(v, "v")
    scaled = sign * v
    too_big = scaled > _EXP_MAX
    if np.any(too_big):
        idx = int(np.argmax(too_big))
        raise OverflowError(
            f"exp_map overflow at index {idx}: exp({scaled[idx]:g}) exceeds float64"
        )
    return np.exp(scaled)


@dataclass(frozen=True)
class LearningRateSchedule:
    """Step-size sequence alpha_k, either constant or alpha0 / k**power.

    alpha0 = 0 is admitted as a degenerate schedule that freezes the
    iterate, useful as a control run.
    """

    kind: str
    alpha0: float
    power: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "power"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.alpha0 < 0:
            raise ValueError("alpha0 must be nonnegative")
        if self.power < 0:
            raise ValueError("power must be nonnegative")

    @classmethod
    def constant(cls, alpha0: float) -> "LearningRateSchedule":
        return cls("constant", alpha0)

    @classmethod
    def power_decay(cls, alpha0: float, power: float) -> "LearningRateSchedule":
        return cls("power", alpha0, power)

    def rate(self, k: int) -> float:
        """Learning rate for iteration ``k`` (1-based)."""
        if k < 1:
            raise ValueError(f"iteration index must be >= 1, got {k}")
        if self.kind == "constant":
            return self.alpha0
        return self.alpha0 / float(k) ** self.power


@dataclass(frozen=True)
class RngStream:
    """Deterministic, hierarchically splittable random stream.

    ``(seed, stream)`` fully determines the sample sequence. Streams are
    backed by the counter-based Philox generator keyed through numpy's
    SeedSequence, so identical ``(seed, stream)`` pairs produce bitwise
    identical draws across runs and platforms, and distinct stream paths
    are statistically independent.
    """

    seed: int
    stream: tuple = ()

    def __post_init__(self):
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        stream = tuple(int(s) for s in (
            (self.stream,) if isinstance(self.stream, int) else self.stream
        ))
        if any(s < 0 for s in stream):
            raise ValueError("stream ids must be nonnegative")
        object.__setattr__(self, "stream", stream)

    def substream(self, *ids: int) -> "RngStream":
        """Derive a child stream by appending ``ids`` to the stream path."""
        return RngStream(self.seed, self.stream + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        """Fresh Generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(seq))
