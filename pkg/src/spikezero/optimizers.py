"""Iterative schemes: gradient descent, the Gaussian one-point zero-order
baseline, and the spike-timing-plasticity update in both parametrizations.

The spike-timing (STDP-derived) rule needs only two loss evaluations' worth
of information per step and no gradient:

    theta_{k+1} = theta_k + alpha_{k+1} * (L_k - Lbar) * (e^{-U_k} - e^{U_k})

with U_k uniform on [-A, A]^d, L_k the loss at theta_k + U_k, and Lbar an
anticipated-loss baseline built from past realized losses. Averaged over
U_k this is a smoothed gradient-descent step; the verification module
checks that identity. The multiplicative form applies the same update to
strictly positive weights w = e^theta:

    w_{k+1} = w_k * (1 + alpha_{k+1} * (L_k - Lbar) * (e^{-U_k} - e^{U_k}))

with the loss evaluated at w_k * e^{U_k}. Its log agrees with the additive
form to second order in the step size.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import LearningRateSchedule, as_vector
from .losses import DataStream, LossFunction, SupervisedSample, finite_diff_gradient, generate_stream
from .perturbation import NoiseConfig

__all__ = [
    "GaussianNoiseConfig",
    "AnticipatedLossStrategy",
    "anticipated_loss",
    "OptimizerState",
    "MultiplicativeState",
    "init_state",
    "init_multiplicative_state",
    "gd_step",
    "one_point_step",
    "stdp_zo_step",
    "stdp_multiplicative_step",
    "PositivityError",
    "OptimizerStepError",
    "RunConfig",
    "TraceRow",
    "ReplicateTrace",
    "run_replicate",
    "run_optimizer",
    "METHODS",
]


class PositivityError(RuntimeError):
    """A multiplicative update would drive a weight to zero or below."""


class OptimizerStepError(RuntimeError):
    """A step failed inside run_optimizer; carries the iteration index."""

    def __init__(self, message: str, iteration: int, partial=None):
        super().__init__(message)
        self.iteration = iteration
        self.partial = partial if partial is not None else []


@dataclass(frozen=True)
class GaussianNoiseConfig:
    """Isotropic N(0, sigma2 I) perturbations with estimator scale beta.

    beta defaults to 1/sigma2, the scale at which the perturbed-loss
    product beta * L(theta + xi) * xi estimates the smoothed gradient.
    """

    sigma2: float
    beta: float | None = None

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        beta = 1.0 / self.sigma2 if self.beta is None else float(self.beta)
        if not beta > 0:
            raise ValueError("beta must be positive")
        object.__setattr__(self, "beta", beta)


@dataclass(frozen=True)
class AnticipatedLossStrategy:
    """Baseline Lbar subtracted from the realized loss.

    previous     -- the most recent realized loss
    zero         -- no baseline
    exponential  -- discounted average, weight of the loss l steps back
                    proportional to exp(-decay * l)
    polynomial   -- weight proportional to l**(-decay)

    Discounted weights are truncated at ``memory`` entries and renormalized
    to sum to one over whatever history is available.
    """

    kind: str = "previous"
    memory: int = 32
    decay: float | None = None

    def __post_init__(self):
        if self.kind not in ("previous", "zero", "exponential", "polynomial"):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.memory < 1:
            raise ValueError("memory must be at least 1")
        if self.kind in ("exponential", "polynomial"):
            if self.decay is None or not self.decay > 0:
                raise ValueError(f"{self.kind} strategy requires decay > 0")

    def discount_weights(self, available: int) -> np.ndarray:
        """Normalized weights for lags 1..min(available, memory)."""
        m = min(available, self.memory)
        lags = np.arange(1, m + 1, dtype=np.float64)
        if self.kind == "exponential":
            raw = np.exp(-self.decay * lags)
        else:
            raw = lags ** (-self.decay)
        return raw / raw.sum()


def anticipated_loss(history, strategy: AnticipatedLossStrategy) -> float:
    """Baseline value for the given realized-loss history (oldest first)."""
    if strategy.kind == "zero":
        return 0.0
    if len(history) == 0:
        raise ValueError(f"strategy {strategy.kind!r} requires a nonempty loss history")
    if strategy.kind == "previous":
        return float(history[-1])
    weights = strategy.discount_weights(len(history))
    recent_first = [history[-(l + 1)] for l in range(weights.shape[0])]
    return float(weights @ np.asarray(recent_first))


@dataclass
class OptimizerState:
    """Mutable iterate state; step functions update it in place and return it."""

    theta: np.ndarray
    theta_prev: np.ndarray
    iteration: int = 0
    loss_history: deque = field(default_factory=lambda: deque(maxlen=32))
    rng: np.random.Generator | None = None


@dataclass
class MultiplicativeState:
    """Weight-space counterpart of OptimizerState (strictly positive weights)."""

    weights: np.ndarray
    iteration: int = 0
    loss_history: deque = field(default_factory=lambda: deque(maxlen=32))
    rng: np.random.Generator | None = None


def init_state(theta0, rng: np.random.Generator | None = None,
               loss: LossFunction | None = None,
               noise_cfg: NoiseConfig | None = None,
               sample: SupervisedSample | None = None,
               memory: int = 32) -> OptimizerState:
    """Build a start state with theta_prev = theta0.

    When a loss and noise config are given, the realized-loss history is
    seeded with one evaluation at theta0 + U for a fresh uniform offset U,
    so the 'previous' baseline is defined from the first step.
    """
    theta0 = as_vector(theta0, "theta0").copy()
    state = OptimizerState(theta=theta0, theta_prev=theta0.copy(),
                           loss_history=deque(maxlen=memory), rng=rng)
    if loss is not None and noise_cfg is not None:
        if rng is None:
            raise ValueError("seeding the loss history requires an rng")
        u = rng.uniform(-noise_cfg.half_interval, noise_cfg.half_interval, size=theta0.shape[0])
        state.loss_history.append(loss.evaluate(theta0 + u, sample))
    return state


def init_multiplicative_state(weights0, rng: np.random.Generator | None = None,
                              loss: LossFunction | None = None,
                              noise_cfg: NoiseConfig | None = None,
                              sample: SupervisedSample | None = None,
                              memory: int = 32) -> MultiplicativeState:
    """Weight-space analogue of init_state; history seeded at w0 * e^U."""
    weights0 = as_vector(weights0, "weights0").copy()
    if np.any(weights0 <= 0):
        raise ValueError("weights must be strictly positive")
    state = MultiplicativeState(weights=weights0, loss_history=deque(maxlen=memory), rng=rng)
    if loss is not None and noise_cfg is not None:
        if rng is None:
            raise ValueError("seeding the loss history requires an rng")
        u = rng.uniform(-noise_cfg.half_interval, noise_cfg.half_interval, size=weights0.shape[0])
        state.loss_history.append(loss.evaluate(weights0 * np.exp(u), sample))
    return state


def gd_step(state: OptimizerState, loss: LossFunction,
            schedule: LearningRateSchedule,
            sample: SupervisedSample | None = None) -> OptimizerState:
    """Plain gradient descent, falling back to central differences."""
    k = state.iteration + 1
    try:
        grad = loss.gradient(state.theta, sample)
    except NotImplementedError:
        grad = finite_diff_gradient(loss, state.theta, sample=sample)
    state.theta_prev = state.theta
    state.theta = state.theta - schedule.rate(k) * grad
    state.iteration = k
    return state


def one_point_step(state: OptimizerState, loss: LossFunction,
                   schedule: LearningRateSchedule, gauss: GaussianNoiseConfig,
                   sample: SupervisedSample | None = None,
                   noise: np.ndarray | None = None) -> OptimizerState:
    """Single-evaluation Gaussian zero-order step.

    Draws xi ~ N(0, sigma2 I) and moves against beta * L(theta + xi) * xi.
    In expectation that product equals sigma2 * beta times the smoothed
    gradient, so subtracting it descends; the raw product is extremely
    noisy, with per-coordinate variance growing quadratically in the
    dimension for quadratic losses. ``noise`` forces the perturbation for
    deterministic tests.
    """
    k = state.iteration + 1
    if noise is None:
        xi = state.rng.normal(0.0, math.sqrt(gauss.sigma2), size=state.theta.shape[0])
    else:
        xi = np.asarray(noise, dtype=np.float64)
    perturbed = loss.evaluate(state.theta + xi, sample)
    state.theta_prev = state.theta
    state.theta = state.theta - schedule.rate(k) * gauss.beta * perturbed * xi
    state.iteration = k
    return state


def stdp_zo_step(state: OptimizerState, loss: LossFunction,
                 schedule: LearningRateSchedule, noise_cfg: NoiseConfig,
                 strategy: AnticipatedLossStrategy,
                 sample: SupervisedSample | None = None,
                 noise: np.ndarray | None = None) -> OptimizerState:
    """Spike-timing zero-order step in log-weight coordinates.

    Draws U uniform on [-A, A]^d, evaluates the loss at theta + U, and
    moves along (loss - baseline) * (e^{-U} - e^{U}). The realized
    perturbed loss is appended to the history that feeds the baseline.
    ``noise`` forces U for deterministic tests.
    """
    k = state.iteration + 1
    a = noise_cfg.half_interval
    if noise is None:
        u = state.rng.uniform(-a, a, size=state.theta.shape[0])
    else:
        u = np.asarray(noise, dtype=np.float64)
    baseline = anticipated_loss(state.loss_history, strategy)
    realized = loss.evaluate(state.theta + u, sample)
    delta = realized - baseline
    state.theta_prev = state.theta
    state.theta = state.theta + schedule.rate(k) * delta * (np.exp(-u) - np.exp(u))
    state.loss_history.append(realized)
    state.iteration = k
    return state


def stdp_multiplicative_step(state: MultiplicativeState, loss: LossFunction,
                             schedule: LearningRateSchedule, noise_cfg: NoiseConfig,
                             strategy: AnticipatedLossStrategy,
                             sample: SupervisedSample | None = None,
                             noise: np.ndarray | None = None,
                             clamp: bool = False,
                             clamp_floor: float = 1e-8) -> MultiplicativeState:
    """Spike-timing step applied multiplicatively to positive weights.

    The loss is evaluated at w * e^U and each weight is scaled by
    1 + alpha * (loss - baseline) * (e^{-U_j} - e^{U_j}). A multiplier
    <= 0 would break positivity; by default that raises PositivityError
    so misconfigured step sizes are not silently masked, and with
    ``clamp=True`` the multiplier is floored at ``clamp_floor`` instead.
    """
    k = state.iteration + 1
    a = noise_cfg.half_interval
    if noise is None:
        u = state.rng.uniform(-a, a, size=state.weights.shape[0])
    else:
        u = np.asarray(noise, dtype=np.float64)
    baseline = anticipated_loss(state.loss_history, strategy)
    realized = loss.evaluate(state.weights * np.exp(u), sample)
    delta = realized - baseline
    multiplier = 1.0 + schedule.rate(k) * delta * (np.exp(-u) - np.exp(u))
    bad = multiplier <= 0.0
    if np.any(bad):
        if not clamp:
            idx = int(np.argmax(bad))
            raise PositivityError(
                f"update multiplier {multiplier[idx]:g} at index {idx} "
                "would violate weight positivity"
            )
        multiplier = np.maximum(multiplier, clamp_floor)
    state.weights = state.weights * multiplier
    state.loss_history.append(realized)
    state.iteration = k
    return state


# ---------------------------------------------------------------------------
# experiment runner


METHODS = ("gd", "one-point", "stdp-zo", "stdp-mult")
# fixed ids keep noise substreams stable when the method subset changes
_METHOD_IDS = {name: i for i, name in enumerate(METHODS)}
_SUB_INIT, _SUB_DATA, _SUB_NOISE = 0, 1, 2


@dataclass(frozen=True)
class RunConfig:
    """Everything a reproducible optimizer run needs except the loss."""

    method: str
    dim: int
    iterations: int
    schedule: LearningRateSchedule
    strategy: AnticipatedLossStrategy = AnticipatedLossStrategy("previous")
    noise: NoiseConfig | None = None
    gaussian: GaussianNoiseConfig | None = None
    theta0: np.ndarray | None = None
    memory: int = 32
    record_theta: bool = False
    clamp: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.dim < 1:
            raise ValueError("dim must be at least 1")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.method in ("stdp-zo", "stdp-mult") and self.noise is None:
            raise ValueError(f"method {self.method!r} requires a noise config")
        if self.method == "one-point" and self.gaussian is None:
            raise ValueError("method 'one-point' requires a gaussian config")
        if self.theta0 is not None:
            theta0 = as_vector(self.theta0, "theta0")
            if theta0.shape[0] != self.dim:
                raise ValueError("theta0 length does not match dim")
            object.__setattr__(self, "theta0", theta0)


@dataclass(frozen=True)
class TraceRow:
    method: str
    replicate: int
    iteration: int
    loss: float
    theta_norm: float
    theta: np.ndarray | None = None


@dataclass
class ReplicateTrace:
    """Per-replicate trajectory with its clean starting point."""

    method: str
    replicate: int
    initial_loss: float
    initial_norm: float
    rows: list
    diverged_at: int | None = None

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.rows])


def _record(value: float) -> float:
    # non-finite iterates have left the finite regime; report as +inf
    v = float(value)
    return v if math.isfinite(v) else math.inf


def run_replicate(loss, config, base, replicate: int,
                  stream: DataStream | None = None) -> ReplicateTrace:
    """Run one replicate of one method; see run_optimizer for the contract."""
    n = config.iterations
    gen_noise = base.substream(_SUB_NOISE, _METHOD_IDS[config.method], replicate).generator()

    if config.theta0 is not None:
        theta0 = config.theta0.copy()
    else:
        theta0 = base.substream(_SUB_INIT, replicate).generator().standard_normal(config.dim)

    if stream is not None:
        gen_data = base.substream(_SUB_DATA, replicate).generator()
        samples = generate_stream(stream, n + 1, gen_data)
    else:
        samples = [None] * (n + 1)

    multiplicative = config.method == "stdp-mult"
    if multiplicative:
        weights0 = np.exp(theta0)
        state = init_multiplicative_state(weights0, rng=gen_noise, loss=loss,
                                          noise_cfg=config.noise, sample=samples[0],
                                          memory=config.memory)
        initial_point = weights0
    else:
        seed_history = config.method == "stdp-zo"
        state = init_state(theta0, rng=gen_noise,
                           loss=loss if seed_history else None,
                           noise_cfg=config.noise if seed_history else None,
                           sample=samples[0], memory=config.memory)
        initial_point = theta0

    trace = ReplicateTrace(
        method=config.method, replicate=replicate,
        initial_loss=_record(loss.evaluate(initial_point, samples[0])),
        initial_norm=_record(np.linalg.norm(theta0)),
        rows=[],
    )

    # divergence to inf is an expected outcome here, not a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        _iterate(loss, config, replicate, state, samples, trace)
    return trace


def _iterate(loss, config, replicate, state, samples, trace):
    n = config.iterations
    multiplicative = config.method == "stdp-mult"
    for k in range(1, n + 1):
        sample = samples[k]
        try:
            if config.method == "gd":
                gd_step(state, loss, config.schedule, sample)
            elif config.method == "one-point":
                one_point_step(state, loss, config.schedule, config.gaussian, sample)
            elif config.method == "stdp-zo":
                stdp_zo_step(state, loss, config.schedule, config.noise,
                             config.strategy, sample)
            else:
                stdp_multiplicative_step(state, loss, config.schedule, config.noise,
                                         config.strategy, sample, clamp=config.clamp)
        except PositivityError as exc:
            raise OptimizerStepError(f"iteration {k}: {exc}", iteration=k,
                                     partial=[trace]) from exc

        point = state.weights if multiplicative else state.theta
        log_point = np.log(point) if multiplicative else point
        if not np.all(np.isfinite(point)):
            trace.diverged_at = k
            for pad in range(k, n + 1):
                trace.rows.append(TraceRow(config.method, replicate, pad,
                                           math.inf, math.inf))
            break
        trace.rows.append(TraceRow(
            config.method, replicate, k,
            _record(loss.evaluate(point, sample)),
            _record(np.linalg.norm(log_point)),
            theta=log_point.copy() if config.record_theta else None,
        ))


def run_optimizer(loss: LossFunction, config: RunConfig, base,
                  replicates: int = 1,
                  stream: DataStream | None = None) -> list[ReplicateTrace]:
    """Run ``replicates`` independent trajectories of one method.

    ``base`` is the RngStream whose substreams supply initialization, data,
    and method noise. The initialization and data substreams depend only on
    (seed, replicate), so different methods run from the same starting
    point and see the same sample sequence; method noise gets its own
    substream. Iterate divergence to non-finite values ends the trajectory
    and the remaining rows are recorded with infinite loss.

    For 'stdp-mult' the trace's theta_norm column holds the norm of
    log(weights), the quantity comparable across parametrizations.
    """
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    return [run_replicate(loss, config, base, r, stream) for r in range(replicates)]
