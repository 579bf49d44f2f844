"""Oracle-backed checks of the expectation identities behind the update rules.

Each check pits a Monte Carlo estimate against an independent ground truth
(closed form, adaptive quadrature, or a second estimator route) and returns
a CheckReport. The identities covered:

* the Gaussian one-point product L(theta + xi) xi has mean
  sigma^2 E[grad L(theta + xi)]  (Stein's identity);
* the mean spike-timing step equals a smoothed gradient-descent step,
  E[step] = -alpha e^{-A} E[grad L(theta + U) (e^A - e^U)(e^A - e^{-U})],
  verified three ways: raw-step Monte Carlo, gradient-form Monte Carlo,
  and deterministic quadrature;
* the componentwise form of the same identity, where coordinate j of the
  mean step is -alpha e^{-A} C(A)/(2A) times the mean of the j-th partial
  derivative under the boundary-vanishing density f_A in coordinate j
  (the uniform density 1/(2A) of U_j is what contributes the 1/(2A));
* the anticipated-loss baseline is mean-zero against the fresh noise
  factor e^{-U} - e^{U};
* the per-coordinate variance of the one-point estimator grows roughly
  quadratically with dimension;
* the shipped divergence fixture, on which the one-point dynamics blows up
  while gradient descent from the same start converges.

Every check is a pure function of (seed, configuration), so reports are
bitwise reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .core import LearningRateSchedule, RngStream
from .losses import LeastSquaresLoss, LossFunction, finite_diff_gradient
from .optimizers import GaussianNoiseConfig, RunConfig, run_optimizer
from .perturbation import PerturbationDensity, normalizer_c

__all__ = [
    "CheckReport",
    "check_normalizer",
    "check_density_mass",
    "check_density_sampler",
    "check_stein",
    "check_mean_step",
    "check_componentwise",
    "check_zero_mean_prev",
    "variance_scaling_sweep",
    "check_variance_scaling",
    "DIVERGENCE_FIXTURE",
    "divergence_demo",
    "DEFAULT_HALF_INTERVALS",
]

DEFAULT_HALF_INTERVALS = (0.1, 0.5, 1.0, 2.0)


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (float, np.floating)):
        f = float(value)
        return f if math.isfinite(f) else repr(f)
    if isinstance(value, (int, np.integer)):
        return int(value)
    return value


@dataclass
class CheckReport:
    """Outcome of one verification check."""

    name: str
    n: int
    seed: int
    estimate: object
    oracle: object
    se: object
    rel_err: float | None
    passed: bool
    extra: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": int(self.n),
            "seed": int(self.seed),
            "estimate": _jsonable(self.estimate),
            "oracle": _jsonable(self.oracle),
            "se": _jsonable(self.se),
            "rel_err": _jsonable(self.rel_err),
            "pass": bool(self.passed),
        }


def _mean_se(values: np.ndarray):
    """Columnwise mean and standard error of a (n, d) sample matrix."""
    n = values.shape[0]
    mean = values.mean(axis=0)
    se = values.std(axis=0, ddof=1) / math.sqrt(n)
    return mean, se


def _max_rel_err(estimate, oracle) -> float | None:
    estimate = np.atleast_1d(np.asarray(estimate, dtype=float))
    oracle = np.atleast_1d(np.asarray(oracle, dtype=float))
    nz = oracle != 0
    if not np.any(nz):
        return None
    return float(np.max(np.abs(estimate[nz] - oracle[nz]) / np.abs(oracle[nz])))


def _unnormalized_density(x, a):
    return (math.exp(a) - np.exp(x)) * (math.exp(a) - np.exp(-x))


# ---------------------------------------------------------------------------
# normalizer and density


def check_normalizer(half_intervals=DEFAULT_HALF_INTERVALS, rel_tol: float = 1e-9,
                     seed: int = 0) -> CheckReport:
    """Closed-form normalizer vs adaptive quadrature on a grid of A."""
    closed = [normalizer_c(a) for a in half_intervals]
    quad = []
    for a in half_intervals:
        q, _ = integrate.quad(_unnormalized_density, -a, a, args=(a,),
                              epsabs=1e-12, epsrel=1e-12)
        quad.append(q)
    rel = _max_rel_err(closed, quad)
    return CheckReport(
        name="normalizer", n=len(half_intervals), seed=seed,
        estimate=closed, oracle=quad, se=[0.0] * len(closed),
        rel_err=rel, passed=rel is not None and rel <= rel_tol,
        extra={"half_intervals": list(half_intervals)},
    )


def check_density_mass(half_intervals=DEFAULT_HALF_INTERVALS, tol: float = 1e-9,
                       seed: int = 0) -> CheckReport:
    """The normalized density integrates to one on every A in the grid."""
    masses = []
    for a in half_intervals:
        pd = PerturbationDensity(a)
        q, _ = integrate.quad(pd.density, -a, a, epsabs=1e-12, epsrel=1e-12)
        masses.append(q)
    err = float(np.max(np.abs(np.asarray(masses) - 1.0)))
    return CheckReport(
        name="density-mass", n=len(half_intervals), seed=seed,
        estimate=masses, oracle=[1.0] * len(masses), se=[0.0] * len(masses),
        rel_err=err, passed=err <= tol,
        extra={"half_intervals": list(half_intervals)},
    )


def check_density_sampler(rng: RngStream, half_intervals=DEFAULT_HALF_INTERVALS,
                          n: int = 100_000, bins: int = 20,
                          significance: float = 1e-3) -> CheckReport:
    """Chi-square goodness of fit of the rejection sampler.

    Bin probabilities come from quadrature of the density over equal-width
    bins, independent of the sampler.
    """
    threshold = float(stats.chi2.ppf(1.0 - significance, bins - 1))
    statistics = []
    for idx, a in enumerate(half_intervals):
        pd = PerturbationDensity(a)
        gen = rng.substream(idx).generator()
        draws = pd.sample(gen, size=n)
        edges = np.linspace(-a, a, bins + 1)
        observed, _ = np.histogram(draws, bins=edges)
        expected = np.empty(bins)
        for b in range(bins):
            q, _ = integrate.quad(pd.density, edges[b], edges[b + 1],
                                  epsabs=1e-12, epsrel=1e-12)
            expected[b] = n * q
        statistics.append(float(np.sum((observed - expected) ** 2 / expected)))
    return CheckReport(
        name="density-sampler", n=n, seed=rng.seed,
        estimate=statistics, oracle=[threshold] * len(statistics),
        se=[0.0] * len(statistics), rel_err=None,
        passed=bool(all(s <= threshold for s in statistics)),
        extra={"half_intervals": list(half_intervals), "bins": bins,
               "significance": significance},
    )


# ---------------------------------------------------------------------------
# Stein identity


def check_stein(theta, target, sigma2: float, n: int, rng: RngStream,
                rel_tol: float = 0.05) -> CheckReport:
    """Monte Carlo mean of L(theta + xi) xi vs the closed form -2 sigma2 (y - theta).

    A coordinate passes when it matches its oracle within ``rel_tol``
    relative or sits within three standard errors of it; the second clause
    is what carries coordinates whose oracle is zero or small against the
    estimator noise.
    """
    if n < 10_000:
        raise ValueError("check_stein needs n >= 10000")
    theta = np.asarray(theta, dtype=np.float64)
    loss = LeastSquaresLoss(target)
    d = theta.shape[0]
    gen = rng.generator()
    xi = gen.normal(0.0, math.sqrt(sigma2), size=(n, d))
    values = loss.evaluate_many(theta[None, :] + xi)[:, None] * xi
    estimate, se = _mean_se(values)
    oracle = -2.0 * sigma2 * (loss.target - theta)
    ok = True
    for j in range(d):
        gap = abs(estimate[j] - oracle[j])
        banded = gap <= 3.0 * se[j]
        relative = oracle[j] != 0.0 and gap <= rel_tol * abs(oracle[j])
        ok = ok and (banded or relative)
    return CheckReport(
        name="stein", n=n, seed=rng.seed,
        estimate=estimate, oracle=oracle, se=se,
        rel_err=_max_rel_err(estimate, oracle), passed=bool(ok),
        extra={"sigma2": sigma2},
    )


# ---------------------------------------------------------------------------
# mean-step identity


def _raw_step_mc(loss, theta, a, alpha, n, gen):
    """Monte Carlo mean of the zero-baseline step alpha L(theta+U)(e^-U - e^U)."""
    d = theta.shape[0]
    u = gen.uniform(-a, a, size=(n, d))
    values = alpha * loss.evaluate_many(theta[None, :] + u)[:, None] * (np.exp(-u) - np.exp(u))
    return _mean_se(values)


def _grad_form_mc(loss, theta, a, alpha, n, gen):
    """Monte Carlo mean of -alpha e^-A grad L(theta+U) (e^A - e^U)(e^A - e^-U)."""
    d = theta.shape[0]
    ea = math.exp(a)
    u = gen.uniform(-a, a, size=(n, d))
    grads = loss.gradient_many(theta[None, :] + u)
    eu = np.exp(u)
    values = -alpha * math.exp(-a) * grads * (ea - eu) * (ea - 1.0 / eu)
    return _mean_se(values)


def _partial_derivative(loss, point, j):
    try:
        return float(loss.gradient(point)[j])
    except NotImplementedError:
        return float(finite_diff_gradient(loss, point)[j])


def _mean_step_quadrature(loss, theta, a, alpha):
    """Deterministic per-coordinate quadrature of the gradient form, d <= 3."""
    d = theta.shape[0]
    if d > 3:
        raise ValueError("quadrature oracle is limited to d <= 3")
    ea = math.exp(a)
    volume = (2.0 * a) ** d
    ranges = [(-a, a)] * d
    out = np.empty(d)
    for j in range(d):
        def integrand(*u, _j=j):
            point = theta + np.asarray(u)
            weight = (ea - math.exp(u[_j])) * (ea - math.exp(-u[_j]))
            return _partial_derivative(loss, point, _j) * weight

        if d == 1:
            val, _ = integrate.quad(integrand, -a, a, epsabs=1e-11, epsrel=1e-11)
        else:
            val, _ = integrate.nquad(integrand, ranges,
                                     opts={"epsabs": 1e-9, "epsrel": 1e-9})
        out[j] = -alpha * math.exp(-a) * val / volume
    return out


def check_mean_step(loss: LossFunction, theta, half_interval: float, alpha: float,
                   n: int, rng: RngStream, quadrature: bool | None = None,
                   rel_tol: float = 0.02) -> CheckReport:
    """Three-way agreement of the mean spike-timing step.

    Routes: (a) raw-step Monte Carlo with a zero baseline, (b) Monte Carlo
    of the smoothed-gradient form, (c) per-coordinate adaptive quadrature
    of (b) for d <= 3. Every available pair must agree per coordinate
    within three combined standard errors, or within ``rel_tol`` relative
    where the reference value is nonzero.
    """
    theta = np.asarray(theta, dtype=np.float64)
    a = float(half_interval)
    d = theta.shape[0]
    if quadrature is None:
        quadrature = d <= 3
    raw_mean, raw_se = _raw_step_mc(loss, theta, a, alpha, n, rng.substream(0).generator())
    grad_mean, grad_se = _grad_form_mc(loss, theta, a, alpha, n, rng.substream(1).generator())
    quad = _mean_step_quadrature(loss, theta, a, alpha) if quadrature else None

    reference = quad if quad is not None else grad_mean
    routes = [(raw_mean, raw_se), (grad_mean, grad_se)]
    if quad is not None:
        routes.append((quad, np.zeros(d)))
    ok = True
    for i in range(len(routes)):
        for k in range(i + 1, len(routes)):
            xm, xs = routes[i]
            ym, ys = routes[k]
            for j in range(d):
                gap = abs(xm[j] - ym[j])
                banded = gap <= 3.0 * math.sqrt(xs[j] ** 2 + ys[j] ** 2)
                relative = reference[j] != 0 and gap <= rel_tol * abs(reference[j])
                ok = ok and (banded or relative)
    return CheckReport(
        name="mean-step", n=n, seed=rng.seed,
        estimate=raw_mean, oracle=reference, se=raw_se,
        rel_err=_max_rel_err(raw_mean, reference), passed=bool(ok),
        extra={"raw_mean": raw_mean, "raw_se": raw_se,
               "grad_mean": grad_mean, "grad_se": grad_se,
               "quadrature": quad, "half_interval": a, "alpha": alpha},
    )


def check_componentwise(loss: LossFunction, theta, half_interval: float,
                        alpha: float, n: int, rng: RngStream) -> CheckReport:
    """Componentwise form of the mean-step identity.

    Coordinate j of the mean step is estimated as
    -alpha e^{-A} C(A)/(2A) times the Monte Carlo mean of the j-th partial
    derivative at theta + U, where U_j follows the boundary-vanishing
    density f_A and the other coordinates stay uniform. The estimate must
    match the raw-step route per coordinate within three combined standard
    errors.
    """
    theta = np.asarray(theta, dtype=np.float64)
    a = float(half_interval)
    d = theta.shape[0]
    if d > 10:
        raise ValueError("check_componentwise is limited to d <= 10")
    pd = PerturbationDensity(a)
    prefactor = -alpha * math.exp(-a) * pd.normalizer / (2.0 * a)
    estimate = np.empty(d)
    se = np.empty(d)
    for j in range(d):
        gen = rng.substream(0, j).generator()
        u = gen.uniform(-a, a, size=(n, d))
        u[:, j] = pd.sample(gen, size=n)
        partials = loss.gradient_many(theta[None, :] + u)[:, j]
        estimate[j] = prefactor * partials.mean()
        se[j] = abs(prefactor) * partials.std(ddof=1) / math.sqrt(n)
    oracle, oracle_se = _raw_step_mc(loss, theta, a, alpha, n, rng.substream(1).generator())
    combined = np.sqrt(se ** 2 + oracle_se ** 2)
    ok = bool(np.all(np.abs(estimate - oracle) <= 3.0 * combined))
    return CheckReport(
        name="componentwise", n=n, seed=rng.seed,
        estimate=estimate, oracle=oracle, se=combined,
        rel_err=_max_rel_err(estimate, oracle), passed=ok,
        extra={"half_interval": a, "alpha": alpha, "oracle_se": oracle_se},
    )


def check_zero_mean_prev(loss: LossFunction, theta_prev, half_interval: float,
                         n: int, rng: RngStream) -> CheckReport:
    """The baseline term is mean-zero against fresh noise.

    E[L(theta_prev + U') (e^{-U} - e^{U})] = 0 for independent U', U: the
    loss factor is independent of U and e^{-U}, e^{U} share a distribution.
    """
    if n < 10_000:
        raise ValueError("check_zero_mean_prev needs n >= 10000")
    theta_prev = np.asarray(theta_prev, dtype=np.float64)
    a = float(half_interval)
    d = theta_prev.shape[0]
    gen = rng.generator()
    u_prev = gen.uniform(-a, a, size=(n, d))
    u = gen.uniform(-a, a, size=(n, d))
    values = loss.evaluate_many(theta_prev[None, :] + u_prev)[:, None] * (np.exp(-u) - np.exp(u))
    estimate, se = _mean_se(values)
    ok = bool(np.all(np.abs(estimate) <= 3.0 * se))
    return CheckReport(
        name="zero-mean-prev", n=n, seed=rng.seed,
        estimate=estimate, oracle=np.zeros(d), se=se,
        rel_err=None, passed=ok, extra={"half_interval": a},
    )


# ---------------------------------------------------------------------------
# variance scaling


def variance_scaling_sweep(dims, sigma2: float, n: int, rng: RngStream,
                           delta: float = 1.0):
    """Per-coordinate variance of the scaled one-point product across dims.

    For the squared-distance loss with a constant per-coordinate gap
    ``delta``, estimates Var of coordinate 0 of L(theta + xi) xi / sigma2
    at each dimension and fits a log-log slope. Returns
    (rows, slope, slope_se) with rows of (dim, variance, variance_se);
    slope is None when fewer than two dimensions are given.
    """
    dims = [int(d) for d in dims]
    if any(d < 1 for d in dims):
        raise ValueError("dims must be positive")
    rows = []
    sd = math.sqrt(sigma2)
    for idx, d in enumerate(dims):
        gen = rng.substream(idx).generator()
        gap = np.full(d, delta)
        values = np.empty(n)
        filled = 0
        chunk_rows = max(1, 4_000_000 // d)
        while filled < n:
            m = min(chunk_rows, n - filled)
            xi = gen.normal(0.0, sd, size=(m, d))
            residual = gap - xi
            loss_vals = np.einsum("ij,ij->i", residual, residual)
            values[filled:filled + m] = loss_vals * xi[:, 0] / sigma2
            filled += m
        var = float(values.var(ddof=1))
        centered = values - values.mean()
        m4 = float(np.mean(centered ** 4))
        var_se = math.sqrt(max(m4 - var ** 2, 0.0) / n)
        rows.append((d, var, var_se))
    if len(dims) < 2:
        return rows, None, None
    logs_d = np.log([r[0] for r in rows])
    logs_v = np.log([r[1] for r in rows])
    slope, intercept = np.polyfit(logs_d, logs_v, 1)
    if len(dims) > 2:
        residuals = logs_v - (slope * logs_d + intercept)
        sxx = float(np.sum((logs_d - logs_d.mean()) ** 2))
        slope_se = math.sqrt(float(residuals @ residuals) / (len(dims) - 2) / sxx)
    else:
        slope_se = 0.0
    return rows, float(slope), slope_se


def check_variance_scaling(dims, sigma2: float, n: int, rng: RngStream,
                           delta: float = 1.0,
                           band=(1.7, 2.3)) -> CheckReport:
    """Fitted log-log slope of the variance sweep must land in ``band``."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or max(dims) < 10 * min(dims):
        raise ValueError("variance scaling check needs dims spanning at least a decade")
    rows, slope, slope_se = variance_scaling_sweep(dims, sigma2, n, rng, delta)
    ok = band[0] <= slope <= band[1]
    return CheckReport(
        name="variance-scaling", n=n, seed=rng.seed,
        estimate=slope, oracle=2.0, se=slope_se,
        rel_err=abs(slope - 2.0) / 2.0, passed=bool(ok),
        extra={"rows": rows, "band": tuple(band), "dims": list(dims)},
    )


# ---------------------------------------------------------------------------
# divergence fixture

# Pinned instance on which the one-point dynamics blows up while gradient
# descent from the same start converges: a far-initialized squared-distance
# problem in d=100 where the first perturbed-loss kick already overshoots.
DIVERGENCE_FIXTURE = {
    "dim": 100,
    "theta0_fill": 10.0,
    "alpha": 0.25,
    "sigma2": 1.0,
    "iterations": 200,
    "seed": 20240711,
    "ratio_up": 10.0,
    "ratio_down": 0.1,
}


def divergence_demo(fixture: dict | None = None):
    """Run the pinned divergence instance; returns (report, traces by method).

    Passes when the one-point loss at the final iteration exceeds
    ratio_up times its initial loss while gradient descent has dropped
    below ratio_down times the same initial loss.
    """
    fx = dict(DIVERGENCE_FIXTURE)
    if fixture:
        fx.update(fixture)
    d = fx["dim"]
    loss = LeastSquaresLoss(np.zeros(d))
    theta0 = np.full(d, float(fx["theta0_fill"]))
    schedule = LearningRateSchedule.constant(fx["alpha"])
    base = RngStream(fx["seed"])
    traces = {}
    for method in ("one-point", "gd"):
        config = RunConfig(
            method=method, dim=d, iterations=fx["iterations"], schedule=schedule,
            gaussian=GaussianNoiseConfig(fx["sigma2"]) if method == "one-point" else None,
            theta0=theta0,
        )
        traces[method] = run_optimizer(loss, config, base)[0]
    initial = traces["one-point"].initial_loss
    final_zo = traces["one-point"].rows[-1].loss
    final_gd = traces["gd"].rows[-1].loss
    ratio_zo = final_zo / initial
    ratio_gd = final_gd / initial
    ok = ratio_zo > fx["ratio_up"] and ratio_gd < fx["ratio_down"]
    report = CheckReport(
        name="divergence", n=fx["iterations"], seed=fx["seed"],
        estimate=[ratio_zo, ratio_gd],
        oracle=[fx["ratio_up"], fx["ratio_down"]],
        se=[0.0, 0.0], rel_err=None, passed=bool(ok),
        extra={"fixture": fx},
    )
    return report, traces
