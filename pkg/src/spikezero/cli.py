"""Command-line front end.

Four subcommands driven by JSON configs: ``verify`` runs the oracle checks
and writes a JSON report, ``optimize`` compares optimizers and writes a CSV
trace, ``sweep`` measures the dimension scaling of the one-point estimator
variance, and ``spike-demo`` runs the spiking simulator with plasticity.
All outputs are deterministic functions of (config, seed). Exit codes:
0 success, 1 runtime or check failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .core import LearningRateSchedule, RngStream
from .losses import DataStream, LeastSquaresLoss, LinearModelLoss, PowerLoss
from .optimizers import (
    METHODS,
    AnticipatedLossStrategy,
    GaussianNoiseConfig,
    OptimizerStepError,
    RunConfig,
    run_replicate,
)
from .perturbation import NoiseConfig
from .spiking import KernelParams, load_topology, run_trial, stdp_update
from .verification import (
    DEFAULT_HALF_INTERVALS,
    check_componentwise,
    check_density_mass,
    check_density_sampler,
    check_normalizer,
    check_stein,
    check_mean_step,
    check_variance_scaling,
    check_zero_mean_prev,
    divergence_demo,
    variance_scaling_sweep,
)

__all__ = ["main", "ConfigError"]


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def _load_config(path: str | None, default: dict | None = None) -> tuple[dict, Path | None]:
    if path is None:
        if default is None:
            raise ConfigError("a config file is required (--config)")
        return dict(default), None
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc, p.parent


def _check_keys(doc: dict, allowed, where: str):
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown field {key!r} in {where}")


def _vector(spec, dim: int, what: str) -> np.ndarray:
    """A config vector: either an explicit list or {"fill": value}."""
    if isinstance(spec, dict):
        _check_keys(spec, {"fill"}, what)
        if "fill" not in spec:
            raise ConfigError(f"{what} needs 'fill' or an explicit list")
        return np.full(dim, float(spec["fill"]))
    arr = np.asarray(spec, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise ConfigError(f"{what} must be a list of length {dim}")
    return arr


def _positive(doc: dict, key: str, where: str, default=None) -> float:
    value = doc.get(key, default)
    if value is None:
        raise ConfigError(f"missing field {key!r} in {where}")
    value = float(value)
    if not value > 0:
        raise ConfigError(f"{key} must be positive")
    return value


def _build_schedule(doc) -> LearningRateSchedule:
    if not isinstance(doc, dict):
        raise ConfigError("schedule must be an object")
    _check_keys(doc, {"kind", "alpha0", "power"}, "schedule")
    kind = doc.get("kind", "constant")
    if "alpha0" not in doc:
        raise ConfigError("missing field 'alpha0' in schedule")
    alpha0 = float(doc["alpha0"])
    try:
        if kind == "constant":
            return LearningRateSchedule.constant(alpha0)
        if kind == "power":
            return LearningRateSchedule.power_decay(alpha0, float(doc.get("power", 1.0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown schedule kind {kind!r}")


def _build_strategy(doc) -> AnticipatedLossStrategy:
    if doc is None:
        return AnticipatedLossStrategy("previous")
    if not isinstance(doc, dict):
        raise ConfigError("strategy must be an object")
    _check_keys(doc, {"kind", "memory", "decay"}, "strategy")
    try:
        return AnticipatedLossStrategy(
            kind=doc.get("kind", "previous"),
            memory=int(doc.get("memory", 32)),
            decay=doc.get("decay"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_loss(doc, dim: int):
    if not isinstance(doc, dict):
        raise ConfigError("loss must be an object")
    kind = doc.get("kind")
    if kind == "least-squares":
        _check_keys(doc, {"kind", "target"}, "loss")
        target = _vector(doc.get("target", {"fill": 0.0}), dim, "loss.target")
        return LeastSquaresLoss(target), None
    if kind == "power":
        _check_keys(doc, {"kind", "power", "target"}, "loss")
        target = _vector(doc.get("target", {"fill": 0.0}), dim, "loss.target")
        return PowerLoss(int(doc.get("power", 4)), target=target), None
    if kind == "linear-gaussian":
        _check_keys(doc, {"kind", "theta_star", "noise_sd"}, "loss")
        theta_star = _vector(doc.get("theta_star", {"fill": 1.0}), dim, "loss.theta_star")
        noise_sd = float(doc.get("noise_sd", 0.0))
        if noise_sd < 0:
            raise ConfigError("noise_sd must be nonnegative")
        stream = DataStream("linear-gaussian", theta_star=theta_star, noise_sd=noise_sd)
        return LinearModelLoss(), stream
    raise ConfigError(f"unknown loss kind {kind!r}")


def _format_float(x: float) -> str:
    return repr(float(x))


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# verify


_CHECK_NAMES = (
    "normalizer",
    "density-mass",
    "density-sampler",
    "stein",
    "stein-zero",
    "mean-step",
    "mean-step-quartic",
    "componentwise",
    "zero-mean-prev",
    "zero-mean-prev-quartic",
    "variance-scaling",
    "divergence",
)

_DEFAULT_SAMPLES = {
    "density-sampler": 100_000,
    "stein": 1_000_000,
    "stein-zero": 1_000_000,
    "mean-step": 1_000_000,
    "mean-step-quartic": 1_000_000,
    "componentwise": 1_000_000,
    "zero-mean-prev": 1_000_000,
    "zero-mean-prev-quartic": 1_000_000,
    "variance-scaling": 100_000,
}

_VERIFY_DEFAULTS = {"checks": list(_CHECK_NAMES), "seed": 1, "half_interval": 1.0,
                    "out": "verify_report.json", "samples": {}}


def _run_check(name: str, seed: int, half_interval: float, n: int | None):
    rng = RngStream(seed).substream(_CHECK_NAMES.index(name))
    n = n if n is not None else _DEFAULT_SAMPLES.get(name)
    if name == "normalizer":
        return check_normalizer(DEFAULT_HALF_INTERVALS, seed=seed)
    if name == "density-mass":
        return check_density_mass(DEFAULT_HALF_INTERVALS, seed=seed)
    if name == "density-sampler":
        return check_density_sampler(rng, DEFAULT_HALF_INTERVALS, n=n)
    if name == "stein":
        return check_stein(np.zeros(5), np.ones(5), sigma2=1.0, n=n, rng=rng)
    if name == "stein-zero":
        rep = check_stein(np.ones(5), np.ones(5), sigma2=1.0, n=n, rng=rng)
        rep.name = "stein-zero"
        return rep
    if name == "mean-step":
        loss = LeastSquaresLoss([1.0])
        rep = check_mean_step(loss, [0.0], half_interval, alpha=1.0, n=n, rng=rng)
        return rep
    if name == "mean-step-quartic":
        loss = PowerLoss(4, dim=1)
        rep = check_mean_step(loss, [1.0], half_interval, alpha=1.0, n=n, rng=rng)
        rep.name = "mean-step-quartic"
        return rep
    if name == "componentwise":
        loss = LeastSquaresLoss([1.0, -0.5, 2.0])
        return check_componentwise(loss, np.zeros(3), half_interval, alpha=1.0, n=n, rng=rng)
    if name == "zero-mean-prev":
        loss = LeastSquaresLoss([1.0, 2.0])
        return check_zero_mean_prev(loss, [0.3, -0.2], half_interval, n=n, rng=rng)
    if name == "zero-mean-prev-quartic":
        loss = PowerLoss(4, dim=2)
        rep = check_zero_mean_prev(loss, [0.5, -1.0], half_interval, n=n, rng=rng)
        rep.name = "zero-mean-prev-quartic"
        return rep
    if name == "variance-scaling":
        return check_variance_scaling((10, 32, 100, 316, 1000), sigma2=1.0, n=n, rng=rng)
    if name == "divergence":
        report, _ = divergence_demo()
        return report
    raise ConfigError(f"unknown check {name!r}")


def cmd_verify(args) -> int:
    doc, _ = _load_config(args.config, default=_VERIFY_DEFAULTS)
    _check_keys(doc, set(_VERIFY_DEFAULTS), "verify config")
    seed = int(args.seed if args.seed is not None else doc.get("seed", 1))
    out = Path(args.out if args.out is not None else doc.get("out", "verify_report.json"))
    half_interval = float(doc.get("half_interval", 1.0))
    if not half_interval > 0:
        raise ConfigError("half_interval must be positive")
    checks = doc.get("checks", list(_CHECK_NAMES))
    for name in checks:
        if name not in _CHECK_NAMES:
            raise ConfigError(f"unknown check {name!r} in field 'checks'")
    samples = doc.get("samples", {})
    if not isinstance(samples, dict):
        raise ConfigError("field 'samples' must map check names to sample counts")
    for name in samples:
        if name not in _CHECK_NAMES:
            raise ConfigError(f"unknown check {name!r} in field 'samples'")

    reports = []
    for name in checks:
        n = samples.get(name)
        reports.append(_run_check(name, seed, half_interval, int(n) if n is not None else None))
    payload = json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
    _write_text(out, payload)
    all_pass = all(r.passed for r in reports)
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}")
    return 0 if all_pass else 1


# ---------------------------------------------------------------------------
# optimize


_OPTIMIZE_KEYS = {"methods", "loss", "dim", "iterations", "replicates", "seed",
                  "schedule", "strategy", "half_interval", "sigma2", "beta",
                  "theta0", "memory", "clamp", "out"}


def _optimize_task(task):
    loss, config, base, replicate, stream = task
    return run_replicate(loss, config, base, replicate, stream)


def cmd_optimize(args) -> int:
    doc, _ = _load_config(args.config)
    _check_keys(doc, _OPTIMIZE_KEYS, "optimize config")
    seed = int(args.seed if args.seed is not None else doc.get("seed", 0))
    out = Path(args.out if args.out is not None else doc.get("out", "trace.csv"))
    dim = int(doc.get("dim", 0))
    if dim < 1:
        raise ConfigError("dim must be at least 1")
    iterations = int(doc.get("iterations", 0))
    if iterations < 0:
        raise ConfigError("iterations must be nonnegative")
    replicates = int(doc.get("replicates", 1))
    if replicates < 1:
        raise ConfigError("replicates must be at least 1")
    methods = doc.get("methods")
    if not methods:
        raise ConfigError("missing field 'methods' in optimize config")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r} in field 'methods'")
    loss, stream = _build_loss(doc.get("loss", {"kind": "least-squares"}), dim)
    schedule = _build_schedule(doc.get("schedule", {"kind": "constant", "alpha0": 0.1}))
    strategy = _build_strategy(doc.get("strategy"))
    theta0 = None
    if doc.get("theta0") is not None:
        theta0 = _vector(doc["theta0"], dim, "theta0")

    noise = None
    if any(m in ("stdp-zo", "stdp-mult") for m in methods):
        half = doc.get("half_interval", 1.0)
        if not float(half) > 0:
            raise ConfigError("half_interval must be positive")
        noise = NoiseConfig(float(half), dim)
    gaussian = None
    if "one-point" in methods:
        sigma2 = _positive(doc, "sigma2", "optimize config", default=1.0)
        beta = doc.get("beta")
        gaussian = GaussianNoiseConfig(sigma2, float(beta) if beta is not None else None)

    base = RngStream(seed)
    tasks = []
    for method in methods:
        try:
            config = RunConfig(method=method, dim=dim, iterations=iterations,
                               schedule=schedule, strategy=strategy, noise=noise,
                               gaussian=gaussian, theta0=theta0,
                               memory=int(doc.get("memory", 32)),
                               clamp=bool(doc.get("clamp", False)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for r in range(replicates):
            tasks.append((loss, config, base, r, stream))

    header = "method,replicate,iter,loss,theta_norm"
    lines = [header]
    failure: OptimizerStepError | None = None
    traces = []
    if args.parallel and args.parallel > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            try:
                traces = list(pool.map(_optimize_task, tasks))
            except OptimizerStepError as exc:
                failure = exc
    else:
        for task in tasks:
            try:
                traces.append(_optimize_task(task))
            except OptimizerStepError as exc:
                failure = exc
                traces.extend(exc.partial)
                break
    for trace in traces:
        for row in trace.rows:
            lines.append(",".join([row.method, str(row.replicate), str(row.iteration),
                                   _format_float(row.loss), _format_float(row.theta_norm)]))
    _write_text(out, "\n".join(lines) + "\n")
    if failure is not None:
        print(f"optimize failed at {failure}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# sweep


_SWEEP_KEYS = {"dims", "sigma2", "samples_per_dim", "delta", "seed", "out"}


def cmd_sweep(args) -> int:
    doc, _ = _load_config(args.config)
    _check_keys(doc, _SWEEP_KEYS, "sweep config")
    seed = int(args.seed if args.seed is not None else doc.get("seed", 0))
    out = Path(args.out if args.out is not None else doc.get("out", "sweep.csv"))
    dims = doc.get("dims")
    if not dims or not all(int(d) >= 1 for d in dims):
        raise ConfigError("dims must be a nonempty list of positive integers")
    sigma2 = _positive(doc, "sigma2", "sweep config", default=1.0)
    n = int(doc.get("samples_per_dim", 100_000))
    if n < 2:
        raise ConfigError("samples_per_dim must be at least 2")
    delta = float(doc.get("delta", 1.0))

    rows, slope, slope_se = variance_scaling_sweep(dims, sigma2, n, RngStream(seed), delta)
    lines = ["d,quantity,value,se"]
    for d, var, var_se in rows:
        lines.append(f"{d},variance,{_format_float(var)},{_format_float(var_se)}")
    _write_text(out, "\n".join(lines) + "\n")

    sidecar = out.with_suffix(".json")
    if slope is None:
        summary = {"slope": None, "slope_se": None, "message": "insufficient points"}
    else:
        summary = {"slope": slope, "slope_se": slope_se,
                   "dims": [int(d) for d in dims], "samples_per_dim": n, "seed": seed}
    _write_text(sidecar, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------------------
# spike demo


_SPIKE_KEYS = {"topology", "trials", "seed", "params", "weights", "input_vector",
               "input_scale", "input_offset", "readout", "reward_delta", "alpha",
               "plasticity", "transform", "out"}


def cmd_spike_demo(args) -> int:
    doc, config_dir = _load_config(args.config)
    _check_keys(doc, _SPIKE_KEYS, "spike-demo config")
    seed = int(args.seed if args.seed is not None else doc.get("seed", 0))
    out = Path(args.out if args.out is not None else doc.get("out", "spikes.csv"))
    topology_path = doc.get("topology")
    if topology_path is None:
        raise ConfigError("missing field 'topology' in spike-demo config")
    topo_file = Path(topology_path)
    if not topo_file.is_absolute() and config_dir is not None:
        topo_file = config_dir / topo_file
    if not topo_file.is_file():
        raise ConfigError(f"topology file not found: {topo_file}")
    try:
        topology = load_topology(topo_file)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    trials = int(doc.get("trials", 1))
    if trials < 0:
        raise ConfigError("trials must be nonnegative")
    pdoc = doc.get("params", {})
    _check_keys(pdoc, {"decay", "amplitude", "threshold", "half_interval"}, "params")
    try:
        params = KernelParams(
            decay=float(pdoc.get("decay", 1.0)),
            amplitude=float(pdoc.get("amplitude", 1.0)),
            threshold=float(pdoc.get("threshold", 1.0)),
            half_interval=float(pdoc.get("half_interval", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    edges = topology.edges
    weight_vec = _vector(doc.get("weights", {"fill": 1.0}), len(edges), "weights")
    if np.any(weight_vec <= 0):
        raise ConfigError("weights must be positive")
    weights = {e: float(weight_vec[i]) for i, e in enumerate(edges)}

    input_vec = _vector(doc.get("input_vector", {"fill": 0.0}), len(topology.inputs),
                        "input_vector")
    scale = float(doc.get("input_scale", 1.0))
    offset = float(doc.get("input_offset", 0.0))
    input_times = {nid: offset + scale * float(input_vec[i])
                   for i, nid in enumerate(topology.inputs)}

    rdoc = doc.get("readout", {})
    _check_keys(rdoc, {"scale", "offset", "sentinel"}, "readout")
    readout_scale = float(rdoc.get("scale", 1.0))
    readout_offset = float(rdoc.get("offset", 0.0))
    sentinel = float(rdoc.get("sentinel", 1e6))

    reward_delta = doc.get("reward_delta")
    alpha = float(doc.get("alpha", 1.0))
    plasticity = bool(doc.get("plasticity", True))
    lam = None
    if doc.get("transform") is not None:
        tdoc = doc["transform"]
        _check_keys(tdoc, {"lam"}, "transform")
        lam_vec = _vector(tdoc.get("lam", {"fill": 1.0}), len(edges), "transform.lam")
        if np.any(lam_vec <= 0):
            raise ConfigError("transform.lam must be positive")
        if plasticity:
            # shifted offsets leave the plasticity timing window and scaled
            # weights would evolve differently, defeating the comparison
            raise ConfigError("transform requires plasticity to be disabled")
        lam = {e: float(lam_vec[i]) for i, e in enumerate(edges)}

    a = params.half_interval
    gen = RngStream(seed).substream(0).generator()
    lines = ["trial,edge_or_neuron,kind,value"]

    def fmt(x: float) -> str:
        return f"{x:.12g}"

    current = dict(weights)
    for t in range(trials):
        drawn = gen.uniform(-a, a, size=len(edges))
        offsets = {e: float(drawn[i]) for i, e in enumerate(edges)}
        if lam is not None:
            use_weights = {e: lam[e] * current[e] for e in edges}
            use_offsets = {e: offsets[e] - math.log(lam[e]) for e in edges}
        else:
            use_weights = current
            use_offsets = offsets
        record = run_trial(topology, use_weights, input_times, params,
                           offsets=use_offsets, readout_scale=readout_scale,
                           readout_offset=readout_offset, sentinel=sentinel)
        for e in edges:
            if e in record.arrivals:
                lines.append(f"{t},{e[0]}->{e[1]},arrival,{fmt(record.arrivals[e])}")
        for nid in range(topology.n_neurons):
            ft = record.firing.get(nid)
            if ft is not None:
                lines.append(f"{t},{nid},firing,{fmt(ft)}")
        lines.append(f"{t},{record.output_neuron},readout,{fmt(record.readout)}")

        if plasticity:
            updated = dict(current)
            for (i, j) in edges:
                t_plus = record.firing.get(j)
                if t_plus is None or (i, j) not in record.arrivals:
                    continue
                t_minus = t_plus - 2.0 * a
                tau = t_minus + a + offsets[(i, j)]
                w = current[(i, j)]
                new_w = stdp_update(w, tau, t_minus, t_plus, params)
                if reward_delta is not None:
                    modulated = stdp_update(w, tau, t_minus, t_plus, params,
                                            reward_delta=float(reward_delta), alpha=alpha)
                    new_w += modulated - w
                updated[(i, j)] = new_w
            current = updated
        for e in edges:
            lines.append(f"{t},{e[0]}->{e[1]},weight,{fmt(current[e])}")

    _write_text(out, "\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikezero",
        description="Spike-timing zero-order optimization experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = (
        ("verify", cmd_verify, "run oracle checks and write a JSON report"),
        ("optimize", cmd_optimize, "run optimizer comparisons and write a CSV trace"),
        ("sweep", cmd_sweep, "measure variance scaling across dimensions"),
        ("spike-demo", cmd_spike_demo, "run the spiking-network demo"),
    )
    for name, func, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="path to JSON config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=str, default=None, help="override the output path")
        p.add_argument("--parallel", type=int, default=1,
                       help="replicate-level worker processes")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OptimizerStepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
