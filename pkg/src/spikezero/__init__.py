"""Zero-order optimization with spike-timing perturbations.

The package implements the derivative-free parameter update that falls out
of reward-modulated spike-timing plasticity, together with gradient-descent
and Gaussian one-point baselines, a small feedforward spiking-network
simulator, and a verification suite that checks the scheme's expectation
identities against closed forms and quadrature.
"""

from .core import LearningRateSchedule, RngStream, exp_map, hadamard
from .losses import (
    ConstantLoss,
    DataStream,
    LeastSquaresLoss,
    LinearModelLoss,
    LogReparamLoss,
    PowerLoss,
    SupervisedSample,
    finite_diff_gradient,
    generate_stream,
)
from .optimizers import (
    AnticipatedLossStrategy,
    GaussianNoiseConfig,
    MultiplicativeState,
    OptimizerState,
    PositivityError,
    RunConfig,
    anticipated_loss,
    gd_step,
    init_multiplicative_state,
    init_state,
    one_point_step,
    run_optimizer,
    stdp_multiplicative_step,
    stdp_zo_step,
)
from .perturbation import NoiseConfig, PerturbationDensity, normalizer_c, sample_uniform
from .spiking import (
    KernelParams,
    Topology,
    interarrival_time,
    load_topology,
    next_spike_time,
    potential,
    run_trial,
    stdp_update,
)

__version__ = "0.1.0"
