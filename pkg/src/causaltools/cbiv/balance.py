"""Discrepancy penalties between a representation and the treatment.

Binary treatments use an entropic optimal-transport distance between the
propensity-weighted representation clouds of the two arms. Continuous
treatments use the CLUB contrastive upper bound on mutual information,
with a variational Gaussian fitted alternately to the representation.
Both return the value together with its gradient with respect to the
representation rows.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, logsumexp, softmax

from causaltools.cbiv.constants import (CLUB_HIDDEN, CLUB_UPDATE_RATIO,
                                        DEGENERATE_ARM_MASS,
                                        DISCREPANCY_SAMPLE, SINKHORN_EPSILON,
                                        SINKHORN_ITERATIONS,
                                        SINKHORN_MIN_EPSILON)
from causaltools.cbiv.errors import (ConfigurationError, DegenerateArmError,
                                     NumericalFailureError)
from causaltools.cbiv.numerics import (Activation, MlpModel, MlpSpec,
                                       OptimState, backward, forward,
                                       gaussian_nll, optimizer_step)
from causaltools.cbiv.utils import Seed, make_rng, softplus

logger = logging.getLogger(__name__)


class BalanceMetric(str, Enum):
    WASSERSTEIN = "wasserstein"
    CLUB_MI = "club_mi"


@dataclass(frozen=True)
class BalanceConfig:
    """Settings of the balancing penalty.

    ``club_lr`` of None means the variational net learns at the outcome
    stage's learning rate.
    """
    metric: BalanceMetric = BalanceMetric.WASSERSTEIN
    sinkhorn_epsilon: float = SINKHORN_EPSILON
    sinkhorn_iters: int = SINKHORN_ITERATIONS
    club_update_ratio: int = CLUB_UPDATE_RATIO
    club_lr: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "metric", BalanceMetric(self.metric))
        if self.sinkhorn_iters < 1 or self.sinkhorn_epsilon <= 0:
            raise ConfigurationError(
                "sinkhorn_iters must be >= 1 and sinkhorn_epsilon > 0")
        if self.club_update_ratio < 1:
            raise ConfigurationError("club_update_ratio must be >= 1")
        if self.club_lr is not None and self.club_lr <= 0:
            raise ConfigurationError("club_lr must be positive")


@dataclass(frozen=True)
class Discrepancy:
    value: float
    grad: np.ndarray


# Optimal transport


def sinkhorn(cost: np.ndarray,
             a: np.ndarray,
             b: np.ndarray,
             epsilon: float,
             iters: int = SINKHORN_ITERATIONS,
             with_grad: bool = True) -> Tuple[float, Optional[np.ndarray]]:
    """Entropic transport cost between weights ``a`` (rows) and ``b``
    (columns).

    Runs ``iters`` alternating log-domain potential updates from zero
    potentials and returns ``sum(P * cost)`` for the resulting plan ``P``.
    The gradient with respect to ``cost`` differentiates through every
    update with ``epsilon`` held fixed.
    """
    with np.errstate(divide="ignore"):
        log_a = np.log(a)
        log_b = np.log(b)
    f = np.zeros(cost.shape[0])
    g = np.zeros(cost.shape[1])
    f_hist, g_hist = [], [g]
    for _ in range(iters):
        f = -epsilon * logsumexp(log_b[None, :] +
                                 (g[None, :] - cost) / epsilon,
                                 axis=1)
        g = -epsilon * logsumexp(log_a[:, None] +
                                 (f[:, None] - cost) / epsilon,
                                 axis=0)
        f_hist.append(f)
        g_hist.append(g)
    plan = np.exp(log_a[:, None] + log_b[None, :] +
                  (f[:, None] + g[None, :] - cost) / epsilon)
    weighted = plan * cost
    value = float(weighted.sum())
    if not with_grad:
        return value, None

    grad_cost = plan - weighted / epsilon
    f_bar = weighted.sum(axis=1) / epsilon
    g_bar = weighted.sum(axis=0) / epsilon
    for k in reversed(range(iters)):
        col_soft = softmax(log_a[:, None] + (f_hist[k][:, None] - cost) /
                           epsilon,
                           axis=0)
        f_bar = f_bar - col_soft @ g_bar
        grad_cost += col_soft * g_bar[None, :]
        row_soft = softmax(log_b[None, :] + (g_hist[k][None, :] - cost) /
                           epsilon,
                           axis=1)
        g_bar = -row_soft.T @ f_bar
        grad_cost += row_soft * f_bar[:, None]
        f_bar = np.zeros_like(f_bar)
    return value, grad_cost


def _squared_distances(reps: np.ndarray) -> np.ndarray:
    sq = (reps**2).sum(axis=1)
    cost = np.maximum(sq[:, None] + sq[None, :] - 2.0 * reps @ reps.T, 0.0)
    np.fill_diagonal(cost, 0.0)
    return cost


def weighted_wasserstein(reps: np.ndarray,
                         p1: np.ndarray,
                         config: BalanceConfig = BalanceConfig(),
                         epsilon: Optional[float] = None,
                         with_grad: bool = True) -> Discrepancy:
    """Transport distance between the arm-1 cloud weighted by ``p1`` and the
    arm-0 cloud weighted by ``1 - p1`` over the same rows.

    Args:
        reps (np.ndarray): Representation rows, shape ``(n, d)``.
        p1 (np.ndarray): Treatment probabilities of the rows.
        config (BalanceConfig): Solver settings.
        epsilon (float): Fixed regularization; by default
            ``config.sinkhorn_epsilon`` times the median pairwise cost.
        with_grad (bool): Also return the gradient w.r.t. ``reps``.
    """
    reps = np.asarray(reps, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    n = reps.shape[0]
    if n < 2 or len(p1) != n:
        raise ConfigurationError(
            "need at least 2 rows and one probability per row")
    mass1 = p1.sum()
    mass0 = (1.0 - p1).sum()
    if mass1 < DEGENERATE_ARM_MASS or mass0 < DEGENERATE_ARM_MASS:
        raise DegenerateArmError("one treatment arm has no weight")
    a = p1 / mass1
    b = (1.0 - p1) / mass0

    cost = _squared_distances(reps)
    if epsilon is None:
        median = float(np.median(cost[np.triu_indices(n, k=1)]))
        epsilon = max(config.sinkhorn_epsilon * median, SINKHORN_MIN_EPSILON)

    # Solve in a fixed arm order so the result is symmetric in the arms.
    sq = (reps**2).sum(axis=1)
    if (a @ sq, a @ reps[:, 0]) > (b @ sq, b @ reps[:, 0]):
        a, b = b, a
    value, grad_cost = sinkhorn(cost, a, b, epsilon, config.sinkhorn_iters,
                                with_grad)
    if grad_cost is None:
        return Discrepancy(value, np.zeros_like(reps))
    both = grad_cost + grad_cost.T
    grad = 2.0 * (both.sum(axis=1)[:, None] * reps - both @ reps)
    return Discrepancy(value, grad)


# Mutual information


@dataclass
class ClubState:
    """Variational Gaussian Q(t | c) with mean and softplus-spread nets."""
    mean_net: MlpModel
    spread_net: MlpModel
    mean_optim: OptimState
    spread_optim: OptimState

    @classmethod
    def create(cls,
               rep_width: int,
               learning_rate: float,
               hidden: Sequence[int] = CLUB_HIDDEN,
               seed: Seed = None) -> "ClubState":
        rng = make_rng(seed)
        spec = MlpSpec(layer_widths=(rep_width, ) + tuple(hidden),
                       output_width=1,
                       activation=Activation.ELU)
        return cls(MlpModel.create(spec, rng), MlpModel.create(spec, rng),
                   OptimState.adam(learning_rate),
                   OptimState.adam(learning_rate))

    @property
    def step(self) -> int:
        return self.mean_optim.step

    def predict(self, reps: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and spread of Q for every representation row."""
        mean = forward(self.mean_net, reps)[:, 0]
        sigma = softplus(forward(self.spread_net, reps)[:, 0])
        return mean, sigma


def _q_forward(state: ClubState,
               reps: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if reps.ndim != 2 or reps.shape[1] != state.mean_net.spec.input_width:
        raise ConfigurationError(
            "representation width does not match the variational net")
    mean = forward(state.mean_net, reps, training=True)
    raw = forward(state.spread_net, reps, training=True)
    return mean, raw


def club_mi(reps: np.ndarray, t_hat: np.ndarray,
            state: ClubState) -> Discrepancy:
    """CLUB estimate: mean log Q(t_i|c_i) minus the mean of log Q(t_j|c_i)
    over all pairs, differentiated w.r.t. ``reps`` with Q frozen."""
    reps = np.asarray(reps, dtype=float)
    t = np.asarray(t_hat, dtype=float)
    n = reps.shape[0]
    mean_out, raw_out = _q_forward(state, reps)
    mu = mean_out[:, 0]
    raw = raw_out[:, 0]
    sigma = softplus(raw)
    if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
        raise NumericalFailureError("variational spread is not positive")

    t_bar = t.mean()
    t_var = t.var()
    positive = (t - mu)**2
    contrast = t_var + (t_bar - mu)**2
    value = float(np.mean((contrast - positive) / (2.0 * sigma**2)))

    grad_mu = (t - t_bar) / sigma**2 / n
    grad_sigma = (positive - contrast) / sigma**3 / n
    grad_raw = grad_sigma * expit(raw)
    grad = (backward(state.mean_net, grad_mu[:, None]).inputs +
            backward(state.spread_net, grad_raw[:, None]).inputs)
    return Discrepancy(value, grad)


def club_fit_step(state: ClubState, reps: np.ndarray,
                  t_hat: np.ndarray) -> Tuple[ClubState, float]:
    """One likelihood step of Q on the positive pairs; ``reps`` is treated
    as data."""
    mean, raw = _q_forward(state, np.asarray(reps, dtype=float))
    nll, grad_mean, grad_raw = gaussian_nll(mean, raw, t_hat)
    if not np.isfinite(nll):
        raise NumericalFailureError("non-finite variational likelihood")
    optimizer_step(state.mean_optim, state.mean_net,
                   backward(state.mean_net, grad_mean))
    optimizer_step(state.spread_optim, state.spread_net,
                   backward(state.spread_net, grad_raw))
    return state, nll


def representation_discrepancy(reps: np.ndarray,
                               treatment: np.ndarray,
                               config: BalanceConfig,
                               club: Optional[ClubState] = None,
                               seed: Seed = 0,
                               sample: int = DISCREPANCY_SAMPLE) -> float:
    """Value of the configured metric on a seeded subsample of rows.

    ``treatment`` holds propensities for the Wasserstein metric and treatment
    values for CLUB.
    """
    n = reps.shape[0]
    rows = np.arange(n)
    if n > sample:
        rows = np.sort(make_rng(seed).choice(n, size=sample, replace=False))
    if config.metric == BalanceMetric.WASSERSTEIN:
        return weighted_wasserstein(reps[rows],
                                    treatment[rows],
                                    config,
                                    with_grad=False).value
    if club is None:
        raise ConfigurationError("CLUB discrepancy needs a variational net")
    return club_mi(reps[rows], treatment[rows], club).value
