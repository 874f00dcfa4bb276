import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from causaltools.cbiv.balance import (BalanceConfig, BalanceMetric,
                                      ClubState, club_fit_step, club_mi,
                                      representation_discrepancy,
                                      weighted_wasserstein)
from causaltools.cbiv.constants import OUTCOME_L2_DECAY
from causaltools.cbiv.datagen import Dataset, TreatmentKind, structural_truth
from causaltools.cbiv.errors import (ConfigurationError, DegenerateArmError,
                                     NumericalFailureError, StateError)
from causaltools.cbiv.numerics import (Activation, MlpModel, MlpSpec,
                                       OptimState, backward, forward,
                                       optimizer_step)
from causaltools.cbiv.treatreg import (InputMode, TreatmentModel,
                                       predict_propensity, predict_treatment,
                                       select_columns)
from causaltools.cbiv.utils import Seed, make_rng, sample_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorFlags:
    """Ablation switches: ``use_iv`` False conditions on the observed
    treatment, ``use_balance`` False forces alpha to 0."""
    use_iv: bool = True
    use_balance: bool = True


@dataclass
class OutcomeModel:
    """Representation net plus outcome heads.

    Binary treatments get one head per arm on the representation;
    continuous treatments get one head on ``(t, representation)``.
    """
    rep_net: MlpModel
    heads: List[MlpModel]
    alpha: float
    balance: BalanceConfig
    input_mode: InputMode
    treatment_kind: TreatmentKind
    club: Optional[ClubState] = None
    y_mean: float = 0.0
    y_scale: float = 1.0
    trained: bool = False

    def __post_init__(self) -> None:
        self.treatment_kind = TreatmentKind(self.treatment_kind)
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha}")
        rep_width = self.rep_net.spec.output_width
        if self.treatment_kind == TreatmentKind.BINARY:
            expected = (2, rep_width)
        else:
            expected = (1, rep_width + 1)
        if len(self.heads) != expected[0] or any(
                h.spec.input_width != expected[1] for h in self.heads):
            raise ConfigurationError(
                f"{self.treatment_kind.value} outcome model needs "
                f"{expected[0]} head(s) of input width {expected[1]}")

    @classmethod
    def create(cls,
               treatment_kind: TreatmentKind,
               input_width: int,
               input_mode: InputMode,
               rep_hidden: Sequence[int] = (256, 256),
               rep_width: int = 256,
               head_hidden: Sequence[int] = (256, ) * 5,
               activation: Activation = Activation.ELU,
               alpha: float = 0.01,
               balance: Optional[BalanceConfig] = None,
               l2_decay: float = OUTCOME_L2_DECAY,
               seed: Seed = None) -> "OutcomeModel":
        rng = make_rng(seed)
        kind = TreatmentKind(treatment_kind)
        if balance is None:
            balance = BalanceConfig(
                metric=BalanceMetric.WASSERSTEIN if kind ==
                TreatmentKind.BINARY else BalanceMetric.CLUB_MI)
        rep = MlpModel.create(
            MlpSpec(layer_widths=(input_width, ) + tuple(rep_hidden),
                    output_width=rep_width,
                    activation=activation), rng)
        head_in = rep_width if kind == TreatmentKind.BINARY else rep_width + 1
        head_spec = MlpSpec(layer_widths=(head_in, ) + tuple(head_hidden),
                            output_width=1,
                            activation=activation,
                            l2_decay=l2_decay)
        n_heads = 2 if kind == TreatmentKind.BINARY else 1
        heads = [MlpModel.create(head_spec, rng) for _ in range(n_heads)]
        return cls(rep, heads, alpha, balance, input_mode, kind)

    def networks(self) -> List[MlpModel]:
        return [self.rep_net] + self.heads


@dataclass
class OutcomeTrace:
    outcome: List[float] = field(default_factory=list)
    balance: List[float] = field(default_factory=list)
    total: List[float] = field(default_factory=list)
    final_discrepancy: Optional[float] = None


def mixed_outcome_loss(
        h0: np.ndarray, h1: np.ndarray, p1: np.ndarray,
        y: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Squared error of the propensity-mixed heads.

    Returns:
        Tuple: loss, gradient w.r.t. ``h0`` and w.r.t. ``h1``.
    """
    resid = h1 * p1 + h0 * (1.0 - p1) - y
    dmix = 2.0 * resid / len(resid)
    return float(np.mean(resid**2)), dmix * (1.0 - p1), dmix * p1


def _stage1_quantity(ds: Dataset, tm: Optional[TreatmentModel],
                     flags: EstimatorFlags,
                     latents: Optional[np.ndarray]) -> np.ndarray:
    if not flags.use_iv:
        if tm is not None:
            raise ConfigurationError(
                "the no-IV ablation must not receive a treatment model")
        return ds.t
    if tm is None:
        raise ConfigurationError("use_iv needs a trained treatment model")
    if ds.treatment_kind == TreatmentKind.BINARY:
        return predict_propensity(tm, ds, latents)
    return predict_treatment(tm, ds, latents)


def _features(model: OutcomeModel, ds: Dataset,
              latents: Optional[np.ndarray]) -> np.ndarray:
    features = select_columns(ds, model.input_mode.stage2.value, latents)
    if features.shape[1] != model.rep_net.spec.input_width:
        raise ConfigurationError(
            f"outcome stage expects {model.rep_net.spec.input_width} inputs, "
            f"{model.input_mode} gives {features.shape[1]}")
    return features


def train_outcome(ds: Dataset,
                  tm: Optional[TreatmentModel],
                  model: OutcomeModel,
                  flags: EstimatorFlags,
                  epochs: int,
                  batch_size: int,
                  optim: OptimState,
                  seed: Seed = None,
                  latents: Optional[np.ndarray] = None
                  ) -> Tuple[OutcomeModel, OutcomeTrace]:
    """Fits representation and heads under L_Y + alpha * L_C.

    Every epoch is one update on a freshly drawn minibatch. ``optim`` sets
    the rule and learning rate; each network keeps its own moments.

    Args:
        ds (Dataset): Estimator-visible training data.
        tm (TreatmentModel): Trained stage-1 model, or None for the no-IV
            ablation.
        model (OutcomeModel): Model to fit in place.
        flags (EstimatorFlags): Ablation switches.
        epochs (int): Number of minibatch updates.
        batch_size (int): Minibatch size.
        optim (OptimState): Template optimizer.
        seed: Seed or Generator for minibatch draws.
        latents (np.ndarray): Latent features for the ``latent_l`` mode.
    """
    if ds.treatment_kind != model.treatment_kind:
        raise ConfigurationError(
            f"{model.treatment_kind.value} outcome model cannot fit "
            f"{ds.treatment_kind.value} data")
    if epochs < 0 or batch_size < 2:
        raise ConfigurationError("epochs must be >= 0 and batch_size >= 2")
    rng = make_rng(seed)
    binary = model.treatment_kind == TreatmentKind.BINARY
    treatment = _stage1_quantity(ds, tm, flags, latents)
    features = _features(model, ds, latents)
    model.y_mean = float(np.mean(ds.y))
    model.y_scale = float(np.std(ds.y)) or 1.0
    target = (ds.y - model.y_mean) / model.y_scale
    alpha = model.alpha if flags.use_balance else 0.0
    if not binary and model.club is None and alpha > 0:
        model.club = ClubState.create(model.rep_net.spec.output_width,
                                      model.balance.club_lr
                                      or optim.learning_rate,
                                      seed=rng)
    optims = [OptimState(optim.kind, optim.learning_rate)
              for _ in model.networks()]

    logger.info(f"Training outcome model on {model.input_mode} with "
                f"{ds.n} units, alpha {alpha:g}, "
                f"IV {'on' if flags.use_iv else 'off'}")
    trace = OutcomeTrace()
    for epoch in range(epochs):
        rows = sample_batch(ds.n, batch_size, rng)
        reps = forward(model.rep_net, features[rows], training=True)
        t_rows = treatment[rows]
        balance_value = 0.0
        if binary:
            h0 = forward(model.heads[0], reps, training=True)[:, 0]
            h1 = forward(model.heads[1], reps, training=True)[:, 0]
            loss, d0, d1 = mixed_outcome_loss(h0, h1, t_rows, target[rows])
            head_grads = [
                backward(model.heads[0], d0[:, None]),
                backward(model.heads[1], d1[:, None])
            ]
            grad_reps = head_grads[0].inputs + head_grads[1].inputs
            if alpha > 0:
                try:
                    disc = weighted_wasserstein(reps, t_rows, model.balance)
                    balance_value = disc.value
                    grad_reps = grad_reps + alpha * disc.grad
                except DegenerateArmError:
                    logger.debug(f"Minibatch {epoch} has a single arm")
        else:
            if alpha > 0:
                assert model.club is not None
                for _ in range(model.balance.club_update_ratio):
                    club_fit_step(model.club, reps, t_rows)
            inputs = np.hstack([t_rows[:, None], reps])
            h = forward(model.heads[0], inputs, training=True)
            resid = h[:, 0] - target[rows]
            loss = float(np.mean(resid**2))
            head_grads = [
                backward(model.heads[0], (2.0 * resid / len(rows))[:, None])
            ]
            grad_reps = head_grads[0].inputs[:, 1:]
            if alpha > 0:
                assert model.club is not None
                disc = club_mi(reps, t_rows, model.club)
                balance_value = disc.value
                grad_reps = grad_reps + alpha * disc.grad

        total = loss + alpha * balance_value
        if not np.isfinite(total):
            raise NumericalFailureError("non-finite outcome loss",
                                        epoch=epoch)
        rep_grads = backward(model.rep_net, grad_reps)
        optimizer_step(optims[0], model.rep_net, rep_grads)
        for head, head_optim, grads in zip(model.heads, optims[1:],
                                           head_grads):
            optimizer_step(head_optim, head, grads)
        trace.outcome.append(loss)
        trace.balance.append(balance_value)
        trace.total.append(total)
        if epoch % 500 == 0:
            logger.debug(f"Outcome step {epoch}: L_Y {loss:.5f}, "
                         f"L_C {balance_value:.5f}")

    model.trained = True
    if binary or model.club is not None:
        reps = forward(model.rep_net, features)
        trace.final_discrepancy = representation_discrepancy(
            reps, treatment, model.balance, model.club)
    logger.info("Outcome model finished" + (
        f" with L_Y {trace.outcome[-1]:.5f}" if trace.outcome else ""))
    return model, trace


def predict_counterfactual(model: OutcomeModel,
                           ds: Dataset,
                           t_query: Union[float, np.ndarray],
                           latents: Optional[np.ndarray] = None) -> np.ndarray:
    """Predicted outcome of every unit under treatment ``t_query``."""
    if not model.trained:
        raise StateError("outcome model has not been trained")
    reps = forward(model.rep_net, _features(model, ds, latents))
    if model.treatment_kind == TreatmentKind.BINARY:
        if not np.isscalar(t_query) or t_query not in (0, 1):
            raise ConfigurationError("binary t_query must be 0 or 1")
        out = forward(model.heads[int(t_query)], reps)[:, 0]
    else:
        t = np.broadcast_to(np.asarray(t_query, dtype=float), (ds.n, ))
        out = forward(model.heads[0], np.hstack([t[:, None], reps]))[:, 0]
    return model.y_mean + model.y_scale * out


def estimate_ate(model: OutcomeModel,
                 ds: Dataset,
                 latents: Optional[np.ndarray] = None) -> float:
    if model.treatment_kind != TreatmentKind.BINARY:
        raise ConfigurationError("the ATE needs a binary outcome model")
    return float(
        np.mean(
            predict_counterfactual(model, ds, 1, latents) -
            predict_counterfactual(model, ds, 0, latents)))


def counterfactual_mse(model: OutcomeModel,
                       ds: Dataset,
                       t_grid: Sequence[float],
                       latents: Optional[np.ndarray] = None) -> float:
    """Mean squared error against the structural truth over units x grid.

    Predictions only ever see ``ds`` without its oracle block.
    """
    if model.treatment_kind != TreatmentKind.CONTINUOUS:
        raise ConfigurationError("structural MSE needs a continuous model")
    truth = structural_truth(ds, t_grid)
    visible = ds.without_oracle()
    predictions = np.column_stack([
        predict_counterfactual(model, visible, t, latents) for t in t_grid
    ])
    return float(np.mean((predictions - truth)**2))
