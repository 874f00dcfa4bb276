import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from causaltools.cbiv.datagen import Dataset, TreatmentKind
from causaltools.cbiv.errors import (ConfigurationError,
                                     NumericalFailureError, StateError)
from causaltools.cbiv.numerics import (Activation, MlpModel, MlpSpec,
                                       OptimState, backward, bce_with_logits,
                                       forward, gaussian_nll, mse_loss,
                                       optimizer_step)
from causaltools.cbiv.utils import (Seed, clip_probability, make_rng,
                                    minibatches, sigmoid, softplus)

logger = logging.getLogger(__name__)


class Stage1Columns(str, Enum):
    Z_ONLY = "z_only"
    X_ONLY = "x_only"
    Z_AND_X = "z_and_x"
    LATENT = "latent_l"


class Stage2Columns(str, Enum):
    X_ONLY = "x_only"
    Z_AND_X = "z_and_x"
    LATENT = "latent_l"


@dataclass(frozen=True)
class InputMode:
    """Which columns feed each stage, e.g. (Z,X)(X) for the conventional
    setting."""
    stage1: Stage1Columns = Stage1Columns.Z_AND_X
    stage2: Stage2Columns = Stage2Columns.X_ONLY

    def __post_init__(self) -> None:
        object.__setattr__(self, "stage1", Stage1Columns(self.stage1))
        object.__setattr__(self, "stage2", Stage2Columns(self.stage2))

    @property
    def requires_latent(self) -> bool:
        return (self.stage1 == Stage1Columns.LATENT
                or self.stage2 == Stage2Columns.LATENT)

    def __str__(self) -> str:
        names = {
            "z_only": "Z",
            "x_only": "X",
            "z_and_x": "Z,X",
            "latent_l": "L"
        }
        return f"({names[self.stage1.value]})({names[self.stage2.value]})"


def select_columns(ds: Dataset, columns: str,
                   latents: Optional[np.ndarray]) -> np.ndarray:
    """Builds the feature matrix a stage sees.

    Args:
        ds (Dataset): Estimator-visible data.
        columns (str): A :class:`Stage1Columns` or :class:`Stage2Columns`
            value.
        latents (np.ndarray): Latent features of ``ds``, needed for
            ``latent_l``.
    """
    if columns == "latent_l":
        if latents is None:
            raise ConfigurationError(
                "latent_l input mode needs features from a trained latent "
                "model")
        if len(latents) != ds.n:
            raise ConfigurationError("latent features do not match the data")
        return np.asarray(latents, dtype=float)
    if columns in ("z_only", "z_and_x") and ds.m_z == 0:
        raise ConfigurationError(
            f"input mode {columns} needs instruments, the data has none")
    if columns == "z_only":
        return ds.z
    if columns == "x_only":
        return ds.x
    return np.hstack([ds.z, ds.x])


class TreatmentModelKind(str, Enum):
    BINARY_LOGISTIC = "binary_logistic"
    CONTINUOUS_MEAN = "continuous_mean"


@dataclass
class TreatmentModel:
    """Stage-1 network: a logistic head for binary treatments, or a mean head
    with a softplus spread head for continuous ones."""
    kind: TreatmentModelKind
    net: MlpModel
    input_mode: InputMode
    spread_net: Optional[MlpModel] = None
    n_components: int = 1
    t_mean: float = 0.0
    t_scale: float = 1.0
    trained: bool = False

    def __post_init__(self) -> None:
        self.kind = TreatmentModelKind(self.kind)
        if self.n_components != 1:
            raise ConfigurationError(
                "only a single Gaussian component is supported")
        if self.net.spec.output_width != 1:
            raise ConfigurationError("treatment heads have one output")

    @classmethod
    def create(cls,
               kind: TreatmentModelKind,
               input_width: int,
               input_mode: InputMode,
               hidden: Sequence[int] = (128, 64),
               activation: Activation = Activation.RELU,
               use_batchnorm: bool = True,
               seed: Seed = None) -> "TreatmentModel":
        rng = make_rng(seed)
        spec = MlpSpec(layer_widths=(input_width, ) + tuple(hidden),
                       output_width=1,
                       activation=activation,
                       use_batchnorm=use_batchnorm)
        net = MlpModel.create(spec, rng)
        spread = None
        if TreatmentModelKind(kind) == TreatmentModelKind.CONTINUOUS_MEAN:
            spread = MlpModel.create(spec, rng)
        return cls(TreatmentModelKind(kind), net, input_mode, spread)

    @property
    def expected_treatment(self) -> TreatmentKind:
        if self.kind == TreatmentModelKind.BINARY_LOGISTIC:
            return TreatmentKind.BINARY
        return TreatmentKind.CONTINUOUS


@dataclass
class TreatmentTrace:
    losses: List[float] = field(default_factory=list)
    spread_losses: List[float] = field(default_factory=list)


def treatment_loss(kind: TreatmentModelKind, output: np.ndarray,
                   t: np.ndarray) -> Tuple[float, np.ndarray]:
    """Cross-entropy on logits (binary) or squared error (continuous)."""
    if kind == TreatmentModelKind.BINARY_LOGISTIC:
        return bce_with_logits(output, t)
    return mse_loss(output, t)


def _features(model: TreatmentModel, ds: Dataset,
              latents: Optional[np.ndarray]) -> np.ndarray:
    features = select_columns(ds, model.input_mode.stage1.value, latents)
    if features.shape[1] != model.net.spec.input_width:
        raise ConfigurationError(
            f"stage 1 expects {model.net.spec.input_width} inputs, "
            f"{model.input_mode} gives {features.shape[1]}")
    return features


def _target(model: TreatmentModel, ds: Dataset) -> np.ndarray:
    return (ds.t - model.t_mean) / model.t_scale


def train_treatment(
        ds: Dataset,
        model: TreatmentModel,
        epochs: int,
        batch_size: int,
        optim: OptimState,
        seed: Seed = None,
        latents: Optional[np.ndarray] = None
) -> Tuple[TreatmentModel, TreatmentTrace]:
    """Fits the stage-1 network.

    Each epoch is one shuffled pass over ``ds``. The trace holds the
    training-set loss before training and after every epoch.

    Args:
        ds (Dataset): Estimator-visible training data.
        model (TreatmentModel): Model to fit in place.
        epochs (int): Number of passes.
        batch_size (int): Minibatch size.
        optim (OptimState): Optimizer for the mean/logistic head.
        seed: Seed or Generator for shuffling.
        latents (np.ndarray): Latent features for the ``latent_l`` mode.
    """
    if ds.treatment_kind != model.expected_treatment:
        raise ConfigurationError(
            f"{model.kind.value} model cannot fit a "
            f"{ds.treatment_kind.value} treatment")
    if epochs < 0 or batch_size < 1:
        raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
    rng = make_rng(seed)
    features = _features(model, ds, latents)
    if model.kind == TreatmentModelKind.CONTINUOUS_MEAN:
        model.t_mean = float(np.mean(ds.t))
        model.t_scale = float(np.std(ds.t)) or 1.0
    target = _target(model, ds)
    spread_optim = None
    if model.spread_net is not None:
        spread_optim = OptimState(optim.kind, optim.learning_rate)

    trace = TreatmentTrace()
    trace.losses.append(_evaluate(model, features, target))
    logger.info(f"Training {model.kind.value} treatment model on "
                f"{model.input_mode} with {ds.n} units")
    for epoch in range(epochs):
        for rows in minibatches(ds.n, batch_size, rng):
            output = forward(model.net, features[rows], training=True)
            loss, grad = treatment_loss(model.kind, output, target[rows])
            if not np.isfinite(loss):
                raise NumericalFailureError("non-finite treatment loss",
                                            epoch=epoch)
            optimizer_step(optim, model.net, backward(model.net, grad))
            if model.spread_net is not None and spread_optim is not None:
                raw = forward(model.spread_net, features[rows], training=True)
                _, _, grad_raw = gaussian_nll(output, raw, target[rows])
                optimizer_step(spread_optim, model.spread_net,
                               backward(model.spread_net, grad_raw))
        loss = _evaluate(model, features, target)
        if not np.isfinite(loss):
            raise NumericalFailureError("non-finite treatment loss",
                                        epoch=epoch)
        trace.losses.append(loss)
        if model.spread_net is not None:
            trace.spread_losses.append(
                _evaluate_spread(model, features, target))
        logger.debug(f"Treatment epoch {epoch}: loss {loss:.6f}")
    model.trained = True
    logger.info(f"Treatment model finished with loss {trace.losses[-1]:.4f}")
    return model, trace


def _evaluate(model: TreatmentModel, features: np.ndarray,
              target: np.ndarray) -> float:
    output = forward(model.net, features, training=False)
    return treatment_loss(model.kind, output, target)[0]


def _evaluate_spread(model: TreatmentModel, features: np.ndarray,
                     target: np.ndarray) -> float:
    assert model.spread_net is not None
    mean = forward(model.net, features, training=False)
    raw = forward(model.spread_net, features, training=False)
    return gaussian_nll(mean, raw, target)[0]


def _require(model: TreatmentModel, kind: TreatmentModelKind) -> None:
    if model.kind != kind:
        raise ConfigurationError(
            f"operation needs a {kind.value} model, got {model.kind.value}")
    if not model.trained:
        raise StateError("treatment model has not been trained")


def predict_propensity(model: TreatmentModel,
                       ds: Dataset,
                       latents: Optional[np.ndarray] = None) -> np.ndarray:
    """P(T=1 | stage-1 inputs), clipped to [1e-7, 1 - 1e-7]."""
    _require(model, TreatmentModelKind.BINARY_LOGISTIC)
    logits = forward(model.net, _features(model, ds, latents), training=False)
    return clip_probability(sigmoid(logits[:, 0]))


def predict_treatment(model: TreatmentModel,
                      ds: Dataset,
                      latents: Optional[np.ndarray] = None) -> np.ndarray:
    _require(model, TreatmentModelKind.CONTINUOUS_MEAN)
    mean = forward(model.net, _features(model, ds, latents), training=False)
    return model.t_mean + model.t_scale * mean[:, 0]


def predict_treatment_distribution(
        model: TreatmentModel,
        ds: Dataset,
        latents: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Conditional mean and spread of a continuous treatment."""
    _require(model, TreatmentModelKind.CONTINUOUS_MEAN)
    assert model.spread_net is not None
    features = _features(model, ds, latents)
    raw = forward(model.spread_net, features, training=False)[:, 0]
    return (predict_treatment(model, ds, latents),
            model.t_scale * softplus(raw))
