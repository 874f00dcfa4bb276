"""Dense feed-forward networks with hand-written reverse-mode gradients.

Every network in the package (propensity, representation, outcome heads,
CLUB variational net, encoder and decoders) is an :class:`MlpModel`. A network
is a stack of affine layers; every layer but the last is followed by optional
batch normalization and an activation. Gradients come from :func:`backward`,
which replays the cache stored by the most recent training-mode
:func:`forward` call.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from scipy.special import expit

from causaltools.cbiv.constants import (ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON,
                                        BATCHNORM_EPSILON, BATCHNORM_MOMENTUM,
                                        GRAD_CHECK_FLOOR, GRAD_CHECK_STEP)
from causaltools.cbiv.errors import (ConfigurationError,
                                     NumericalFailureError, StateError)
from causaltools.cbiv.utils import Seed, make_rng, softplus

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


class Activation(str, Enum):
    RELU = "relu"
    ELU = "elu"


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass(frozen=True)
class MlpSpec:
    """Shape and regularization of a network.

    ``layer_widths`` holds the input width followed by the hidden widths; the
    output layer of width ``output_width`` is affine with no activation.
    """
    layer_widths: Tuple[int, ...]
    output_width: int
    activation: Activation = Activation.RELU
    use_batchnorm: bool = False
    l2_decay: float = 0.0

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        try:
            object.__setattr__(self, "activation",
                               Activation(self.activation))
        except ValueError as e:
            raise ConfigurationError(str(e)) from e
        if not widths:
            raise ConfigurationError("layer_widths must not be empty")
        if any(w < 1 for w in widths) or self.output_width < 1:
            raise ConfigurationError(
                f"all layer widths must be positive, got {widths} "
                f"and output width {self.output_width}")
        if self.l2_decay < 0:
            raise ConfigurationError(
                f"l2_decay must be nonnegative, got {self.l2_decay}")

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths)

    @property
    def n_hidden(self) -> int:
        return len(self.layer_widths) - 1

    def layer_shapes(self) -> List[Tuple[int, int]]:
        widths = self.layer_widths + (self.output_width, )
        return list(zip(widths[:-1], widths[1:]))


@dataclass
class _LayerRecord:
    inputs: np.ndarray
    act_in: Optional[np.ndarray] = None
    xhat: Optional[np.ndarray] = None
    inv_std: Optional[np.ndarray] = None


@dataclass
class _ForwardCache:
    rows: int
    layers: List[_LayerRecord]


class MlpModel:
    """Parameters and batch-norm statistics of one network.

    Parameters are stored by name: ``weight{k}``/``bias{k}`` for every layer
    and ``gamma{k}``/``beta{k}`` for hidden layers with batch-norm.
    """

    def __init__(self,
                 spec: MlpSpec,
                 params: Dict[str, np.ndarray],
                 running_mean: Optional[List[np.ndarray]] = None,
                 running_var: Optional[List[np.ndarray]] = None):
        self.spec = spec
        self.params = params
        hidden = [w for _, w in spec.layer_shapes()[:spec.n_hidden]]
        self.running_mean = running_mean if running_mean is not None else [
            np.zeros(w) for w in hidden
        ]
        self.running_var = running_var if running_var is not None else [
            np.ones(w) for w in hidden
        ]
        self._cache: Optional[_ForwardCache] = None
        self._check_shapes()

    @classmethod
    def create(cls, spec: MlpSpec, seed: Seed = None) -> "MlpModel":
        rng = make_rng(seed)
        params: Dict[str, np.ndarray] = {}
        gain = 2.0 if spec.activation == Activation.RELU else 1.0
        for k, (fan_in, fan_out) in enumerate(spec.layer_shapes()):
            scale = np.sqrt(gain / fan_in)
            params[f"weight{k}"] = rng.standard_normal(
                (fan_in, fan_out)) * scale
            params[f"bias{k}"] = np.zeros(fan_out)
            if spec.use_batchnorm and k < spec.n_hidden:
                params[f"gamma{k}"] = np.ones(fan_out)
                params[f"beta{k}"] = np.zeros(fan_out)
        return cls(spec, params)

    def copy(self) -> "MlpModel":
        return MlpModel(self.spec,
                        {k: v.copy()
                         for k, v in self.params.items()},
                        [m.copy() for m in self.running_mean],
                        [v.copy() for v in self.running_var])

    def weights(self) -> List[np.ndarray]:
        return [self.params[f"weight{k}"] for k in range(self.spec.n_layers)]

    def _check_shapes(self) -> None:
        for k, (fan_in, fan_out) in enumerate(self.spec.layer_shapes()):
            expected = {
                f"weight{k}": (fan_in, fan_out),
                f"bias{k}": (fan_out, )
            }
            if self.spec.use_batchnorm and k < self.spec.n_hidden:
                expected[f"gamma{k}"] = (fan_out, )
                expected[f"beta{k}"] = (fan_out, )
            for name, shape in expected.items():
                if name not in self.params or self.params[name].shape != shape:
                    raise ConfigurationError(
                        f"parameter {name} must have shape {shape}")


@dataclass
class Gradients:
    """Parameter gradients plus the gradient with respect to the batch."""
    params: Dict[str, np.ndarray]
    inputs: np.ndarray


@dataclass
class OptimState:
    kind: OptimizerKind
    learning_rate: float
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self) -> None:
        self.kind = OptimizerKind(self.kind)
        if self.learning_rate < 0 or not np.isfinite(self.learning_rate):
            raise ConfigurationError(
                f"learning rate must be nonnegative, got {self.learning_rate}"
            )
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ConfigurationError("Adam epsilon must be positive")

    @classmethod
    def sgd(cls, learning_rate: float) -> "OptimState":
        return cls(OptimizerKind.SGD, learning_rate)

    @classmethod
    def adam(cls, learning_rate: float) -> "OptimState":
        return cls(OptimizerKind.ADAM, learning_rate)

    @classmethod
    def named(cls, kind: str, learning_rate: float) -> "OptimState":
        return cls(OptimizerKind(kind), learning_rate)


@dataclass(frozen=True)
class GradCheckReport:
    passed: bool
    worst_relative_error: float
    worst_parameter: str
    worst_index: Tuple[int, ...]
    n_checked: int
    tolerance: float
    kink_distance: Optional[float] = None


def _activate(activation: Activation, u: np.ndarray) -> np.ndarray:
    if activation == Activation.RELU:
        return np.maximum(u, 0.0)
    return np.where(u > 0, u, np.expm1(np.minimum(u, 0.0)))


def _activation_grad(activation: Activation, u: np.ndarray) -> np.ndarray:
    if activation == Activation.RELU:
        return (u > 0).astype(float)
    return np.where(u > 0, 1.0, np.exp(np.minimum(u, 0.0)))


def forward(model: MlpModel,
            batch: np.ndarray,
            training: bool = False) -> np.ndarray:
    """Evaluates the network on a batch.

    In training mode batch-norm normalizes with the batch statistics, updates
    the running statistics and the pass is cached for :func:`backward`.

    Args:
        model (MlpModel): Network to evaluate.
        batch (np.ndarray): Inputs of shape ``(n, input_width)``.
        training (bool): Use batch statistics and keep the backward cache.

    Returns:
        np.ndarray: Outputs of shape ``(n, output_width)``.
    """
    spec = model.spec
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != spec.input_width:
        raise ConfigurationError(
            f"expected a batch of width {spec.input_width}, "
            f"got shape {x.shape}")
    n = x.shape[0]
    if n < 1:
        raise ConfigurationError("cannot evaluate an empty batch")
    if training and spec.use_batchnorm and spec.n_hidden and n < 2:
        raise ConfigurationError("batch-norm training needs at least 2 rows")

    records: List[_LayerRecord] = []
    h = x
    for k in range(spec.n_layers):
        record = _LayerRecord(inputs=h)
        z = h @ model.params[f"weight{k}"] + model.params[f"bias{k}"]
        if k < spec.n_hidden:
            if spec.use_batchnorm:
                if training:
                    mean = z.mean(axis=0)
                    var = z.var(axis=0)
                    m = BATCHNORM_MOMENTUM
                    model.running_mean[k] = (m * model.running_mean[k] +
                                             (1 - m) * mean)
                    model.running_var[k] = (m * model.running_var[k] +
                                            (1 - m) * var)
                else:
                    mean = model.running_mean[k]
                    var = model.running_var[k]
                inv_std = 1.0 / np.sqrt(var + BATCHNORM_EPSILON)
                xhat = (z - mean) * inv_std
                record.xhat = xhat
                record.inv_std = inv_std
                z = model.params[f"gamma{k}"] * xhat + model.params[f"beta{k}"]
            record.act_in = z
            h = _activate(spec.activation, z)
        else:
            h = z
        if not np.all(np.isfinite(h)):
            raise NumericalFailureError("non-finite activation", layer=k)
        records.append(record)
    if training:
        model._cache = _ForwardCache(rows=n, layers=records)
    return h


def backward(model: MlpModel, upstream_grad: np.ndarray) -> Gradients:
    """Back-propagates ``upstream_grad`` through the last training pass.

    Weight gradients include the ``l2_decay * W`` term of
    :func:`l2_penalty`.
    """
    cache = model._cache
    spec = model.spec
    if cache is None:
        raise StateError("backward called without a training-mode forward")
    g = np.asarray(upstream_grad, dtype=float)
    if g.shape != (cache.rows, spec.output_width):
        raise StateError(f"upstream gradient shape {g.shape} does not match "
                         f"the cached pass ({cache.rows}, "
                         f"{spec.output_width})")

    grads: Dict[str, np.ndarray] = {}
    for k in reversed(range(spec.n_layers)):
        record = cache.layers[k]
        if k < spec.n_hidden:
            assert record.act_in is not None
            g = g * _activation_grad(spec.activation, record.act_in)
            if spec.use_batchnorm:
                assert record.xhat is not None and record.inv_std is not None
                xhat = record.xhat
                grads[f"gamma{k}"] = (g * xhat).sum(axis=0)
                grads[f"beta{k}"] = g.sum(axis=0)
                dxhat = g * model.params[f"gamma{k}"]
                g = (record.inv_std / cache.rows) * (
                    cache.rows * dxhat - dxhat.sum(axis=0) -
                    xhat * (dxhat * xhat).sum(axis=0))
        weight = model.params[f"weight{k}"]
        grads[f"weight{k}"] = record.inputs.T @ g + spec.l2_decay * weight
        grads[f"bias{k}"] = g.sum(axis=0)
        g = g @ weight.T
    return Gradients(params=grads, inputs=g)


def l2_penalty(model: MlpModel) -> float:
    if model.spec.l2_decay == 0:
        return 0.0
    return 0.5 * model.spec.l2_decay * sum(
        float(np.sum(w * w)) for w in model.weights())


def optimizer_step(
        state: OptimState, model: MlpModel,
        gradients: Union[Gradients, Mapping[str, np.ndarray]]
) -> Tuple[MlpModel, OptimState]:
    """Applies one SGD or Adam update in place and returns both values.

    Raises:
        NumericalFailureError: if any gradient is non-finite; nothing is
            updated in that case.
    """
    grads = gradients.params if isinstance(gradients,
                                           Gradients) else gradients
    for name, value in model.params.items():
        if name not in grads or np.shape(grads[name]) != value.shape:
            raise ConfigurationError(
                f"gradient for {name} missing or misshaped")
        if not np.all(np.isfinite(grads[name])):
            raise NumericalFailureError(f"non-finite gradient for {name}")

    step = state.step + 1
    lr = state.learning_rate
    for name, value in model.params.items():
        g = np.asarray(grads[name], dtype=float)
        if state.kind == OptimizerKind.SGD:
            value -= lr * g
            continue
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None or v is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / (1 - state.beta1**step)
        v_hat = v / (1 - state.beta2**step)
        value -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    state.step = step
    return model, state


# Losses return (value, gradient with respect to the prediction).


def mse_loss(prediction: np.ndarray,
             target: np.ndarray) -> Tuple[float, np.ndarray]:
    prediction = np.asarray(prediction, dtype=float)
    diff = prediction - np.asarray(target, dtype=float).reshape(
        prediction.shape)
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def bce_with_logits(logits: np.ndarray,
                    target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Binary cross-entropy of a Bernoulli with the given logits."""
    logits = np.asarray(logits, dtype=float)
    t = np.asarray(target, dtype=float).reshape(logits.shape)
    n = logits.size
    value = float(np.mean(np.logaddexp(0.0, logits) - t * logits))
    return value, (expit(logits) - t) / n


def gaussian_log_density(x: np.ndarray, mean: np.ndarray,
                         sigma: np.ndarray) -> np.ndarray:
    """Elementwise log N(x; mean, sigma^2)."""
    return (-0.5 * LOG_2PI - np.log(sigma) - 0.5 *
            ((x - mean) / sigma)**2)


def gaussian_nll(mean: np.ndarray, raw_scale: np.ndarray,
                 target: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mean Gaussian negative log-likelihood with a softplus scale.

    Returns:
        Tuple: value, gradient w.r.t. ``mean`` and w.r.t. ``raw_scale``.
    """
    sigma = softplus(raw_scale)
    if np.any(sigma <= 0):
        raise NumericalFailureError("scale collapsed to zero")
    t = np.asarray(target, dtype=float).reshape(mean.shape)
    n = mean.size
    resid = t - mean
    value = float(-np.mean(gaussian_log_density(t, mean, sigma)))
    grad_mean = -resid / sigma**2 / n
    grad_sigma = (1.0 / sigma - resid**2 / sigma**3) / n
    return value, grad_mean, grad_sigma * expit(raw_scale)


def compare_gradients(models: Mapping[str, MlpModel],
                      objective: Callable[[], float],
                      analytic: Mapping[str, Mapping[str, np.ndarray]],
                      tolerance: float = 1e-4,
                      step: float = GRAD_CHECK_STEP) -> GradCheckReport:
    """Checks analytic gradients of a multi-network objective.

    Every parameter coordinate of every model is perturbed by ``±step`` and
    the central difference of ``objective`` is compared with ``analytic``.
    Batch-norm running statistics are restored afterwards.
    """
    saved = {
        name: ([m.copy() for m in model.running_mean],
               [v.copy() for v in model.running_var])
        for name, model in models.items()
    }
    worst: Tuple[float, str, Tuple[int, ...]] = (0.0, "", ())
    checked = 0
    try:
        for name, model in models.items():
            for pname, value in model.params.items():
                exact = analytic[name][pname]
                for idx in np.ndindex(value.shape):
                    original = value[idx]
                    value[idx] = original + step
                    plus = objective()
                    value[idx] = original - step
                    minus = objective()
                    value[idx] = original
                    numeric = (plus - minus) / (2 * step)
                    denom = max(abs(exact[idx]), abs(numeric),
                                GRAD_CHECK_FLOOR)
                    error = abs(exact[idx] - numeric) / denom
                    checked += 1
                    if error > worst[0] or not worst[1]:
                        worst = (float(error), f"{name}.{pname}", idx)
    finally:
        for name, model in models.items():
            model.running_mean, model.running_var = saved[name]
    if worst[0] > tolerance:
        logger.info(f"Gradient check failed at {worst[1]}{worst[2]}: "
                    f"relative error {worst[0]:.3g}")
    return GradCheckReport(passed=worst[0] <= tolerance,
                           worst_relative_error=worst[0],
                           worst_parameter=worst[1],
                           worst_index=tuple(int(i) for i in worst[2]),
                           n_checked=checked,
                           tolerance=tolerance)


def grad_check(model: MlpModel,
               loss_fn: Callable[[np.ndarray], Tuple[float, np.ndarray]],
               batch: np.ndarray,
               tolerance: float = 1e-4) -> GradCheckReport:
    """Compares :func:`backward` against central differences.

    Args:
        model (MlpModel): Network under test, evaluated in training mode.
        loss_fn (Callable): Maps network output to ``(loss, d loss/d output)``.
        batch (np.ndarray): Inputs.
        tolerance (float): Largest accepted relative error.

    Returns:
        GradCheckReport: Worst offender and, for ReLU nets, the smallest
        absolute hidden pre-activation at the base point.
    """

    def objective() -> float:
        return float(loss_fn(forward(model, batch, training=True))[0]) + \
            l2_penalty(model)

    running = ([m.copy() for m in model.running_mean],
               [v.copy() for v in model.running_var])
    output = forward(model, batch, training=True)
    _, upstream = loss_fn(output)
    grads = backward(model, upstream)
    kink = None
    if model.spec.activation == Activation.RELU and model.spec.n_hidden:
        assert model._cache is not None
        kink = float(
            min(
                np.min(np.abs(r.act_in)) for r in model._cache.layers
                if r.act_in is not None))
    model.running_mean, model.running_var = running

    report = compare_gradients({"model": model},
                               objective, {"model": grads.params},
                               tolerance=tolerance)
    return GradCheckReport(passed=report.passed,
                           worst_relative_error=report.worst_relative_error,
                           worst_parameter=report.worst_parameter.split(
                               ".", 1)[1],
                           worst_index=report.worst_index,
                           n_checked=report.n_checked,
                           tolerance=tolerance,
                           kink_distance=kink)
