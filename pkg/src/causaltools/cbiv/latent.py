"""Variational recovery of latent instruments and confounders.

When no instrument is observed, an encoder maps each unit's proxies (X, T)
to a Gaussian posterior over latent factors L. Decoders reconstruct every
covariate, the treatment and the outcome from L^e = (L, E), where E is
exogenous noise. Training maximizes the evidence lower bound; afterwards the
posterior means (with E = 0) replace the observed columns in both stages.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_softmax, softmax

from causaltools.cbiv.constants import LATENT_MIN_SAMPLES
from causaltools.cbiv.datagen import Dataset, TreatmentKind
from causaltools.cbiv.errors import (ConfigurationError, DomainError,
                                     NumericalFailureError, StateError)
from causaltools.cbiv.numerics import (Activation, Gradients, MlpModel,
                                       MlpSpec, OptimState, backward, forward,
                                       gaussian_log_density, optimizer_step)
from causaltools.cbiv.utils import Seed, make_rng, minibatches, softplus

logger = logging.getLogger(__name__)

EVALUATION_SEED = 0


@dataclass(frozen=True)
class LatentConfig:
    m_l: int = 5
    m_e: int = 1
    epochs: int = 10
    batch_size: int = 200
    learning_rate: float = 1e-4
    hidden: Tuple[int, ...] = (64, 64, 64)
    activation: Activation = Activation.ELU

    def __post_init__(self) -> None:
        if self.m_l < 1 or self.m_e < 1:
            raise ConfigurationError("m_l and m_e must be at least 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0, batch_size >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning rate must be positive")
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "activation", Activation(self.activation))


@dataclass
class LatentModel:
    """Encoder and decoders of the latent-variable module.

    ``categories`` maps a covariate index to the sorted values of a discrete
    covariate; those coordinates get categorical decoders, the others
    Gaussian ones.
    """
    config: LatentConfig
    treatment_kind: TreatmentKind
    encoder: MlpModel
    x_heads: List[MlpModel]
    t_head: MlpModel
    y_head: MlpModel
    categories: Dict[int, Tuple[float, ...]] = field(default_factory=dict)
    x_mean: Optional[np.ndarray] = None
    x_scale: Optional[np.ndarray] = None
    t_mean: float = 0.0
    t_scale: float = 1.0
    y_mean: float = 0.0
    y_scale: float = 1.0
    trained: bool = False

    @classmethod
    def create(cls,
               config: LatentConfig,
               m_x: int,
               treatment_kind: TreatmentKind,
               categories: Optional[Mapping[int, Sequence[float]]] = None,
               seed: Seed = None) -> "LatentModel":
        rng = make_rng(seed)
        kind = TreatmentKind(treatment_kind)
        categories = {
            int(j): tuple(sorted(float(v) for v in values))
            for j, values in (categories or {}).items()
        }
        if any(j < 0 or j >= m_x for j in categories):
            raise ConfigurationError("categorical index out of range")
        if any(len(v) < 2 for v in categories.values()):
            raise ConfigurationError(
                "a categorical covariate needs >= 2 values")
        width = config.m_l + config.m_e

        def net(inputs: int, outputs: int) -> MlpModel:
            return MlpModel.create(
                MlpSpec(layer_widths=(inputs, ) + config.hidden,
                        output_width=outputs,
                        activation=config.activation), rng)

        encoder = net(m_x + 1, 2 * config.m_l)
        x_heads = [
            net(width, len(categories[j]) if j in categories else 2)
            for j in range(m_x)
        ]
        t_head = net(width, 1 if kind == TreatmentKind.BINARY else 2)
        y_head = net(width + 1, 2)
        return cls(config, kind, encoder, x_heads, t_head, y_head, categories)

    @property
    def m_x(self) -> int:
        return len(self.x_heads)

    def networks(self) -> Dict[str, MlpModel]:
        nets = {"encoder": self.encoder, "t": self.t_head, "y": self.y_head}
        nets.update({f"x{j}": head for j, head in enumerate(self.x_heads)})
        return nets

    def fit_scaling(self, ds: Dataset) -> None:
        self.x_mean = ds.x.mean(axis=0)
        scale = ds.x.std(axis=0)
        self.x_scale = np.where(scale > 0, scale, 1.0)
        if self.treatment_kind == TreatmentKind.CONTINUOUS:
            self.t_mean = float(ds.t.mean())
            self.t_scale = float(ds.t.std()) or 1.0
        self.y_mean = float(ds.y.mean())
        self.y_scale = float(ds.y.std()) or 1.0


@dataclass(frozen=True)
class LatentBatch:
    """Standardized model inputs and decoder targets of a set of units."""
    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    codes: Dict[int, np.ndarray]

    @property
    def n(self) -> int:
        return len(self.t)


@dataclass
class LatentTrace:
    elbo: List[float] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


def kl_diag_gaussian(mu: np.ndarray, sigma: np.ndarray) -> float:
    """KL(N(mu, diag sigma^2) || N(0, I))."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise DomainError("sigma must be strictly positive")
    return float(np.sum(0.5 * (sigma**2 + mu**2 - 1.0 - 2.0 * np.log(sigma))))


def gaussian_log_likelihood(x: np.ndarray, mean: np.ndarray,
                            sigma: np.ndarray) -> np.ndarray:
    if np.any(np.asarray(sigma) <= 0):
        raise DomainError("sigma must be strictly positive")
    return gaussian_log_density(np.asarray(x, dtype=float), mean, sigma)


def categorical_log_likelihood(logits: np.ndarray,
                               codes: np.ndarray) -> np.ndarray:
    """Log-probability of each row's category code under softmax logits."""
    codes = np.asarray(codes, dtype=int)
    return log_softmax(logits, axis=1)[np.arange(len(codes)), codes]


def prepare_batch(model: LatentModel, ds: Dataset) -> LatentBatch:
    if model.x_mean is None or model.x_scale is None:
        raise StateError("latent model has no input scaling")
    if ds.m_x != model.m_x:
        raise ConfigurationError(
            f"latent model expects {model.m_x} covariates, got {ds.m_x}")
    codes = {}
    for j, values in model.categories.items():
        index = np.searchsorted(values, ds.x[:, j])
        index = np.clip(index, 0, len(values) - 1)
        if not np.all(np.asarray(values)[index] == ds.x[:, j]):
            raise ConfigurationError(
                f"covariate x{j} has values outside its categories")
        codes[j] = index
    return LatentBatch(x=(ds.x - model.x_mean) / model.x_scale,
                       t=(ds.t - model.t_mean) / model.t_scale,
                       y=(ds.y - model.y_mean) / model.y_scale,
                       codes=codes)


def _gaussian_head(out: np.ndarray, target: np.ndarray,
                   n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-unit log-likelihood and d(mean ELBO)/d(head output)."""
    mean, raw = out[:, 0], out[:, 1]
    sigma = softplus(raw)
    if np.any(sigma <= 0):
        raise NumericalFailureError("decoder spread collapsed")
    resid = target - mean
    ll = gaussian_log_density(target, mean, sigma)
    d_mean = resid / sigma**2
    d_sigma = -1.0 / sigma + resid**2 / sigma**3
    return ll, np.column_stack([d_mean, d_sigma * expit(raw)]) / n


def elbo_and_gradients(
    model: LatentModel,
    batch: LatentBatch,
    noise: np.ndarray,
    exogenous: np.ndarray,
    with_grad: bool = True
) -> Tuple[float, Dict[str, Dict[str, np.ndarray]]]:
    """Mean ELBO of ``batch`` for frozen noise draws.

    Args:
        model (LatentModel): Model to evaluate.
        batch (LatentBatch): Standardized data.
        noise (np.ndarray): Standard-normal draws for the latent, shape
            ``(n, m_l)``.
        exogenous (np.ndarray): Draws of E, shape ``(n, m_e)``.
        with_grad (bool): Also differentiate.

    Returns:
        Tuple: ELBO and its gradient per network and parameter.
    """
    cfg = model.config
    n = batch.n
    enc = forward(model.encoder,
                  np.column_stack([batch.x, batch.t]),
                  training=True)
    mu, raw = enc[:, :cfg.m_l], enc[:, cfg.m_l:]
    sigma = softplus(raw)
    if np.any(sigma <= 0):
        raise NumericalFailureError("posterior spread collapsed")
    latent = np.hstack([mu + sigma * noise, exogenous])

    recon = np.zeros(n)
    upstream: Dict[str, np.ndarray] = {}
    for j, head in enumerate(model.x_heads):
        out = forward(head, latent, training=True)
        if j in model.categories:
            ll = categorical_log_likelihood(out, batch.codes[j])
            onehot = np.eye(out.shape[1])[batch.codes[j]]
            upstream[f"x{j}"] = (onehot - softmax(out, axis=1)) / n
        else:
            ll, upstream[f"x{j}"] = _gaussian_head(out, batch.x[:, j], n)
        recon += ll

    out = forward(model.t_head, latent, training=True)
    if model.treatment_kind == TreatmentKind.BINARY:
        logit = out[:, 0]
        recon += batch.t * logit - np.logaddexp(0.0, logit)
        upstream["t"] = ((batch.t - expit(logit)) / n)[:, None]
    else:
        ll, upstream["t"] = _gaussian_head(out, batch.t, n)
        recon += ll

    out = forward(model.y_head,
                  np.column_stack([batch.t, latent]),
                  training=True)
    ll, upstream["y"] = _gaussian_head(out, batch.y, n)
    recon += ll

    kl = 0.5 * (sigma**2 + mu**2 - 1.0 - 2.0 * np.log(sigma)).sum(axis=1)
    elbo = float(np.mean(recon - kl))
    if not with_grad:
        return elbo, {}

    grads: Dict[str, Gradients] = {}
    d_latent = np.zeros_like(latent)
    for name, head in model.networks().items():
        if name == "encoder":
            continue
        grads[name] = backward(head, upstream[name])
        d_latent += grads[name].inputs[:, 1:] if name == "y" else grads[
            name].inputs
    d_l = d_latent[:, :cfg.m_l]
    d_mu = d_l - mu / n
    d_sigma = d_l * noise - (sigma - 1.0 / sigma) / n
    grads["encoder"] = backward(
        model.encoder, np.hstack([d_mu, d_sigma * expit(raw)]))
    return elbo, {name: g.params for name, g in grads.items()}


def train_latent(ds: Dataset,
                 model: LatentModel,
                 optim: OptimState,
                 seed: Seed = None) -> Tuple[LatentModel, LatentTrace]:
    """Maximizes the ELBO over ``config.epochs`` shuffled passes.

    The trace holds the training-set ELBO, under one fixed noise draw,
    before training and after every epoch.
    """
    if ds.treatment_kind != model.treatment_kind:
        raise ConfigurationError("latent model built for another treatment")
    cfg = model.config
    rng = make_rng(seed)
    trace = LatentTrace()
    if ds.n < LATENT_MIN_SAMPLES:
        message = (f"latent module trained on {ds.n} units; at least "
                   f"{LATENT_MIN_SAMPLES} are recommended")
        logger.warning(message)
        trace.warnings.append(message)

    model.fit_scaling(ds)
    data = prepare_batch(model, ds)
    eval_rng = make_rng(EVALUATION_SEED)
    eval_noise = eval_rng.standard_normal((ds.n, cfg.m_l))
    eval_exogenous = eval_rng.standard_normal((ds.n, cfg.m_e))
    nets = model.networks()
    optims = {
        name: OptimState(optim.kind, optim.learning_rate)
        for name in nets
    }

    def evaluate() -> float:
        return elbo_and_gradients(model,
                                  data,
                                  eval_noise,
                                  eval_exogenous,
                                  with_grad=False)[0]

    trace.elbo.append(evaluate())
    logger.info(f"Training latent module (m_l={cfg.m_l}) on {ds.n} units")
    for epoch in range(cfg.epochs):
        for rows in minibatches(ds.n, cfg.batch_size, rng, min_size=1):
            batch = LatentBatch(x=data.x[rows],
                                t=data.t[rows],
                                y=data.y[rows],
                                codes={
                                    j: c[rows]
                                    for j, c in data.codes.items()
                                })
            noise = rng.standard_normal((len(rows), cfg.m_l))
            exogenous = rng.standard_normal((len(rows), cfg.m_e))
            elbo, grads = elbo_and_gradients(model, batch, noise, exogenous)
            if not np.isfinite(elbo):
                raise NumericalFailureError("non-finite ELBO", epoch=epoch)
            for name, net in nets.items():
                optimizer_step(optims[name], net,
                               {k: -v
                                for k, v in grads[name].items()})
        elbo = evaluate()
        if not np.isfinite(elbo):
            raise NumericalFailureError("non-finite ELBO", epoch=epoch)
        trace.elbo.append(elbo)
        logger.debug(f"Latent epoch {epoch}: ELBO {elbo:.4f}")
    model.trained = True
    logger.info(f"Latent module finished with ELBO {trace.elbo[-1]:.4f}")
    return model, trace


def extract_latents(model: LatentModel, ds: Dataset) -> np.ndarray:
    """Posterior means with the exogenous block set to zero."""
    if not model.trained:
        raise StateError("latent model has not been trained")
    data = prepare_batch(model, ds)
    enc = forward(model.encoder, np.column_stack([data.x, data.t]))
    return np.hstack(
        [enc[:, :model.config.m_l],
         np.zeros((ds.n, model.config.m_e))])
