import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np

from causaltools.cbiv.constants import IDENTITY_TOLERANCE
from causaltools.cbiv.errors import (ConfigurationError,
                                     PreconditionViolationError)

logger = logging.getLogger(__name__)

FIXTURE_DIRECTORY = os.path.join(os.path.dirname(__file__), "fixtures")
MAX_STATES = 4


def fixture_path(name: str) -> str:
    """Path of a toy model shipped with the package."""
    return os.path.join(FIXTURE_DIRECTORY, name)


@dataclass(frozen=True, eq=False)
class ToyDGP:
    """A fully enumerable model with binary treatment.

    P(T=1 | z, x, u) = f1[z, x] + f2[x, u] and
    Y = g1[t, x] + g2[t] * g3[u] + g4[x, u]. Z is drawn independently of
    (X, U); ``coarsening[x]`` is the representation state of covariate x.
    """
    name: str
    z_probs: np.ndarray
    xu_probs: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    g4: np.ndarray
    coarsening: Tuple[int, ...]
    description: str = ""

    def __post_init__(self) -> None:
        n_z = len(self.z_probs)
        n_x, n_u = self.xu_probs.shape
        if max(n_z, n_x, n_u) > MAX_STATES:
            raise ConfigurationError(
                f"toy supports are limited to {MAX_STATES} states")
        shapes = {
            "f1": (self.f1, (n_z, n_x)),
            "f2": (self.f2, (n_x, n_u)),
            "g1": (self.g1, (2, n_x)),
            "g2": (self.g2, (2, )),
            "g3": (self.g3, (n_u, )),
            "g4": (self.g4, (n_x, n_u)),
        }
        for name, (table, shape) in shapes.items():
            if table.shape != shape:
                raise ConfigurationError(
                    f"{name} must have shape {shape}, got {table.shape}")
        for name, probs in (("z", self.z_probs), ("(x, u)", self.xu_probs)):
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
                raise ConfigurationError(
                    f"{name} probabilities must be nonnegative and sum to 1")
        if len(self.coarsening) != n_x or min(self.coarsening) < 0:
            raise ConfigurationError("coarsening needs one state per x")
        p_t1 = self.treatment_probability()
        if np.any(p_t1 < 0) or np.any(p_t1 > 1):
            raise ConfigurationError("f1 + f2 must be a probability")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ToyDGP":
        try:
            return cls(name=data["name"],
                       description=data.get("description", ""),
                       z_probs=np.asarray(data["z_probabilities"], float),
                       xu_probs=np.asarray(data["xu_probabilities"], float),
                       f1=np.asarray(data["f1"], float),
                       f2=np.asarray(data["f2"], float),
                       g1=np.asarray(data["g1"], float),
                       g2=np.asarray(data["g2"], float),
                       g3=np.asarray(data["g3"], float),
                       g4=np.asarray(data["g4"], float),
                       coarsening=tuple(int(c) for c in data["coarsening"]))
        except KeyError as e:
            raise ConfigurationError(f"toy model is missing {e}") from e

    def treatment_probability(self) -> np.ndarray:
        """P(T=1 | z, x, u) indexed [z, x, u]."""
        return self.f1[:, :, None] + self.f2[None, :, :]


def load_toy_dgp(path: str) -> ToyDGP:
    with open(path, encoding="utf-8") as f:
        return ToyDGP.from_dict(json.load(f))


def verify_inverse_identity(toy: ToyDGP) -> float:
    """Largest gap between E[Y | z, x] and sum_t h(t, c(x)) P(t | z, x).

    ``h`` is built from the model's tables as
    h(t, c) = E[g1(t, X) | c] + g2(t) E[g3(U) | c] + E[g4(X, U) | c].

    Raises:
        PreconditionViolationError: if the coarsened covariate is not
            independent of the treatment implied by (Z, X).
    """
    p_x = toy.xu_probs.sum(axis=1)
    observed = p_x > 0
    p_u_given_x = np.divide(toy.xu_probs,
                            p_x[:, None],
                            out=np.zeros_like(toy.xu_probs),
                            where=observed[:, None])
    p_t1 = toy.treatment_probability()
    p_t1_zx = (p_t1 * p_u_given_x[None, :, :]).sum(axis=2)
    p_t_zx = np.stack([1.0 - p_t1_zx, p_t1_zx], axis=-1)  # [z, x, t]

    n_c = max(toy.coarsening) + 1
    member = np.zeros((len(p_x), n_c))
    member[np.arange(len(p_x)), list(toy.coarsening)] = 1.0

    # joint of (C, T-hat) against the product of its margins
    p_xt = np.einsum("z,zxt->xt", toy.z_probs, p_t_zx) * p_x[:, None]
    joint = member.T @ p_xt
    gap = np.max(np.abs(joint - np.outer(joint.sum(1), joint.sum(0))))
    if gap > IDENTITY_TOLERANCE:
        raise PreconditionViolationError(
            f"{toy.name}: representation is not independent of the "
            f"estimated treatment (gap {gap:.3g})")

    p_c = member.T @ p_x
    p_xu_given_c = np.divide(member.T[:, :, None] * toy.xu_probs[None],
                             p_c[:, None, None],
                             out=np.zeros((n_c, ) + toy.xu_probs.shape),
                             where=p_c[:, None, None] > 0)  # [c, x, u]
    g1_c = np.einsum("cxu,tx->tc", p_xu_given_c, toy.g1)
    g3_c = np.einsum("cxu,u->c", p_xu_given_c, toy.g3)
    g4_c = np.einsum("cxu,xu->c", p_xu_given_c, toy.g4)
    h = g1_c + toy.g2[:, None] * g3_c[None, :] + g4_c[None, :]  # [t, c]

    y = (toy.g1[:, :, None] + toy.g2[:, None, None] * toy.g3[None, None, :] +
         toy.g4[None, :, :])  # [t, x, u]
    p_tzxu = np.stack([1.0 - p_t1, p_t1], axis=0)  # [t, z, x, u]
    expected_y = np.einsum("xu,tzxu,txu->zx", p_u_given_x, p_tzxu, y)
    h_x = h[:, list(toy.coarsening)]  # [t, x]
    predicted = np.einsum("tx,zxt->zx", h_x, p_t_zx)
    violation = float(np.max(np.abs(expected_y - predicted)[:, observed]))
    logger.info(f"{toy.name}: largest identity violation {violation:.3g}")
    return violation
