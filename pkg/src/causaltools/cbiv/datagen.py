import logging
import re
from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from causaltools.cbiv.constants import (CSV_FLOAT_FORMAT,
                                        DEMAND_GRID_PERCENTILES,
                                        DEMAND_GRID_POINTS,
                                        DEMAND_NOISE_CORRELATION,
                                        DEMAND_PRESETS, ORACLE_MU0, ORACLE_MU1,
                                        ORACLE_PREFIX, ORACLE_PROPENSITY,
                                        ORACLE_X1, ORACLE_X2, SPLIT_FRACTIONS,
                                        SYN_OFF_DIAGONAL, SYN_PRESETS)
from causaltools.cbiv.errors import (ConfigurationError, ParseError,
                                     UnavailableOracleError)
from causaltools.cbiv.utils import (Seed, as_matrix, clip_probability,
                                    make_rng, sigmoid)

logger = logging.getLogger(__name__)


class TreatmentKind(str, Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"


@dataclass(frozen=True)
class SynConfig:
    m_z: int = 2
    m_x: int = 4
    m_u: int = 4
    n: int = 10000
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.m_z, self.m_x, self.m_u) < 1:
            raise ConfigurationError("Syn dimensions must be positive")
        if self.m_x <= self.m_z:
            raise ConfigurationError(
                f"m_x ({self.m_x}) must exceed m_z ({self.m_z})")
        if self.n < 1:
            raise ConfigurationError(f"n must be positive, got {self.n}")

    @classmethod
    def from_preset(cls, preset: str, n: int, seed: int) -> "SynConfig":
        if preset not in SYN_PRESETS:
            raise ConfigurationError(f"Unknown Syn preset {preset}")
        m_z, m_x, m_u = SYN_PRESETS[preset]
        return cls(m_z=m_z, m_x=m_x, m_u=m_u, n=n, seed=seed)


@dataclass(frozen=True)
class DemandConfig:
    gamma: float = 0.0
    lam: float = 1.0
    n: int = 10000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigurationError(f"n must be positive, got {self.n}")

    @classmethod
    def from_preset(cls, preset: str, n: int, seed: int) -> "DemandConfig":
        if preset not in DEMAND_PRESETS:
            raise ConfigurationError(f"Unknown Demand preset {preset}")
        gamma, lam = DEMAND_PRESETS[preset]
        return cls(gamma=gamma, lam=lam, n=n, seed=seed)


@dataclass(frozen=True, eq=False)
class Oracle:
    """Ground truth kept next to a dataset and never shown to estimators.

    Binary data carries the potential-outcome means and the propensity;
    Demand data carries the raw covariates the structural function needs.
    """
    mu0: Optional[np.ndarray] = None
    mu1: Optional[np.ndarray] = None
    propensity: Optional[np.ndarray] = None
    x1: Optional[np.ndarray] = None
    x2: Optional[np.ndarray] = None

    def columns(self) -> Dict[str, np.ndarray]:
        names = {
            "mu0": ORACLE_MU0,
            "mu1": ORACLE_MU1,
            "propensity": ORACLE_PROPENSITY,
            "x1": ORACLE_X1,
            "x2": ORACLE_X2,
        }
        return {
            names[f.name]: getattr(self, f.name)
            for f in fields(self) if getattr(self, f.name) is not None
        }

    def take(self, rows: np.ndarray) -> "Oracle":
        return Oracle(**{
            f.name: None if getattr(self, f.name) is None else getattr(
                self, f.name)[rows]
            for f in fields(self)
        })


@dataclass(frozen=True, eq=False)
class Dataset:
    z: np.ndarray
    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    treatment_kind: TreatmentKind
    oracle: Optional[Oracle] = None

    def __post_init__(self) -> None:
        n = len(self.t)
        z = as_matrix(self.z)
        x = as_matrix(self.x)
        if z.shape[0] != n or x.shape[0] != n:
            raise ConfigurationError("z, x and t must have the same length")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "treatment_kind",
                           TreatmentKind(self.treatment_kind))
        if len(self.y) != n:
            raise ConfigurationError("t and y must have the same length")
        if self.treatment_kind == TreatmentKind.BINARY and not np.all(
                np.isin(self.t, (0.0, 1.0))):
            raise ConfigurationError("binary treatment must be 0 or 1")
        if self.oracle is not None:
            for name, values in self.oracle.columns().items():
                if len(values) != n:
                    raise ConfigurationError(
                        f"oracle column {name} has the wrong length")
            p = self.oracle.propensity
            if p is not None and not np.all((p > 0) & (p < 1)):
                raise ConfigurationError(
                    "oracle propensity must lie in (0, 1)")

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def m_z(self) -> int:
        return self.z.shape[1]

    @property
    def m_x(self) -> int:
        return self.x.shape[1]

    def take(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.z[rows], self.x[rows], self.t[rows], self.y[rows],
                       self.treatment_kind,
                       None if self.oracle is None else self.oracle.take(rows))

    def without_oracle(self) -> "Dataset":
        return replace(self, oracle=None)

    def without_instruments(self) -> "Dataset":
        return replace(self, z=np.zeros((self.n, 0)))

    def concat(self, other: "Dataset") -> "Dataset":
        if other.treatment_kind != self.treatment_kind:
            raise ConfigurationError("cannot join datasets of different kinds")
        oracle = None
        if self.oracle is not None and other.oracle is not None:
            oracle = Oracle(
                **{
                    f.name: _join(getattr(self.oracle, f.name),
                                  getattr(other.oracle, f.name))
                    for f in fields(Oracle)
                })
        return Dataset(np.vstack([self.z, other.z]),
                       np.vstack([self.x, other.x]),
                       np.concatenate([self.t, other.t]),
                       np.concatenate([self.y, other.y]), self.treatment_kind,
                       oracle)


def _join(a: Optional[np.ndarray],
          b: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if a is None or b is None:
        return None
    return np.concatenate([a, b])


# Syn


def syn_logit(z: np.ndarray, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Treatment logit sum_i Z_i X_i + sum X + sum U, i over instruments."""
    m_z = z.shape[1]
    return (z * x[:, :m_z]).sum(axis=1) + x.sum(axis=1) + u.sum(axis=1)


def syn_potential_outcomes(x: np.ndarray,
                           u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Returns the noise-free (mu0, mu1) of every unit."""
    d = x.shape[1] + u.shape[1]
    mu0 = (x.sum(axis=1) + u.sum(axis=1)) / d
    mu1 = ((x**2).sum(axis=1) + (u**2).sum(axis=1)) / d
    return mu0, mu1


def _syn_covariance(d: int) -> np.ndarray:
    return (1 - SYN_OFF_DIAGONAL) * np.eye(d) + SYN_OFF_DIAGONAL * np.ones(
        (d, d))


def generate_syn(cfg: SynConfig) -> Dataset:
    rng = make_rng(cfg.seed)
    z = rng.standard_normal((cfg.n, cfg.m_z))
    d = cfg.m_x + cfg.m_u
    xu = rng.multivariate_normal(np.zeros(d),
                                 _syn_covariance(d),
                                 size=cfg.n,
                                 method="cholesky")
    x, u = xu[:, :cfg.m_x], xu[:, cfg.m_x:]
    propensity = clip_probability(sigmoid(syn_logit(z, x, u)))
    t = rng.binomial(1, propensity).astype(float)
    mu0, mu1 = syn_potential_outcomes(x, u)
    y = np.where(t == 1.0, mu1, mu0)
    logger.info(f"Generated Syn-{cfg.m_z}-{cfg.m_x}-{cfg.m_u} with "
                f"{cfg.n} units (treated fraction {t.mean():.3f})")
    return Dataset(z, x, t, y, TreatmentKind.BINARY,
                   Oracle(mu0=mu0, mu1=mu1, propensity=propensity))


def syn_ate_monte_carlo(m_x: int,
                        m_u: int,
                        draws: int = 1_000_000,
                        seed: Seed = 0) -> float:
    rng = make_rng(seed)
    d = m_x + m_u
    xu = rng.multivariate_normal(np.zeros(d),
                                 _syn_covariance(d),
                                 size=draws,
                                 method="cholesky")
    mu0, mu1 = syn_potential_outcomes(xu[:, :m_x], xu[:, m_x:])
    return float(np.mean(mu1 - mu0))


# Demand


def psi(x2: np.ndarray) -> np.ndarray:
    x2 = np.asarray(x2, dtype=float)
    return 2.0 * ((x2 - 5.0)**4 / 600.0 + np.exp(-4.0 * (x2 - 5.0)**2) +
                  x2 / 10.0 - 2.0)


def demand_structural(t: np.ndarray, x1: np.ndarray,
                      x2: np.ndarray) -> np.ndarray:
    """Noise-free demand 100 + (10 + t) x1 psi(x2) - 2t."""
    t = np.asarray(t, dtype=float)
    return 100.0 + (10.0 + t) * x1 * psi(x2) - 2.0 * t


def _demand_treatment(gamma: float, lam: float, z: np.ndarray,
                      x2: np.ndarray, u: np.ndarray) -> np.ndarray:
    return 25.0 + gamma * z + (lam * z + 3.0) * psi(x2) + u


def generate_demand(cfg: DemandConfig) -> Dataset:
    rng = make_rng(cfg.seed)
    x1 = rng.integers(1, 8, size=cfg.n).astype(float)
    x2 = rng.uniform(0.0, 10.0, size=cfg.n)
    z = rng.standard_normal(cfg.n)
    u = rng.standard_normal(cfg.n)
    rho = DEMAND_NOISE_CORRELATION
    e = rng.normal(rho * u, np.sqrt(1.0 - rho**2))
    t = _demand_treatment(cfg.gamma, cfg.lam, z, x2, u)
    y = demand_structural(t, x1, x2) + e
    logger.info(f"Generated Demand-{cfg.gamma:g}-{cfg.lam:g} with "
                f"{cfg.n} units")
    return Dataset(z[:, None], np.column_stack([x1, x2]), t, y,
                   TreatmentKind.CONTINUOUS, Oracle(x1=x1, x2=x2))


def demand_mean_treatment_monte_carlo(gamma: float,
                                      lam: float,
                                      draws: int = 1_000_000,
                                      seed: Seed = 0) -> float:
    rng = make_rng(seed)
    x2 = rng.uniform(0.0, 10.0, size=draws)
    z = rng.standard_normal(draws)
    u = rng.standard_normal(draws)
    return float(np.mean(_demand_treatment(gamma, lam, z, x2, u)))


def demand_eval_grid(t: np.ndarray) -> np.ndarray:
    """Equally spaced treatments over the central 90% of ``t``."""
    low, high = np.percentile(t, DEMAND_GRID_PERCENTILES)
    return np.linspace(low, high, DEMAND_GRID_POINTS)


# Ground truth


def _require_oracle(ds: Dataset, *names: str) -> Oracle:
    if ds.oracle is None or any(
            getattr(ds.oracle, name) is None for name in names):
        raise UnavailableOracleError(
            f"dataset has no oracle columns {', '.join(names)}")
    return ds.oracle


def true_ate(ds: Dataset) -> float:
    if ds.treatment_kind != TreatmentKind.BINARY:
        raise ConfigurationError("the ATE oracle needs a binary treatment")
    oracle = _require_oracle(ds, "mu0", "mu1")
    assert oracle.mu0 is not None and oracle.mu1 is not None
    return float(np.mean(oracle.mu1 - oracle.mu0))


def structural_truth(ds: Dataset, t_grid: Sequence[float]) -> np.ndarray:
    """Structural demand of every unit (rows) at every grid value (columns)."""
    oracle = _require_oracle(ds, "x1", "x2")
    assert oracle.x1 is not None and oracle.x2 is not None
    grid = np.asarray(t_grid, dtype=float)
    return demand_structural(grid[None, :], oracle.x1[:, None],
                             oracle.x2[:, None])


# Splits


def split_sizes(n: int,
                fractions: Tuple[float, float, float] = SPLIT_FRACTIONS
                ) -> Tuple[int, int, int]:
    """Train/validation/test sizes for ``n`` units.

    Raises:
        ConfigurationError: if the fractions are malformed or any part
            would be empty.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigurationError(
            f"split fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(
            f"split fractions must sum to 1, got {sum(fractions)}")
    n_train = int(np.floor(fractions[0] * n + 0.5))
    n_valid = min(int(np.floor(fractions[1] * n + 0.5)), n - n_train)
    sizes = (n_train, n_valid, n - n_train - n_valid)
    if min(sizes) < 1:
        raise ConfigurationError(
            f"n={n} leaves an empty part in the {sizes} split")
    return sizes


def split(ds: Dataset,
          fractions: Tuple[float, float, float] = SPLIT_FRACTIONS,
          seed: Seed = 0) -> Tuple[Dataset, Dataset, Dataset]:
    """Partitions rows into train/validation/test after a seeded shuffle."""
    n_train, n_valid, _ = split_sizes(ds.n, fractions)
    order = make_rng(seed).permutation(ds.n)
    return (ds.take(order[:n_train]),
            ds.take(order[n_train:n_train + n_valid]),
            ds.take(order[n_train + n_valid:]))


# CSV format

_COLUMN = re.compile(r"^(z\d+|x\d+|t|y|oracle_(mu0|mu1|p|x1|x2))$")


def write_csv(ds: Dataset, path: str) -> None:
    columns: Dict[str, np.ndarray] = {}
    for j in range(ds.m_z):
        columns[f"z{j}"] = ds.z[:, j]
    for j in range(ds.m_x):
        columns[f"x{j}"] = ds.x[:, j]
    columns["t"] = ds.t
    columns["y"] = ds.y
    if ds.oracle is not None:
        columns.update(ds.oracle.columns())
    pd.DataFrame(columns).to_csv(path,
                                 index=False,
                                 float_format=CSV_FLOAT_FORMAT,
                                 encoding="utf-8")
    logger.info(f"Wrote {ds.n} units to {path}")


def _indexed(header: Sequence[str], prefix: str) -> list:
    names = sorted((c for c in header if re.match(rf"^{prefix}\d+$", c)),
                   key=lambda c: int(c[1:]))
    expected = [f"{prefix}{j}" for j in range(len(names))]
    if names != expected:
        raise ParseError(f"{prefix} columns must be numbered from 0",
                         line=1,
                         column=prefix)
    return names


def read_csv(path: str) -> Dataset:
    """Reads a dataset written by :func:`write_csv` (or any file in that
    format).

    Raises:
        ParseError: with the 1-based file line of the first bad row.
    """
    try:
        frame = pd.read_csv(path,
                            dtype=str,
                            keep_default_na=False,
                            encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise ParseError("file is empty", line=1) from e
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise ParseError(str(e),
                         line=int(match.group(1)) if match else None) from e

    header = list(frame.columns)
    for name in header:
        if not _COLUMN.match(name):
            raise ParseError(f"unexpected column {name!r}",
                             line=1,
                             column=name)
    for required in ("t", "y"):
        if required not in header:
            raise ParseError(f"missing required column {required!r}",
                             line=1,
                             column=required)
    z_cols = _indexed(header, "z")
    x_cols = _indexed(header, "x")
    if not x_cols:
        raise ParseError("at least one x column is required",
                         line=1,
                         column="x0")

    values: Dict[str, np.ndarray] = {}
    for name in header:
        parsed = pd.to_numeric(frame[name], errors="coerce").to_numpy(
            dtype=float)
        bad = np.flatnonzero(~np.isfinite(parsed))
        if bad.size:
            row = int(bad[0])
            raise ParseError(
                f"column {name!r}: expected a finite number, got "
                f"{frame[name].iloc[row]!r}",
                line=row + 2,
                column=name)
        values[name] = parsed

    oracle = None
    oracle_names = [c for c in header if c.startswith(ORACLE_PREFIX)]
    if oracle_names:
        oracle = Oracle(mu0=values.get(ORACLE_MU0),
                        mu1=values.get(ORACLE_MU1),
                        propensity=values.get(ORACLE_PROPENSITY),
                        x1=values.get(ORACLE_X1),
                        x2=values.get(ORACLE_X2))
    if ORACLE_MU0 in values or ORACLE_MU1 in values:
        kind = TreatmentKind.BINARY
    elif ORACLE_X1 in values or ORACLE_X2 in values:
        kind = TreatmentKind.CONTINUOUS
    elif np.all(np.isin(values["t"], (0.0, 1.0))):
        kind = TreatmentKind.BINARY
    else:
        kind = TreatmentKind.CONTINUOUS

    n = len(frame)
    z = np.column_stack([values[c] for c in z_cols]) if z_cols else np.zeros(
        (n, 0))
    x = np.column_stack([values[c] for c in x_cols])
    try:
        ds = Dataset(z, x, values["t"], values["y"], kind, oracle)
    except ConfigurationError as e:
        raise ParseError(str(e)) from e
    logger.info(f"Read {ds.n} {kind.value} units from {path}")
    return ds
