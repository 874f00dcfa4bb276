"""Experiment orchestration: scenario data, estimator runs, metrics and
reports.

A replication generates (or re-splits) data with seed ``base_seed + index``,
hides what the scenario forbids, strips the oracle block, fits the
configured estimator end to end and scores it against the oracle. Reports
collect replications in index order so they do not depend on scheduling.
"""
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from causaltools.cbiv.constants import (CSV_FLOAT_FORMAT,
                                        DEFAULT_DEMAND_PRESET,
                                        DEFAULT_SAMPLES, DEFAULT_SYN_PRESET,
                                        DEMAND_PRESETS, LATENT_SETTINGS,
                                        OUTCOME_SETTINGS, SPLIT_FRACTIONS,
                                        SYN_PRESETS, TREATMENT_SETTINGS)
from causaltools.cbiv.datagen import (Dataset, DemandConfig, SynConfig,
                                      TreatmentKind, demand_eval_grid,
                                      generate_demand, generate_syn, read_csv,
                                      split, split_sizes, true_ate)
from causaltools.cbiv.errors import (ConfigurationError,
                                     NumericalFailureError,
                                     UnavailableOracleError)
from causaltools.cbiv.latent import (LatentConfig, LatentModel,
                                     extract_latents, train_latent)
from causaltools.cbiv.numerics import Activation, OptimState
from causaltools.cbiv.outcome import (EstimatorFlags, OutcomeModel,
                                      counterfactual_mse, estimate_ate,
                                      train_outcome)
from causaltools.cbiv.treatreg import (InputMode, Stage1Columns,
                                       Stage2Columns, TreatmentModel,
                                       TreatmentModelKind, select_columns,
                                       train_treatment)
from causaltools.cbiv.utils import make_rng

logger = logging.getLogger(__name__)


class DatasetKind(str, Enum):
    SYN = "syn"
    DEMAND = "demand"
    CSV = "csv"


class Scenario(str, Enum):
    CONVENTIONAL = "conventional"
    MIXED = "mixed"
    INSTRUMENT_ONLY = "instrument_only"
    NO_IV_AVAILABLE = "no_iv_available"
    LATENT = "latent"

    @property
    def hides_instruments(self) -> bool:
        return self in (Scenario.NO_IV_AVAILABLE, Scenario.LATENT)


class Estimator(str, Enum):
    CBIV = "cbiv"
    CBIV_L = "cbiv_l"
    NO_BALANCE = "no_balance"
    NO_IV = "no_iv"
    PLAIN = "plain"


class ReportFormat(str, Enum):
    JSON = "json"
    CSV = "csv"


ESTIMATOR_FLAGS: Dict[Estimator, EstimatorFlags] = {
    Estimator.CBIV: EstimatorFlags(use_iv=True, use_balance=True),
    Estimator.CBIV_L: EstimatorFlags(use_iv=True, use_balance=True),
    Estimator.NO_BALANCE: EstimatorFlags(use_iv=True, use_balance=False),
    Estimator.NO_IV: EstimatorFlags(use_iv=False, use_balance=True),
    Estimator.PLAIN: EstimatorFlags(use_iv=False, use_balance=False),
}

SCENARIO_INPUTS: Dict[Scenario, InputMode] = {
    Scenario.CONVENTIONAL:
    InputMode(Stage1Columns.Z_AND_X, Stage2Columns.X_ONLY),
    Scenario.MIXED:
    InputMode(Stage1Columns.Z_AND_X, Stage2Columns.Z_AND_X),
    Scenario.INSTRUMENT_ONLY:
    InputMode(Stage1Columns.Z_ONLY, Stage2Columns.X_ONLY),
    Scenario.NO_IV_AVAILABLE:
    InputMode(Stage1Columns.X_ONLY, Stage2Columns.X_ONLY),
    Scenario.LATENT:
    InputMode(Stage1Columns.LATENT, Stage2Columns.LATENT),
}


def input_mode_for(scenario: Scenario, estimator: Estimator) -> InputMode:
    if Estimator(estimator) == Estimator.CBIV_L:
        return SCENARIO_INPUTS[Scenario.LATENT]
    return SCENARIO_INPUTS[Scenario(scenario)]


@dataclass(frozen=True)
class ResolvedConfig:
    """Every setting a replication uses; this is what reports embed."""
    dataset: DatasetKind
    scenario: Scenario
    estimator: Estimator
    n: Optional[int]
    preset: Optional[str]
    m_z: Optional[int]
    m_x: Optional[int]
    m_u: Optional[int]
    gamma: Optional[float]
    lam: Optional[float]
    csv_path: Optional[str]
    replications: int
    base_seed: int
    alpha: float
    stage1_epochs: int
    stage1_batch_size: int
    stage1_learning_rate: float
    stage1_optimizer: str
    stage1_hidden: Tuple[int, ...]
    stage1_activation: str
    stage1_batchnorm: bool
    epochs: int
    batch_size: int
    learning_rate: float
    optimizer: str
    rep_hidden: Tuple[int, ...]
    rep_width: int
    head_hidden: Tuple[int, ...]
    activation: str
    latent_dim: int
    latent_noise_dim: int
    latent_epochs: int
    latent_batch_size: int
    latent_learning_rate: float
    latent_hidden: Tuple[int, ...]
    split_fractions: Tuple[float, float, float]

    @property
    def input_mode(self) -> InputMode:
        return input_mode_for(self.scenario, self.estimator)

    @property
    def flags(self) -> EstimatorFlags:
        return ESTIMATOR_FLAGS[self.estimator]

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, Enum):
                out[key] = value.value
            elif isinstance(value, tuple):
                out[key] = list(value)
        out["input_mode"] = str(self.input_mode)
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    """User-facing experiment settings. None means the dataset default.

    ``width`` sets the width of every outcome-stage layer.
    """
    dataset: DatasetKind = DatasetKind.SYN
    scenario: Scenario = Scenario.CONVENTIONAL
    estimator: Estimator = Estimator.CBIV
    n: int = DEFAULT_SAMPLES
    preset: Optional[str] = None
    m_z: Optional[int] = None
    m_x: Optional[int] = None
    m_u: Optional[int] = None
    gamma: Optional[float] = None
    lam: Optional[float] = None
    csv_path: Optional[str] = None
    replications: int = 10
    base_seed: int = 0
    alpha: Optional[float] = None
    epochs: Optional[int] = None
    batch_size: Optional[int] = None
    learning_rate: Optional[float] = None
    width: Optional[int] = None
    stage1_epochs: Optional[int] = None
    stage1_batch_size: Optional[int] = None
    stage1_learning_rate: Optional[float] = None
    stage1_hidden: Optional[Tuple[int, ...]] = None
    latent_dim: Optional[int] = None
    latent_epochs: Optional[int] = None
    latent_batch_size: Optional[int] = None
    latent_hidden: Optional[Tuple[int, ...]] = None
    split_fractions: Tuple[float, float, float] = SPLIT_FRACTIONS
    jobs: int = 1
    include_timings: bool = False

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "dataset", DatasetKind(self.dataset))
            object.__setattr__(self, "scenario", Scenario(self.scenario))
            object.__setattr__(self, "estimator", Estimator(self.estimator))
        except ValueError as e:
            raise ConfigurationError(str(e)) from e
        if self.replications < 1:
            raise ConfigurationError(
                f"replications must be >= 1, got {self.replications}")
        if self.n < 1:
            raise ConfigurationError(f"n must be positive, got {self.n}")
        if self.estimator == Estimator.CBIV_L and not \
                self.scenario.hides_instruments:
            raise ConfigurationError(
                "cbiv_l needs scenario latent or no_iv_available, got "
                f"{self.scenario.value}")
        if self.dataset == DatasetKind.CSV and not self.csv_path:
            raise ConfigurationError("csv dataset needs a path")
        if self.dataset != DatasetKind.CSV:
            split_sizes(self.n, self.split_fractions)
        if self.alpha is not None and self.alpha < 0:
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha}")
        if self.jobs == 0:
            raise ConfigurationError("jobs must be nonzero")
        for name in ("epochs", "stage1_epochs", "latent_epochs"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        for name in ("batch_size", "stage1_batch_size", "latent_batch_size",
                     "width", "latent_dim"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("learning_rate", "stage1_learning_rate"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigurationError(f"{name} must be positive")

    def _dataset_params(self) -> Dict[str, Any]:
        params: Dict[str, Any] = dict(preset=None,
                                      m_z=None,
                                      m_x=None,
                                      m_u=None,
                                      gamma=None,
                                      lam=None,
                                      csv_path=None,
                                      n=self.n)
        if self.dataset == DatasetKind.SYN:
            preset = self.preset or DEFAULT_SYN_PRESET
            if preset not in SYN_PRESETS:
                raise ConfigurationError(f"Unknown Syn preset {preset}")
            m_z, m_x, m_u = SYN_PRESETS[preset]
            params.update(preset=preset,
                          m_z=self.m_z if self.m_z is not None else m_z,
                          m_x=self.m_x if self.m_x is not None else m_x,
                          m_u=self.m_u if self.m_u is not None else m_u)
            SynConfig(params["m_z"], params["m_x"], params["m_u"], self.n)
        elif self.dataset == DatasetKind.DEMAND:
            preset = self.preset or DEFAULT_DEMAND_PRESET
            if preset not in DEMAND_PRESETS:
                raise ConfigurationError(f"Unknown Demand preset {preset}")
            gamma, lam = DEMAND_PRESETS[preset]
            params.update(
                preset=preset,
                gamma=self.gamma if self.gamma is not None else gamma,
                lam=self.lam if self.lam is not None else lam)
        else:
            params.update(csv_path=self.csv_path, n=None)
        return params

    def resolve(self) -> ResolvedConfig:
        kind = self.dataset.value
        stage1 = TREATMENT_SETTINGS[kind]
        outcome = OUTCOME_SETTINGS[kind]
        latent = LATENT_SETTINGS[kind]
        stage2 = outcome.stage
        rep_hidden = outcome.rep_hidden
        rep_width = outcome.rep_width
        head_hidden = stage2.hidden
        if self.width is not None:
            rep_hidden = (self.width, ) * len(rep_hidden)
            rep_width = self.width
            head_hidden = (self.width, ) * len(head_hidden)

        def pick(value: Any, default: Any) -> Any:
            return default if value is None else value

        return ResolvedConfig(
            dataset=self.dataset,
            scenario=self.scenario,
            estimator=self.estimator,
            replications=self.replications,
            base_seed=self.base_seed,
            alpha=pick(self.alpha, outcome.alpha),
            stage1_epochs=pick(self.stage1_epochs, stage1.epochs),
            stage1_batch_size=pick(self.stage1_batch_size, stage1.batch_size),
            stage1_learning_rate=pick(self.stage1_learning_rate,
                                      stage1.learning_rate),
            stage1_optimizer=stage1.optimizer,
            stage1_hidden=tuple(pick(self.stage1_hidden, stage1.hidden)),
            stage1_activation=stage1.activation,
            stage1_batchnorm=stage1.batchnorm,
            epochs=pick(self.epochs, stage2.epochs),
            batch_size=pick(self.batch_size, stage2.batch_size),
            learning_rate=pick(self.learning_rate, stage2.learning_rate),
            optimizer=stage2.optimizer,
            rep_hidden=tuple(rep_hidden),
            rep_width=rep_width,
            head_hidden=tuple(head_hidden),
            activation=stage2.activation,
            latent_dim=pick(self.latent_dim, latent.m_l),
            latent_noise_dim=latent.m_e,
            latent_epochs=pick(self.latent_epochs, latent.epochs),
            latent_batch_size=pick(self.latent_batch_size, latent.batch_size),
            latent_learning_rate=latent.learning_rate,
            latent_hidden=tuple(pick(self.latent_hidden, latent.hidden)),
            split_fractions=tuple(self.split_fractions),  # type: ignore
            **self._dataset_params())


@dataclass
class ReplicationResult:
    index: int
    seed: int
    metrics: Dict[str, float] = field(default_factory=dict)
    losses: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    failed: bool = False
    wall_seconds: float = 0.0

    def to_dict(self, include_timings: bool = False) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "index": self.index,
            "seed": self.seed,
            "metrics": dict(self.metrics),
            "losses": dict(self.losses),
            "warnings": list(self.warnings),
            "failed": self.failed,
        }
        if include_timings:
            out["wall_seconds"] = self.wall_seconds
        return out


@dataclass
class SummaryReport:
    config: Dict[str, Any]
    replications: List[ReplicationResult]
    metric_means: Dict[str, float]
    metric_stds: Dict[str, float]
    metric_abs_means: Dict[str, float]
    n_failed: int
    warnings: List[str] = field(default_factory=list)
    include_timings: bool = False

    @property
    def majority_failed(self) -> bool:
        return 2 * self.n_failed > len(self.replications)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config,
            "replications": [
                r.to_dict(self.include_timings) for r in self.replications
            ],
            "summary": {
                "metric_means": self.metric_means,
                "metric_stds": self.metric_stds,
                "metric_abs_means": self.metric_abs_means,
                "n_failed": self.n_failed,
                "warnings": self.warnings,
            },
        }


@dataclass
class FittedEstimator:
    """Trained pieces of one estimator run."""
    outcome: OutcomeModel
    treatment: Optional[TreatmentModel] = None
    latent: Optional[LatentModel] = None
    losses: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    def latents(self, ds: Dataset) -> Optional[np.ndarray]:
        if self.latent is None:
            return None
        return extract_latents(self.latent, ds)


def build_dataset(cfg: ResolvedConfig,
                  seed: int,
                  base: Optional[Dataset] = None) -> Dataset:
    """Fresh data for one replication; CSV data is only re-split."""
    if cfg.dataset == DatasetKind.SYN:
        assert cfg.m_z and cfg.m_x and cfg.m_u and cfg.n
        return generate_syn(SynConfig(cfg.m_z, cfg.m_x, cfg.m_u, cfg.n, seed))
    if cfg.dataset == DatasetKind.DEMAND:
        assert cfg.gamma is not None and cfg.lam is not None and cfg.n
        return generate_demand(DemandConfig(cfg.gamma, cfg.lam, cfg.n, seed))
    if base is None:
        assert cfg.csv_path is not None
        base = read_csv(cfg.csv_path)
    return base


def scenario_view(cfg: ResolvedConfig, ds: Dataset) -> Dataset:
    """The data of ``ds`` the scenario allows, oracle included."""
    if cfg.scenario.hides_instruments:
        return ds.without_instruments()
    return ds


def fit_estimator(cfg: ResolvedConfig,
                  train: Dataset,
                  seed: int = 0) -> FittedEstimator:
    """Trains the configured estimator on estimator-visible data."""
    if train.oracle is not None:
        raise ConfigurationError("estimators must not see oracle columns")
    rng = make_rng(seed)
    mode = cfg.input_mode
    flags = cfg.flags
    losses: Dict[str, float] = {}
    warnings: List[str] = []

    latent = None
    latents = None
    if mode.requires_latent:
        latent = LatentModel.create(LatentConfig(
            m_l=cfg.latent_dim,
            m_e=cfg.latent_noise_dim,
            epochs=cfg.latent_epochs,
            batch_size=cfg.latent_batch_size,
            learning_rate=cfg.latent_learning_rate,
            hidden=cfg.latent_hidden),
                                    train.m_x,
                                    train.treatment_kind,
                                    seed=rng)
        latent, latent_trace = train_latent(
            train, latent, OptimState.adam(cfg.latent_learning_rate), rng)
        losses["elbo"] = latent_trace.elbo[-1]
        warnings.extend(latent_trace.warnings)
        latents = extract_latents(latent, train)

    binary = train.treatment_kind == TreatmentKind.BINARY
    tm = None
    if flags.use_iv:
        width = select_columns(train, mode.stage1.value, latents).shape[1]
        tm = TreatmentModel.create(
            TreatmentModelKind.BINARY_LOGISTIC
            if binary else TreatmentModelKind.CONTINUOUS_MEAN,
            width,
            mode,
            hidden=cfg.stage1_hidden,
            activation=Activation(cfg.stage1_activation),
            use_batchnorm=cfg.stage1_batchnorm,
            seed=rng)
        tm, treatment_trace = train_treatment(
            train,
            tm,
            cfg.stage1_epochs,
            cfg.stage1_batch_size,
            OptimState.named(cfg.stage1_optimizer, cfg.stage1_learning_rate),
            seed=rng,
            latents=latents)
        losses["treatment"] = treatment_trace.losses[-1]

    width = select_columns(train, mode.stage2.value, latents).shape[1]
    model = OutcomeModel.create(train.treatment_kind,
                                width,
                                mode,
                                rep_hidden=cfg.rep_hidden,
                                rep_width=cfg.rep_width,
                                head_hidden=cfg.head_hidden,
                                activation=Activation(cfg.activation),
                                alpha=cfg.alpha,
                                seed=rng)
    model, trace = train_outcome(train,
                                 tm,
                                 model,
                                 flags,
                                 cfg.epochs,
                                 min(cfg.batch_size, train.n),
                                 OptimState.named(cfg.optimizer,
                                                  cfg.learning_rate),
                                 seed=rng,
                                 latents=latents)
    if trace.total:
        losses.update(outcome=trace.outcome[-1],
                      balance=trace.balance[-1],
                      total=trace.total[-1])
    if trace.final_discrepancy is not None:
        losses["discrepancy"] = trace.final_discrepancy
    return FittedEstimator(model, tm, latent, losses, warnings)


def evaluate_estimator(fitted: FittedEstimator, within: Dataset,
                       test: Dataset,
                       t_grid: Optional[np.ndarray]) -> Tuple[Dict[str, float],
                                                              List[str]]:
    """Metrics on the within-sample and out-of-sample sets.

    Both sets arrive with their oracle block; estimates are computed on the
    oracle-free view only.
    """
    metrics: Dict[str, float] = {}
    warnings: List[str] = []
    for name, ds in (("within", within), ("out", test)):
        visible = ds.without_oracle()
        latents = fitted.latents(visible)
        if ds.treatment_kind == TreatmentKind.BINARY:
            ate = estimate_ate(fitted.outcome, visible, latents)
            metrics[f"ate_{name}"] = ate
            try:
                metrics[f"ate_bias_{name}"] = ate - true_ate(ds)
            except UnavailableOracleError:
                warnings.append(f"no oracle ATE, skipped ate_bias_{name}")
        else:
            try:
                if t_grid is None:
                    raise UnavailableOracleError("no evaluation grid")
                metrics[f"mse_{name}"] = counterfactual_mse(
                    fitted.outcome, ds, t_grid, latents)
            except UnavailableOracleError:
                warnings.append(
                    f"no structural oracle, skipped mse_{name}")
    return metrics, warnings


def run_replication(cfg: ResolvedConfig,
                    index: int,
                    base: Optional[Dataset] = None) -> ReplicationResult:
    """One end-to-end run with seed ``cfg.base_seed + index``."""
    seed = cfg.base_seed + index
    result = ReplicationResult(index=index, seed=seed)
    start = time.perf_counter()
    logger.info(f"Replication {index} (seed {seed}): {cfg.estimator.value} "
                f"on {cfg.dataset.value}, {cfg.input_mode}")
    try:
        ds = scenario_view(cfg, build_dataset(cfg, seed, base))
        train, valid, test = split(ds, cfg.split_fractions, seed)
        t_grid = None
        if ds.treatment_kind == TreatmentKind.CONTINUOUS:
            t_grid = demand_eval_grid(ds.t)
        fitted = fit_estimator(cfg, train.without_oracle(), seed)
        metrics, warnings = evaluate_estimator(fitted, train.concat(valid),
                                               test, t_grid)
        result.metrics = metrics
        result.losses = fitted.losses
        result.warnings = fitted.warnings + warnings
    except NumericalFailureError as e:
        logger.warning(f"Replication {index} failed: {e}")
        result.failed = True
        result.warnings.append(f"numerical failure: {e}")
    result.wall_seconds = time.perf_counter() - start
    return result


def summarize(config: Dict[str, Any],
              results: Sequence[ReplicationResult],
              include_timings: bool = False) -> SummaryReport:
    """Mean, population std and mean absolute value of every metric over
    the successful replications."""
    rows = sorted(results, key=lambda r: r.index)
    ok = [r for r in rows if not r.failed]
    names = sorted({name for r in ok for name in r.metrics})
    means: Dict[str, float] = {}
    stds: Dict[str, float] = {}
    abs_means: Dict[str, float] = {}
    for name in names:
        values = np.array([r.metrics[name] for r in ok if name in r.metrics])
        means[name] = float(values.mean())
        stds[name] = float(values.std())
        abs_means[name] = float(np.abs(values).mean())
    warnings = []
    n_failed = len(rows) - len(ok)
    if len(ok) == 1:
        warnings.append("single replication, std reported as 0")
    if not ok:
        warnings.append("every replication failed")
    if 2 * n_failed > len(rows):
        logger.warning(f"{n_failed} of {len(rows)} replications failed")
    for message in warnings:
        logger.warning(message)
    return SummaryReport(config, rows, means, stds, abs_means, n_failed,
                         warnings, include_timings)


def run_experiment(cfg: ExperimentConfig) -> SummaryReport:
    """Runs every replication, fanning out over ``cfg.jobs`` workers."""
    resolved = cfg.resolve()
    base = None
    if resolved.dataset == DatasetKind.CSV:
        assert resolved.csv_path is not None
        base = read_csv(resolved.csv_path)
        split_sizes(base.n, resolved.split_fractions)
    results = Parallel(n_jobs=cfg.jobs)(
        delayed(run_replication)(resolved, index, base)
        for index in range(resolved.replications))
    return summarize(resolved.to_dict(), results, cfg.include_timings)


def compare_estimators(
        cfg: ExperimentConfig,
        estimators: Sequence[Estimator]) -> Dict[str, SummaryReport]:
    """Runs each estimator with the same seeds, hence on the same data."""
    if not estimators:
        raise ConfigurationError("compare needs at least one estimator")
    reports = {}
    for estimator in estimators:
        estimator = Estimator(estimator)
        logger.info(f"Comparing estimator {estimator.value}")
        reports[estimator.value] = run_experiment(
            replace(cfg, estimator=estimator))
    return reports


@dataclass(frozen=True)
class SweepRow:
    n: int
    metric: str
    mean: float
    std: float
    abs_mean: float
    n_failed: int


def sample_size_sweep(cfg: ExperimentConfig,
                      sizes: Sequence[int]) -> List[SweepRow]:
    """One experiment per sample size.

    Binary data reports the out-of-sample ATE bias, continuous data the
    out-of-sample structural MSE.
    """
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise ConfigurationError("sweep needs at least one size")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ConfigurationError(f"sizes must be ascending, got {sizes}")
    if cfg.dataset == DatasetKind.CSV:
        raise ConfigurationError("sample size sweeps need generated data")
    metric = "ate_bias_out" if cfg.dataset == DatasetKind.SYN else "mse_out"
    rows = []
    for n in sizes:
        logger.info(f"Sweep at n={n}")
        report = run_experiment(replace(cfg, n=n))
        rows.append(
            SweepRow(n=n,
                     metric=metric,
                     mean=report.metric_means.get(metric, float("nan")),
                     std=report.metric_stds.get(metric, float("nan")),
                     abs_mean=report.metric_abs_means.get(
                         metric, float("nan")),
                     n_failed=report.n_failed))
    return rows


# Reports


def report_frame(summary: SummaryReport) -> pd.DataFrame:
    """One row per replication plus a row flagged ``summary=true``."""
    names = sorted({name for r in summary.replications for name in r.metrics})
    columns = ["replication", "seed", "summary", "failed"] + names
    columns += [f"{name}_std" for name in names] + ["n_failed"]
    if summary.include_timings:
        columns.append("wall_seconds")
    columns.append("warnings")
    rows: List[Dict[str, Any]] = []
    for r in summary.replications:
        row: Dict[str, Any] = {
            "replication": r.index,
            "seed": r.seed,
            "summary": "false",
            "failed": str(r.failed).lower(),
            "warnings": "; ".join(r.warnings),
        }
        row.update(r.metrics)
        if summary.include_timings:
            row["wall_seconds"] = r.wall_seconds
        rows.append(row)
    total: Dict[str, Any] = {
        "summary": "true",
        "n_failed": summary.n_failed,
        "warnings": "; ".join(summary.warnings),
    }
    total.update(summary.metric_means)
    total.update({f"{k}_std": v for k, v in summary.metric_stds.items()})
    rows.append(total)
    return pd.DataFrame(rows, columns=columns)


def emit_report(summary: SummaryReport,
                path: str,
                fmt: ReportFormat = ReportFormat.JSON) -> None:
    """Writes ``summary`` as sorted-key JSON or as CSV."""
    fmt = ReportFormat(fmt)
    if fmt == ReportFormat.JSON:
        text = json.dumps(summary.to_dict(), indent=2, sort_keys=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        report_frame(summary).to_csv(path,
                                     index=False,
                                     float_format=CSV_FLOAT_FORMAT)
    logger.info(f"Wrote {fmt.value} report to {path}")


def read_report(path: str) -> Dict[str, Any]:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def emit_sweep(rows: Sequence[SweepRow], path: str) -> None:
    frame = pd.DataFrame([asdict(r) for r in rows],
                         columns=[
                             "n", "metric", "mean", "std", "abs_mean",
                             "n_failed"
                         ])
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info(f"Wrote sweep table to {path}")


def emit_comparison(reports: Dict[str, SummaryReport], path: str) -> None:
    text = json.dumps({name: r.to_dict()
                       for name, r in reports.items()},
                      indent=2,
                      sort_keys=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text + "\n")
    logger.info(f"Wrote comparison of {len(reports)} estimators to {path}")
