import logging
from contextlib import contextmanager
from typing import Any, Callable, Iterator, List, Optional

import click

from causaltools.cbiv import datagen, harness, toydgp
from causaltools.cbiv.constants import (BROKEN_FIXTURE, DEFAULT_SAMPLES,
                                        EXIT_CONFIG, EXIT_IO,
                                        EXIT_MAJORITY_FAILED, FIXTURES,
                                        IDENTITY_TOLERANCE)
from causaltools.cbiv.errors import (ConfigurationError, ParseError,
                                     PreconditionViolationError,
                                     UnavailableOracleError)

logger = logging.getLogger(__name__)


@contextmanager
def exit_codes() -> Iterator[None]:
    """Maps library failures onto the command line exit codes."""
    try:
        yield
    except (ConfigurationError, ParseError, PreconditionViolationError,
            UnavailableOracleError) as e:
        click.echo(f"Error: {e}", err=True)
        raise click.exceptions.Exit(EXIT_CONFIG)
    except OSError as e:
        click.echo(f"I/O error: {e}", err=True)
        raise click.exceptions.Exit(EXIT_IO)


def _int_list(value: str) -> List[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected integers, got {value}")


def experiment_options(f: Callable) -> Callable:
    """Options shared by run, sweep and compare."""
    options = [
        click.option("--dataset",
                     type=click.Choice([d.value for d in harness.DatasetKind]),
                     default="syn",
                     help="Data source"),
        click.option("--preset", type=str, help="Named Syn or Demand setting"),
        click.option("--csv",
                     "csv_path",
                     type=click.Path(dir_okay=False),
                     help="Dataset CSV for --dataset csv"),
        click.option("--mz", "m_z", type=int, help="Number of instruments"),
        click.option("--mx", "m_x", type=int, help="Number of covariates"),
        click.option("--mu",
                     "m_u",
                     type=int,
                     help="Number of unmeasured confounders"),
        click.option("--gamma", type=float, help="Demand instrument weight"),
        click.option("--lambda",
                     "lam",
                     type=float,
                     help="Demand confounding weight"),
        click.option("--n",
                     type=int,
                     default=DEFAULT_SAMPLES,
                     help="Samples per replication"),
        click.option("--scenario",
                     type=click.Choice([s.value for s in harness.Scenario]),
                     default="conventional",
                     help="Which variables each stage sees"),
        click.option("--reps",
                     "replications",
                     type=int,
                     default=10,
                     help="Number of replications"),
        click.option("--seed",
                     "base_seed",
                     type=int,
                     default=0,
                     help="Seed of the first replication"),
        click.option("--alpha", type=float, help="Balance weight"),
        click.option("--epochs",
                     type=int,
                     help="Outcome-stage minibatch iterations"),
        click.option("--batch",
                     "batch_size",
                     type=int,
                     help="Outcome-stage batch size"),
        click.option("--lr",
                     "learning_rate",
                     type=float,
                     help="Outcome-stage learning rate"),
        click.option("--width",
                     type=int,
                     help="Width of every outcome-stage layer"),
        click.option("--stage1-epochs",
                     type=int,
                     help="Passes of the treatment regression"),
        click.option("--latent-epochs",
                     type=int,
                     help="Passes of the latent module"),
        click.option("--jobs",
                     type=int,
                     default=1,
                     help="Parallel replications (-1 for all cores)"),
        click.option("--timings",
                     "include_timings",
                     is_flag=True,
                     help="Include wall-clock seconds in the report"),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _config(**kwargs: Any) -> harness.ExperimentConfig:
    return harness.ExperimentConfig(
        **{k: v
           for k, v in kwargs.items() if v is not None})


def create_cbiv_command(cli: click.Group) -> click.Group:
    """Creates the cbiv command line utility."""

    @cli.group(
        "cbiv",
        short_help="Commands for the CB-IV treatment effect estimators",
    )
    def cbiv() -> None:
        pass

    @cbiv.command("gen", short_help="Generate a benchmark dataset as CSV")
    @click.option("--dataset",
                  type=click.Choice(["syn", "demand"]),
                  default="syn",
                  help="Benchmark to generate")
    @click.option("--preset", type=str, help="Named Syn or Demand setting")
    @click.option("--mz", "m_z", type=int, help="Number of instruments")
    @click.option("--mx", "m_x", type=int, help="Number of covariates")
    @click.option("--mu",
                  "m_u",
                  type=int,
                  help="Number of unmeasured confounders")
    @click.option("--gamma", type=float, help="Demand instrument weight")
    @click.option("--lambda", "lam", type=float, help="Confounding weight")
    @click.option("--n", type=int, default=DEFAULT_SAMPLES, help="Samples")
    @click.option("--seed", type=int, default=0, help="Random seed")
    @click.option("--out",
                  required=True,
                  type=click.Path(dir_okay=False),
                  help="Destination CSV")
    def gen_command(dataset: str, preset: Optional[str], m_z: Optional[int],
                    m_x: Optional[int], m_u: Optional[int],
                    gamma: Optional[float], lam: Optional[float], n: int,
                    seed: int, out: str) -> None:
        """Generates a Syn or Demand dataset with its oracle columns

        Args:
            dataset (str): syn or demand
            out (str): Path of the CSV to write
        """
        with exit_codes():
            resolved = _config(dataset=dataset,
                               preset=preset,
                               m_z=m_z,
                               m_x=m_x,
                               m_u=m_u,
                               gamma=gamma,
                               lam=lam,
                               n=n).resolve()
            ds = harness.build_dataset(resolved, seed)
            datagen.write_csv(ds, out)
            logger.info(f"Wrote {ds.n} rows to {out}")

    @cbiv.command("run", short_help="Run an estimator over replications")
    @experiment_options
    @click.option("--estimator",
                  type=click.Choice([e.value for e in harness.Estimator]),
                  default="cbiv",
                  help="Estimator variant")
    @click.option("--format",
                  "fmt",
                  type=click.Choice(["json", "csv"]),
                  default="json",
                  help="Report format")
    @click.option("--out",
                  required=True,
                  type=click.Path(dir_okay=False),
                  help="Report path")
    def run_command(fmt: str, out: str, **kwargs: Any) -> None:
        """Runs the experiment and writes its report

        Args:
            fmt (str): json or csv
            out (str): Report path
        """
        with exit_codes():
            report = harness.run_experiment(_config(**kwargs))
            harness.emit_report(report, out, harness.ReportFormat(fmt))
        if report.majority_failed:
            click.echo(f"{report.n_failed} replications failed", err=True)
            raise click.exceptions.Exit(EXIT_MAJORITY_FAILED)

    @cbiv.command("sweep", short_help="Repeat an experiment over sizes")
    @experiment_options
    @click.option("--estimator",
                  type=click.Choice([e.value for e in harness.Estimator]),
                  default="cbiv",
                  help="Estimator variant")
    @click.option("--sizes",
                  required=True,
                  type=str,
                  help="Comma separated ascending sample sizes")
    @click.option("--out",
                  required=True,
                  type=click.Path(dir_okay=False),
                  help="Destination CSV")
    def sweep_command(sizes: str, out: str, **kwargs: Any) -> None:
        """Writes mean and std of the headline metric per sample size"""
        with exit_codes():
            rows = harness.sample_size_sweep(_config(**kwargs),
                                             _int_list(sizes))
            harness.emit_sweep(rows, out)

    @cbiv.command("compare", short_help="Run several estimators on one seed")
    @experiment_options
    @click.option("--estimators",
                  default="cbiv,no_iv,no_balance",
                  type=str,
                  help="Comma separated estimator variants")
    @click.option("--out",
                  required=True,
                  type=click.Path(dir_okay=False),
                  help="Destination JSON")
    def compare_command(estimators: str, out: str, **kwargs: Any) -> None:
        """Writes one report per estimator, keyed by estimator name"""
        with exit_codes():
            names = [e.strip() for e in estimators.split(",") if e.strip()]
            try:
                variants = [harness.Estimator(e) for e in names]
            except ValueError as e:
                raise ConfigurationError(str(e)) from e
            reports = harness.compare_estimators(_config(**kwargs), variants)
            harness.emit_comparison(reports, out)

    @cbiv.command("verify-theorem1",
                  short_help="Check the inverse identity on toy models")
    @click.option("--fixture",
                  type=click.Path(exists=True, dir_okay=False),
                  help="Toy model JSON; defaults to the shipped models")
    def verify_command(fixture: Optional[str]) -> None:
        """Enumerates toy models and reports the largest identity violation

        Args:
            fixture (str): Optional toy model JSON
        """
        worst = 0.0
        with exit_codes():
            if fixture is not None:
                worst = toydgp.verify_inverse_identity(
                    toydgp.load_toy_dgp(fixture))
                click.echo(f"{fixture}: {worst:.3g}")
            else:
                for name in FIXTURES:
                    violation = toydgp.verify_inverse_identity(
                        toydgp.load_toy_dgp(toydgp.fixture_path(name)))
                    click.echo(f"{name}: {violation:.3g}")
                    worst = max(worst, violation)
                broken = toydgp.load_toy_dgp(
                    toydgp.fixture_path(BROKEN_FIXTURE))
                try:
                    toydgp.verify_inverse_identity(broken)
                except PreconditionViolationError as e:
                    click.echo(f"{BROKEN_FIXTURE}: rejected ({e})")
                else:
                    click.echo(f"{BROKEN_FIXTURE}: not rejected", err=True)
                    raise click.exceptions.Exit(1)
        if worst > IDENTITY_TOLERANCE:
            click.echo(f"violation {worst:.3g} exceeds {IDENTITY_TOLERANCE}",
                       err=True)
            raise click.exceptions.Exit(1)

    return cbiv
