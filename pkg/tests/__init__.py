import logging
import sys
import unittest
from typing import Callable, List, Sequence

import click
from click.testing import CliRunner, Result

from causaltools.cbiv.harness import ExperimentConfig

# Networks small enough for the unit suite; acceptance runs use the
# dataset defaults.
QUICK = dict(width=16,
             epochs=60,
             batch_size=64,
             stage1_epochs=2,
             stage1_batch_size=64,
             stage1_hidden=(16, ),
             latent_epochs=1,
             latent_hidden=(16, ))


def quick_config(**overrides) -> ExperimentConfig:
    settings = dict(QUICK, n=300, replications=2)
    settings.update(overrides)
    return ExperimentConfig(**settings)


class CliTestCase(unittest.TestCase):
    """Runs subcommands through a throwaway root group."""

    def create_subcommand_functions(self) -> List[Callable]:
        return []

    def setUp(self) -> None:

        @click.group()
        def cli() -> None:
            pass

        for create in self.create_subcommand_functions():
            create(cli)
        self.cli = cli

    def run_command(self, cmd: Sequence[str]) -> Result:
        return CliRunner().invoke(self.cli, list(cmd))


class TestLogging:
    _set: bool = False

    @staticmethod
    def setup_logging() -> None:
        if not TestLogging._set:
            for package in ["tests", "causaltools"]:
                logger = logging.getLogger(package)
                logger.setLevel(logging.INFO)
                formatter = logging.Formatter(
                    "[%(levelname)s] %(asctime)s - %(message)s")

                ch = logging.StreamHandler(sys.stdout)
                ch.setLevel(logging.INFO)
                ch.setFormatter(formatter)
                logger.addHandler(ch)
            TestLogging._set = True


TestLogging.setup_logging()
