import logging

import click

from causaltools.cbiv import __version__
from causaltools.cbiv.commands import create_cbiv_command


@click.group()
@click.version_option(version=__version__)
@click.option("--log-level",
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"]),
              default="INFO",
              help="Verbosity of progress messages")
def cli(log_level: str) -> None:
    """causaltools command line interface"""
    logging.basicConfig(
        level=getattr(logging, log_level),
        format="[%(levelname)s] %(asctime)s - %(message)s")


create_cbiv_command(cli)
