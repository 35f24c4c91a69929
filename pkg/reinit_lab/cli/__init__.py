"""Reinit-Lab CLI Package."""

from __future__ import annotations

import importlib
import importlib.metadata
import logging
import os
from functools import wraps
from pathlib import Path
from typing import TYPE_CHECKING

import click

from reinit_lab.api import ArchitectureError, ConfigError, NumericFailureError, ReinitLabError

try:
    version_id = importlib.metadata.version('reinit-lab')
except importlib.metadata.PackageNotFoundError:
    version_id = 'unknown'

if TYPE_CHECKING:
    import typing
    from typing import Any

CLI_DIRECTORY = str(Path(__file__).resolve().parent)

EXIT_CONFIG_ERROR = 2
EXIT_NUMERIC_FAILURE = 3
WORKERS_ENVVAR = 'REINIT_LAB_WORKERS'


def _configure_logging(ctx: click.Context, param: click.Parameter, value: bool) -> None:  # noqa: ARG001, FBT001
    if value:
        logging.basicConfig(level=logging.INFO, format='%(asctime)s %(levelname)s %(name)s: %(message)s')


verbose_option = click.option(
    '--verbose',
    '-v',
    is_flag=True,
    required=False,
    default=False,
    expose_value=False,
    is_eager=True,
    callback=_configure_logging,
    help='Enable verbose mode.',
)
out_option = click.option(
    '--out',
    'out',
    type=click.Path(file_okay=False, path_type=Path),
    required=False,
    default=None,
    help='Output directory. Defaults to the config, then to the user data directory.',
)
workers_option = click.option(
    '--workers',
    type=click.IntRange(min=1),
    envvar=WORKERS_ENVVAR,
    default=1,
    show_default=True,
    help=f'Worker processes. Read from {WORKERS_ENVVAR} if not given.',
)
in_option = click.option(
    '--in',
    'in_dir',
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    required=True,
    help='Results directory.',
)


class ReinitLabCliError(click.ClickException):
    """ClickException carrying the exit code of an error category."""

    def __init__(self, message: str, exit_code: int) -> None:
        """Initializes the ReinitLabCliError.

        Args:
            message: The error message.
            exit_code: The process exit code.
        """
        super().__init__(message)
        self.exit_code = exit_code


def exit_code_for(exception: ReinitLabError) -> int:
    """Maps an error to the process exit code: 2 for config errors, 3 for numeric failures, 1 otherwise."""
    if isinstance(exception, (ConfigError, ArchitectureError)):
        return EXIT_CONFIG_ERROR
    if isinstance(exception, NumericFailureError):
        return EXIT_NUMERIC_FAILURE
    return 1


def handle_exception(func: typing.Callable[..., Any]) -> typing.Callable[..., Any]:
    """Converts ReinitLabError exceptions into ClickExceptions with the matching exit code."""

    @wraps(func)
    def _wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except ReinitLabError as exception:
            raise ReinitLabCliError(str(exception), exit_code_for(exception)) from exception

    return _wrapper


class ReinitLabCli(click.Group):
    """Discovers one command per module in the cli package.

    Compare with Python Click documentation.
    """

    def list_commands(self, ctx: click.Context) -> list[str]:  # noqa: ARG002
        """Lists the commands.

        Compare with Python Click documentation.
        """
        command_list = [
            filename[:-3].replace('_', '-')
            for filename in os.listdir(CLI_DIRECTORY)
            if filename.endswith('.py') and filename != '__init__.py'
        ]
        return sorted(command_list)

    def get_command(self, ctx: click.Context, name: str) -> None | click.Command:
        """Gets a command.

        Compare with Python Click documentation.
        """
        if name not in self.list_commands(ctx):
            return None
        module = importlib.import_module(f'{__name__}.{name.replace("-", "_")}')
        command = getattr(module, name.replace('-', '_'), None)
        return command if isinstance(command, click.Command) else None


@click.command(cls=ReinitLabCli)
@verbose_option
def cli() -> None:
    """Reinitialization lab: train, compare and analyze reinitialization regimes on synthetic tasks."""
