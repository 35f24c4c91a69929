"""The reinit_lab.api package __init__ module provides the error hierarchy and results directory handling."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import TYPE_CHECKING

import pydantic
from platformdirs import PlatformDirs
from prettytable import PrettyTable

if TYPE_CHECKING:
    from typing import Any

from reinit_lab.schema import RunRecord

logger = logging.getLogger(__name__)

dirs = PlatformDirs(appname='reinit_lab', appauthor='reinit_lab')
WORKING_DIR = Path(dirs.user_data_dir)
DEFAULT_RUNS_DIR = WORKING_DIR / Path('runs')

RESULTS_FILE_NAME = 'results.csv'
RUNS_DIR_NAME = 'runs'


class ReinitLabError(Exception):
    """Base class for all reinit_lab exceptions."""

    def __init__(self, message: str) -> None:
        """Initializes the ReinitLabError.

        Args:
            message: The error message.
        """
        super().__init__(message)


class ConfigError(ReinitLabError):
    """Raised for malformed configurations and empty or invalid inputs."""


class SchemaError(ConfigError):
    """Raised if a results file misses required columns or holds no rows."""


class ArchitectureError(ReinitLabError):
    """Raised for invalid architectures and tensor shape mismatches."""


class NumericFailureError(ReinitLabError):
    """Raised if a loss or tensor becomes non-finite."""


class ContractViolationError(ReinitLabError):
    """Raised if a precondition of an operation is violated."""


class UndefinedTestError(ReinitLabError):
    """Raised if a statistic is undefined for its input, e.g. a binomial test without trials."""


def config_error_from_validation(exception: pydantic.ValidationError, source: str) -> ConfigError:
    """Converts a pydantic ValidationError into a ConfigError listing every offending field.

    Args:
        exception: The validation error.
        source: Name of the validated document, e.g. the config file path.

    Returns:
        The ConfigError instance.
    """
    lines = [f'Invalid configuration in {source}:']
    for error in exception.errors():
        location = '.'.join(str(part) for part in error['loc']) or '<root>'
        lines.append(f'  {location}: {error["msg"]}')
    return ConfigError('\n'.join(lines))


def get_table_from_dict(data: dict[str, Any], key_header: str = 'Key', value_header: str = 'Value') -> PrettyTable:
    """Gets a PrettyTable object for printing key value pairs.

    Args:
        data: The data to be displayed in the table.
        key_header: The heading for the key column.
        value_header: The heading for the value column

    Returns:
        The created table instance.
    """
    table = PrettyTable([key_header, value_header])
    table.add_rows([[key, value] for key, value in data.items()])
    table.align = 'l'
    return table


class ResultsContext:
    """Provides access to an experiment output directory.

    The directory holds results.csv, one JSON file per run in runs/ and the diagnostic CSV artifacts.

    Note:
        This context is not thread-safe. Only the single results writer of a matrix uses it for writing.
    """

    _directory: Path

    def __init__(self, directory: None | Path = None, *, create: bool = False) -> None:
        """Initializes the ResultsContext object.

        Args:
            directory: The output directory. Defaults to the runs directory in the user data dir.
            create: Create the directory if it does not exist yet.

        Raises:
            ConfigError: If the directory does not exist and create is False, or it cannot be created.
        """
        self._directory = directory if directory is not None else DEFAULT_RUNS_DIR

        if create:
            try:
                Path.mkdir(self.runs_dir, parents=True, exist_ok=True)
            except OSError as exception:
                raise ConfigError(str(exception)) from exception
        elif not self._directory.is_dir():
            err_msg = f'Results directory {self._directory} does not exist.'
            raise ConfigError(err_msg)

    @property
    def directory(self) -> Path:
        """Gets the output directory.

        Returns:
            The output directory.
        """
        return self._directory

    @property
    def results_file_path(self) -> Path:
        """Gets the results.csv path.

        Returns:
            The results.csv path.
        """
        return self._directory / RESULTS_FILE_NAME

    @property
    def runs_dir(self) -> Path:
        """Gets the directory holding the per-run JSON records.

        Returns:
            The runs directory.
        """
        return self._directory / RUNS_DIR_NAME

    def artifact_path(self, name: str) -> Path:
        """Gets the path of a named artifact inside the output directory.

        Args:
            name: File name of the artifact, e.g. margins.csv.

        Returns:
            The artifact path.
        """
        return self._directory / name

    def store_record(self, record: RunRecord) -> Path:
        """Stores a run record as JSON.

        Args:
            record: The run record to store.

        Returns:
            The path of the written file.

        Raises:
            ReinitLabError: If writing the record failed.
        """
        path = self.runs_dir / f'{record.run_id}.json'
        try:
            path.write_text(record.model_dump_json(indent=2))
        except OSError as exception:
            raise ReinitLabError(str(exception)) from exception
        return path

    def load_records(self) -> list[RunRecord]:
        """Loads all run records of the directory ordered by run id.

        Returns:
            The run records.

        Raises:
            SchemaError: If a record file does not validate.
        """
        records = []
        for path in sorted(self.runs_dir.glob('*.json')):
            try:
                records.append(RunRecord.model_validate_json(path.read_text()))
            except pydantic.ValidationError as exception:
                err_msg = f'Run record {path.name} is malformed: {exception}'
                raise SchemaError(err_msg) from exception
        return records
