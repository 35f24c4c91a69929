"""Provides functions to read, write and summarize experiment configs, including the built-in presets."""

from __future__ import annotations

import enum
import json
from typing import TYPE_CHECKING

import pydantic

from reinit_lab.api import ConfigError, ReinitLabError, config_error_from_validation
from reinit_lab.schema import (
    METHOD_ORDER,
    ArchName,
    ArchSection,
    DataKind,
    DataSection,
    ExperimentConfig,
    MatrixSection,
    Method,
    OutputSection,
    PlanSection,
    ScheduleVariant,
    TrainConfig,
)

if TYPE_CHECKING:
    from pathlib import Path


class Preset(enum.Enum):
    """Built-in experiment configs."""

    TABLE1 = 'table1'
    TABLE3 = 'table3'
    SCNN = 'scnn'


def load_config(path: Path) -> ExperimentConfig:
    """Reads and validates an experiment config file.

    Args:
        path: Path of the JSON document.

    Returns:
        The validated config.

    Raises:
        ConfigError: If the file cannot be read or does not validate; the message lists every offending field.
    """
    try:
        text = path.read_text()
    except OSError as exception:
        err_msg = f'Cannot read config file {path}: {exception}'
        raise ConfigError(err_msg) from exception
    try:
        json.loads(text)
    except json.JSONDecodeError as exception:
        err_msg = f'{path} is not valid JSON: line {exception.lineno}, column {exception.colno}: {exception.msg}'
        raise ConfigError(err_msg) from exception
    try:
        return ExperimentConfig.model_validate_json(text)
    except pydantic.ValidationError as exception:
        raise config_error_from_validation(exception, str(path)) from exception


def store_config(config: ExperimentConfig, path: Path) -> None:
    """Writes a config as indented JSON.

    Raises:
        ReinitLabError: If the file cannot be written.
    """
    try:
        path.write_text(config.model_dump_json(indent=2))
    except OSError as exception:
        raise ReinitLabError(str(exception)) from exception


def get_preset(preset: Preset) -> ExperimentConfig:
    """Gets a built-in config.

    table1 is the MLP signal-strength study, table3 the L2-penalty study with the rescaling ablation and scnn
    the small convolutional smoke study on synthetic images.

    Returns:
        The config.
    """
    diagnostics = OutputSection(margins=True, flatness=True, weight_size=True, speed=True)
    if preset is Preset.TABLE1:
        return ExperimentConfig(
            matrix=MatrixSection(methods=list(METHOD_ORDER), alphas=[0.5, 1.0, 2.0]),
            output=diagnostics,
        )
    if preset is Preset.TABLE3:
        return ExperimentConfig(
            matrix=MatrixSection(
                methods=[Method.BL, Method.RESCALE_ONLY, Method.LW],
                alphas=[0.5],
                penalties=[0.0, 0.005, 0.01, 0.02, 0.05, 0.1],
            ),
            plan=PlanSection(schedule_variant=ScheduleVariant.APPENDIX_A),
        )
    return ExperimentConfig(
        arch=ArchSection(name=ArchName.SCNN_MINI),
        data=DataSection(kind=DataKind.IMAGES, n_train=256, n_test=512),
        train=TrainConfig(learning_rate=0.01, momentum=0.9, batch_size=32),
        plan=PlanSection(steps_per_round=50),
        matrix=MatrixSection(methods=list(METHOD_ORDER), alphas=[1.0], seeds=list(range(5))),
        output=OutputSection(margins=True),
    )


def get_config_summary(config: ExperimentConfig) -> dict[str, str]:
    """Flattens a config into key value pairs for display.

    Returns:
        Dotted field paths mapped to their values.
    """
    summary: dict[str, str] = {}

    def visit(prefix: str, value: object) -> None:
        if isinstance(value, dict):
            for key, item in value.items():
                visit(f'{prefix}.{key}' if prefix else str(key), item)
        else:
            summary[prefix] = str(value)

    visit('', config.model_dump(mode='json'))
    return summary
