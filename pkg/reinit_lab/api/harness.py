"""Experiment matrices: expansion into runs, parallel execution, diagnostics and persistence."""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from reinit_lab.api import ConfigError, NumericFailureError, ReinitLabError, ResultsContext
from reinit_lab.api.diagnostics import (
    FlatnessPoint,
    WeightSizeReport,
    flatness_curve,
    round_speed,
    softmax_margins,
    weight_size,
)
from reinit_lab.api.numerics import RngStream
from reinit_lab.api.reinit import train_method
from reinit_lab.schema import (
    ArchSection,
    ExperimentConfig,
    Method,
    OutputSection,
    PlanSection,
    ReinitPlan,
    RunRecord,
    RunStatus,
    SyntheticSpec,
    TrainConfig,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

logger = logging.getLogger(__name__)

WEIGHT_SAMPLE_SIZE = 256

RESULTS_COLUMNS = [
    'run_id',
    'method',
    'alpha_or_dataset',
    'arch',
    'seed',
    'penalty',
    'budget',
    'dropout',
    'initializer',
    'n_train',
    'n_classes',
    'train_acc',
    'val_acc',
    'test_acc',
    'total_steps',
    'wall_ms',
    'status',
]
MARGINS_FILE = 'margins.csv'
FLATNESS_FILE = 'flatness.csv'
WEIGHT_SIZE_FILE = 'weightsize.csv'
SPEED_FILE = 'speed.csv'


@dataclass(frozen=True)
class RunTask:
    """One cell of the matrix, with everything a worker process needs."""

    run_id: str
    plan: ReinitPlan
    arch: ArchSection
    spec: SyntheticSpec
    config: TrainConfig
    seed: int
    master_seed: int
    output: OutputSection

    @property
    def setting_key(self) -> tuple[object, ...]:
        """Identifies the setting and seed, independent of the method."""
        return (
            self.spec.alpha,
            self.config.weight_decay,
            self.plan.steps_per_round,
            self.arch.dropout,
            self.arch.initializer.value,
            self.seed,
        )


@dataclass
class RunOutcome:
    """A record together with the diagnostics computed from the trained network."""

    record: RunRecord
    failure: None | str = None
    margins: list[float] = field(default_factory=list)
    flatness: list[FlatnessPoint] = field(default_factory=list)
    weight: None | WeightSizeReport = None
    speed: list[None | int] = field(default_factory=list)


@dataclass
class MatrixResult:
    """Outcome of a whole matrix."""

    directory: Path
    records: list[RunRecord]
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def numeric_failures(self) -> list[str]:
        """Run ids that failed with non-finite numbers."""
        return [run_id for run_id, kind in self.failures.items() if kind == NumericFailureError.__name__]


def _plan_for(plan: PlanSection, method: Method, steps_per_round: int) -> ReinitPlan:
    values = {name: getattr(plan, name) for name in PlanSection.model_fields}
    values['steps_per_round'] = steps_per_round
    return ReinitPlan(method=method, **values)


def expand_matrix(config: ExperimentConfig) -> list[RunTask]:
    """Expands the matrix axes into runs.

    Run ids are prefixed by the position in the product, so they sort in execution order. Empty optional axes
    fall back to the values of the plan and arch sections.

    Args:
        config: The experiment config.

    Returns:
        The runs in order.
    """
    matrix = config.matrix
    budgets = matrix.budgets or [config.plan.steps_per_round]
    dropouts = matrix.dropouts or [config.arch.dropout]
    initializers = matrix.initializers or [config.arch.initializer]
    axes = itertools.product(
        matrix.alphas, matrix.penalties, budgets, dropouts, initializers, matrix.methods, matrix.seeds
    )
    tasks = []
    for index, (alpha, penalty, budget, dropout, initializer, method, seed) in enumerate(axes):
        run_id = (
            f'{index:05d}-{method.value}-a{alpha:g}-p{penalty:g}-b{budget}-d{dropout:g}-{initializer.value}-s{seed}'
        )
        spec = SyntheticSpec(
            kind=config.data.kind,
            alpha=alpha,
            n_train=config.data.n_train,
            n_test=config.data.n_test,
            dim=config.data.dim,
            image_size=config.data.image_size,
            seed=seed,
        )
        tasks.append(
            RunTask(
                run_id=run_id,
                plan=_plan_for(config.plan, method, budget),
                arch=config.arch.model_copy(update={'dropout': dropout, 'initializer': initializer}),
                spec=spec,
                config=config.train.model_copy(update={'weight_decay': penalty}),
                seed=seed,
                master_seed=matrix.master_seed,
                output=config.output,
            )
        )
    return tasks


def _failed_record(task: RunTask, exception: Exception) -> RunRecord:
    return RunRecord(
        run_id=task.run_id,
        status=RunStatus.FAILED,
        error=f'{type(exception).__name__}: {exception}',
        plan=task.plan,
        arch=task.arch,
        data=task.spec,
        config=task.config,
        seed=task.seed,
    )


def execute_task(task: RunTask) -> RunOutcome:
    """Trains one run and computes the enabled diagnostics. Failures are recorded, never raised.

    Args:
        task: The run.

    Returns:
        The outcome.
    """
    try:
        run = train_method(
            task.plan, task.arch, task.spec, task.config, task.seed, master_seed=task.master_seed, run_id=task.run_id
        )
        outcome = RunOutcome(record=run.record)
        root = RngStream(task.master_seed).child(task.seed)
        output = task.output
        if output.margins:
            outcome.margins = softmax_margins(run.network, run.split.train, output.smallest_margins).smallest.tolist()
        if output.weight_size:
            n_train = len(run.data.train)
            sample = root.child('weight-sample').generator().choice(
                n_train, size=min(WEIGHT_SAMPLE_SIZE, n_train), replace=False
            )
            outcome.weight = weight_size(run.network, run.data.train.x[np.sort(sample)])
        if output.flatness:
            curve = flatness_curve(
                run.network, run.split.train, output.flatness_sigmas, output.flatness_draws, root.child('flatness')
            )
            outcome.flatness = curve.points
        if output.speed:
            outcome.speed = round_speed(run.traces, output.speed_threshold)
    except Exception as exception:  # noqa: BLE001
        logger.warning('Run %s failed: %s', task.run_id, exception)
        logger.debug('Traceback of run %s.', task.run_id, exc_info=True)
        return RunOutcome(record=_failed_record(task, exception), failure=type(exception).__name__)
    return outcome


def results_frame(records: Sequence[RunRecord]) -> pd.DataFrame:
    """Tabulates records with the results.csv columns, sorted by run id."""
    rows = [
        {
            'run_id': record.run_id,
            'method': record.plan.method.value,
            'alpha_or_dataset': record.data.alpha,
            'arch': record.arch.name.value,
            'seed': record.seed,
            'penalty': record.config.weight_decay,
            'budget': record.plan.steps_per_round,
            'dropout': record.arch.dropout,
            'initializer': record.arch.initializer.value,
            'n_train': record.data.n_train,
            'n_classes': record.data.n_classes,
            'train_acc': record.train_acc,
            'val_acc': record.val_acc,
            'test_acc': record.test_acc,
            'total_steps': record.total_steps,
            'wall_ms': record.wall_ms,
            'status': record.status.value,
        }
        for record in records
    ]
    return pd.DataFrame(rows, columns=RESULTS_COLUMNS).sort_values('run_id', ignore_index=True)


def _weight_frame(outcomes: Sequence[RunOutcome], tasks: dict[str, RunTask]) -> pd.DataFrame:
    baselines = {
        tasks[outcome.record.run_id].setting_key: outcome.weight
        for outcome in outcomes
        if outcome.weight is not None and outcome.record.plan.method is Method.BL
    }
    rows = []
    for outcome in outcomes:
        if outcome.weight is None:
            continue
        baseline = baselines.get(tasks[outcome.record.run_id].setting_key)
        report = outcome.weight.with_baseline(baseline) if baseline is not None else outcome.weight
        rows.append(
            {
                'run_id': outcome.record.run_id,
                'frob_product': report.frob_product,
                'head_measure': report.head_measure,
                'ratio_vs_baseline': report.ratio_vs_baseline,
            }
        )
    return pd.DataFrame(rows, columns=['run_id', 'frob_product', 'head_measure', 'ratio_vs_baseline'])


def _write_artifacts(context: ResultsContext, outcomes: Sequence[RunOutcome], tasks: dict[str, RunTask]) -> None:
    output = next(iter(tasks.values())).output
    if output.margins:
        margins = pd.DataFrame(
            [
                {'run_id': outcome.record.run_id, 'rank': rank, 'margin': margin}
                for outcome in outcomes
                for rank, margin in enumerate(outcome.margins)
            ],
            columns=['run_id', 'rank', 'margin'],
        )
        margins.to_csv(context.artifact_path(MARGINS_FILE), index=False)
    if output.flatness:
        flatness = pd.DataFrame(
            [
                {
                    'run_id': outcome.record.run_id,
                    'sigma': point.sigma_noise,
                    'draw': draw,
                    'delta_acc': delta_acc,
                    'delta_loss': delta_loss,
                }
                for outcome in outcomes
                for point in outcome.flatness
                for draw, (delta_acc, delta_loss) in enumerate(zip(point.draws_acc, point.draws_loss, strict=True))
            ],
            columns=['run_id', 'sigma', 'draw', 'delta_acc', 'delta_loss'],
        )
        flatness.to_csv(context.artifact_path(FLATNESS_FILE), index=False)
    if output.weight_size:
        _weight_frame(outcomes, tasks).to_csv(context.artifact_path(WEIGHT_SIZE_FILE), index=False)
    if output.speed:
        speed = pd.DataFrame(
            [
                {
                    'run_id': outcome.record.run_id,
                    'round': index,
                    'threshold': output.speed_threshold,
                    'steps': steps,
                }
                for outcome in outcomes
                for index, steps in enumerate(outcome.speed)
            ],
            columns=['run_id', 'round', 'threshold', 'steps'],
        )
        speed['steps'] = speed['steps'].astype('Int64')
        speed.to_csv(context.artifact_path(SPEED_FILE), index=False)


def run_matrix(config: ExperimentConfig, directory: None | Path = None, workers: int = 1) -> MatrixResult:
    """Executes every run of a matrix and persists the results.

    Runs execute in a process pool when workers > 1. Results are collected before anything is written, so
    results.csv, the run JSON files and the diagnostic CSVs only depend on the config.

    Args:
        config: The experiment config.
        directory: Output directory; overrides the config's output directory.
        workers: Number of worker processes.

    Returns:
        The records and the failed run ids.

    Raises:
        ConfigError: If workers is not positive or the output directory cannot be created.
    """
    if workers < 1:
        err_msg = f'workers must be positive, got {workers}.'
        raise ConfigError(err_msg)
    if directory is None and config.output.directory is not None:
        directory = Path(config.output.directory)
    context = ResultsContext(directory, create=True)

    tasks = expand_matrix(config)
    logger.info('Running %d runs with %d worker(s) into %s.', len(tasks), workers, context.directory)
    if workers == 1:
        outcomes = [execute_task(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(execute_task, tasks))
    outcomes.sort(key=lambda outcome: outcome.record.run_id)

    records = [outcome.record for outcome in outcomes]
    try:
        for record in records:
            context.store_record(record)
        results_frame(records).to_csv(context.results_file_path, index=False)
        if tasks:
            _write_artifacts(context, outcomes, {task.run_id: task for task in tasks})
    except OSError as exception:
        raise ReinitLabError(str(exception)) from exception

    failures = {outcome.record.run_id: outcome.failure for outcome in outcomes if outcome.failure is not None}
    logger.info('Matrix finished: %d runs, %d failed.', len(records), len(failures))
    return MatrixResult(directory=context.directory, records=records, failures=failures)


def compute_sweep(
    config: ExperimentConfig, budgets: Sequence[int], directory: None | Path = None, workers: int = 1
) -> MatrixResult:
    """Runs the matrix once per steps-per-round budget; every record carries its budget.

    Raises:
        ConfigError: If a budget is not a positive step count.
    """
    if not budgets or any(budget < 1 for budget in budgets):
        err_msg = f'Budgets must be positive step counts, got {list(budgets)}.'
        raise ConfigError(err_msg)
    matrix = config.matrix.model_copy(update={'budgets': list(budgets)})
    return run_matrix(config.model_copy(update={'matrix': matrix}), directory, workers)
