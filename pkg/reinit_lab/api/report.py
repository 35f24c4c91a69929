"""Reports over a results directory: accuracy tables, meta-analysis artifacts and diagnostic summaries."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import pandas as pd
from prettytable import PrettyTable

from reinit_lab.api import ReinitLabError, ResultsContext, SchemaError
from reinit_lab.api.harness import FLATNESS_FILE, MARGINS_FILE, RESULTS_COLUMNS, SPEED_FILE, WEIGHT_SIZE_FILE
from reinit_lab.api.metalab import (
    LABEL_ORDER,
    best_method_labels,
    fit_tree,
    leaf_report,
    outcome_grids,
    pairwise_significance,
)

if TYPE_CHECKING:
    from pathlib import Path

logger = logging.getLogger(__name__)

SETTING_COLUMNS = [
    'alpha_or_dataset',
    'penalty',
    'budget',
    'dropout',
    'initializer',
    'n_train',
    'n_classes',
    'seed',
]
TREE_FEATURES = [
    'n_train',
    'n_classes',
    'arch',
    'dropout',
    'initializer',
    'alpha_or_dataset',
    'penalty',
    'budget',
]
SMALLEST_MARGINS_REPORTED = 50


class ReportKind(enum.Enum):
    """Available reports."""

    TABLE1 = 'table1'
    TABLE3 = 'table3'
    SIGNIFICANCE = 'significance'
    TREE = 'tree'
    MARGINS = 'margins'
    FLATNESS = 'flatness'
    SPEED = 'speed'
    WEIGHT_SIZE = 'weightsize'


@dataclass
class Report:
    """A rendered report and the artifacts written for it."""

    title: str
    tables: list[PrettyTable] = field(default_factory=list)
    text: str = ''
    artifacts: list[Path] = field(default_factory=list)

    def render(self) -> str:
        """Text shown on the console."""
        parts = [self.title, *(table.get_string() for table in self.tables)]
        if self.text:
            parts.append(self.text)
        return '\n\n'.join(parts)


def _read_csv(path: Path, columns: list[str]) -> pd.DataFrame:
    if not path.is_file():
        err_msg = f'{path} does not exist.'
        raise SchemaError(err_msg)
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError as exception:
        err_msg = f'{path} is empty.'
        raise SchemaError(err_msg) from exception
    missing = [column for column in columns if column not in frame.columns]
    if missing:
        err_msg = f'{path.name} misses the columns {", ".join(missing)}.'
        raise SchemaError(err_msg)
    if frame.empty:
        err_msg = f'{path.name} holds no rows.'
        raise SchemaError(err_msg)
    return frame


def load_results(context: ResultsContext) -> pd.DataFrame:
    """Reads results.csv.

    Raises:
        SchemaError: If the file is missing, misses a column or holds no rows.
    """
    return _read_csv(context.results_file_path, RESULTS_COLUMNS)


def _ok(results: pd.DataFrame) -> pd.DataFrame:
    frame = results[results['status'] == 'ok'].dropna(subset=['test_acc'])
    if frame.empty:
        err_msg = 'results.csv holds no successful runs.'
        raise SchemaError(err_msg)
    return frame


def _ordered_methods(methods: pd.Index) -> list[str]:
    present = {str(method) for method in methods}
    return [label for label in LABEL_ORDER if label in present] + sorted(present - set(LABEL_ORDER))


def accuracy_summary(results: pd.DataFrame, by: str) -> pd.DataFrame:
    """Mean, standard deviation and count of the test accuracy per (by, method) over seeds."""
    summary = _ok(results).groupby([by, 'method'])['test_acc'].agg(['mean', 'std', 'count']).reset_index()
    summary['std'] = summary['std'].fillna(0.0)
    return summary


def _accuracy_table(context: ResultsContext, by: str, label: str, name: str) -> Report:
    summary = accuracy_summary(load_results(context), by)
    methods = _ordered_methods(pd.Index(summary['method'].unique()))
    table = PrettyTable([label, *methods])
    for value, part in summary.groupby(by, sort=True):
        cells = {row.method: f'{100 * row.mean:.1f}±{100 * row.std:.1f}' for row in part.itertuples()}
        table.add_row([f'{value:g}', *(cells.get(method, '-') for method in methods)])
    table.align = 'r'
    path = context.artifact_path(f'{name}.csv')
    summary.to_csv(path, index=False)
    return Report(title=f'Test accuracy (%) by {label}, mean±std over seeds', tables=[table], artifacts=[path])


def significance_report(context: ResultsContext, alpha: float = 0.05) -> Report:
    """Pairwise sign tests per architecture, written to significance.csv."""
    grids = outcome_grids(_ok(load_results(context)), SETTING_COLUMNS)
    frames = []
    tables = []
    for arch, grid in grids.items():
        result = pairwise_significance(grid, alpha)
        frames.append(result.to_frame())
        methods = grid.methods
        table = PrettyTable([f'{arch}: row \\ column', *methods])
        for row in methods:
            cells = []
            for column in methods:
                if row == column:
                    cells.append('')
                    continue
                pair = result.get(row, column)
                mark = ('*' if pair.star else '') + ('o' if pair.circle else '')
                cells.append(f'{pair.wins}/{pair.trials}{mark}' if pair.p_value is not None else 'n/e')
            table.add_row([row, *cells])
        tables.append(table)
    path = context.artifact_path('significance.csv')
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)
    text = 'cell: column wins / untied settings; * raw 95%, o after Holm; n/e no evidence (all tied)'
    return Report(title='Pairwise significance', tables=tables, text=text, artifacts=[path])


def tree_report(context: ResultsContext, min_leaf: int = 7, max_depth: int = 4) -> Report:
    """Best-method decision tree over all settings, written to tree.txt."""
    grids = outcome_grids(_ok(load_results(context)), SETTING_COLUMNS)
    rows = []
    labels: list[str] = []
    for arch, grid in grids.items():
        features = grid.features.copy()
        features['arch'] = arch
        rows.append(features[TREE_FEATURES])
        labels += best_method_labels(grid)
    tree = fit_tree(pd.concat(rows, ignore_index=True), labels, min_leaf=min_leaf, max_depth=max_depth)

    table = PrettyTable(['Leaf', 'Samples', 'Gini', 'Counts', 'Top methods'])
    for leaf in leaf_report(tree):
        counts = ', '.join(f'{label}:{count}' for label, count in leaf.counts.items())
        table.add_row([leaf.path, leaf.samples, f'{leaf.gini:.3f}', counts, ', '.join(leaf.top)])
    table.align = 'l'
    path = context.artifact_path('tree.txt')
    try:
        path.write_text(tree.dump() + '\n\n' + table.get_string() + '\n')
    except OSError as exception:
        raise ReinitLabError(str(exception)) from exception
    return Report(title='Best-method decision tree', tables=[table], text=tree.dump(), artifacts=[path])


def _with_settings(context: ResultsContext, file_name: str, columns: list[str]) -> pd.DataFrame:
    frame = _read_csv(context.artifact_path(file_name), columns)
    results = load_results(context)[['run_id', 'method', 'alpha_or_dataset', 'penalty']]
    return frame.merge(results, on='run_id', how='inner')


def margins_report(context: ResultsContext) -> Report:
    """Mean of the smallest training margins per (alpha, method)."""
    frame = _with_settings(context, MARGINS_FILE, ['run_id', 'rank', 'margin'])
    smallest = frame[frame['rank'] < SMALLEST_MARGINS_REPORTED]
    summary = (
        smallest.groupby(['alpha_or_dataset', 'method'])['margin']
        .agg(['mean', 'min', 'count'])
        .reset_index()
        .rename(columns={'mean': f'mean_smallest_{SMALLEST_MARGINS_REPORTED}'})
    )
    return _summary_report(context, summary, 'margins_summary', 'Smallest training margins')


def flatness_report(context: ResultsContext) -> Report:
    """Mean change of training accuracy per (alpha, method, sigma) with its standard error."""
    frame = _with_settings(context, FLATNESS_FILE, ['run_id', 'sigma', 'draw', 'delta_acc', 'delta_loss'])
    summary = (
        frame.groupby(['alpha_or_dataset', 'method', 'sigma'])
        .agg(delta_acc=('delta_acc', 'mean'), stderr=('delta_acc', 'sem'), delta_loss=('delta_loss', 'mean'))
        .reset_index()
    )
    summary['stderr'] = summary['stderr'].fillna(0.0)
    return _summary_report(context, summary, 'flatness_summary', 'Training accuracy change under perturbation')


def speed_report(context: ResultsContext) -> Report:
    """Mean steps to the speed threshold per (alpha, method, round) over the runs that reached it."""
    frame = _with_settings(context, SPEED_FILE, ['run_id', 'round', 'threshold', 'steps'])
    summary = (
        frame.groupby(['alpha_or_dataset', 'method', 'round'])
        .agg(mean_steps=('steps', 'mean'), reached=('steps', 'count'), runs=('run_id', 'count'))
        .reset_index()
    )
    return _summary_report(context, summary, 'speed_summary', 'Steps to the accuracy threshold per round')


def weight_size_report(context: ResultsContext) -> Report:
    """Mean weight-size measures and ratios to the baseline per (alpha, method)."""
    frame = _with_settings(
        context, WEIGHT_SIZE_FILE, ['run_id', 'frob_product', 'head_measure', 'ratio_vs_baseline']
    )
    summary = (
        frame.groupby(['alpha_or_dataset', 'method'])[['frob_product', 'head_measure', 'ratio_vs_baseline']]
        .mean()
        .reset_index()
    )
    return _summary_report(context, summary, 'weightsize_summary', 'Weight size')


def _summary_report(context: ResultsContext, summary: pd.DataFrame, name: str, title: str) -> Report:
    table = PrettyTable([str(column) for column in summary.columns])
    for row in summary.itertuples(index=False):
        table.add_row([f'{value:.4g}' if isinstance(value, float) else value for value in row])
    table.align = 'r'
    path = context.artifact_path(f'{name}.csv')
    summary.to_csv(path, index=False)
    return Report(title=title, tables=[table], artifacts=[path])


def report(directory: Path, kind: ReportKind) -> Report:
    """Builds a report over a results directory.

    Args:
        directory: The results directory.
        kind: The report kind.

    Returns:
        The report.

    Raises:
        ConfigError: If the directory does not exist.
        SchemaError: If a required file is missing, misses columns or holds no rows.
    """
    context = ResultsContext(directory)
    if kind is ReportKind.TABLE1:
        result = _accuracy_table(context, 'alpha_or_dataset', 'alpha', 'table1')
    elif kind is ReportKind.TABLE3:
        result = _accuracy_table(context, 'penalty', 'L2 penalty', 'table3')
    elif kind is ReportKind.SIGNIFICANCE:
        result = significance_report(context)
    elif kind is ReportKind.TREE:
        result = tree_report(context)
    elif kind is ReportKind.MARGINS:
        result = margins_report(context)
    elif kind is ReportKind.FLATNESS:
        result = flatness_report(context)
    elif kind is ReportKind.SPEED:
        result = speed_report(context)
    else:
        result = weight_size_report(context)
    for path in result.artifacts:
        logger.info('Wrote %s.', path)
    return result
