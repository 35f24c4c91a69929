"""Meta-analysis over collections of runs: pairwise sign tests with Holm correction and CART best-method trees."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from reinit_lab.api import ConfigError, UndefinedTestError
from reinit_lab.schema import METHOD_ORDER

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.05
DEFAULT_MIN_LEAF = 7
DEFAULT_MAX_DEPTH = 4
TOP_SET_GINI = 0.5
LABEL_ORDER = tuple(method.value for method in METHOD_ORDER)


@dataclass(frozen=True)
class OutcomeGrid:
    """Test accuracies of several methods over the settings of one architecture.

    Attributes:
        architecture: Name of the architecture the settings share.
        features: One row per setting, describing it.
        accuracies: Same index as features, one column per method; missing cells are NaN.
    """

    architecture: str
    features: pd.DataFrame
    accuracies: pd.DataFrame

    @property
    def methods(self) -> list[str]:
        """Methods present in the grid, in the fixed method order."""
        present = set(self.accuracies.columns)
        ordered = [label for label in LABEL_ORDER if label in present]
        return ordered + sorted(present - set(ordered))


def outcome_grids(results: pd.DataFrame, setting_columns: Sequence[str]) -> dict[str, OutcomeGrid]:
    """Pivots successful result rows into one grid per architecture.

    Args:
        results: The results table; needs the columns method, arch, test_acc and the setting columns.
        setting_columns: Columns identifying a setting, e.g. alpha, penalty and seed.

    Returns:
        The grids keyed by architecture.

    Raises:
        ConfigError: If no successful rows are present.
    """
    frame = results
    if 'status' in frame.columns:
        frame = frame[frame['status'] == 'ok']
    frame = frame.dropna(subset=['test_acc'])
    if frame.empty:
        err_msg = 'No successful runs to analyze.'
        raise ConfigError(err_msg)
    grids = {}
    keys = list(setting_columns)
    for arch, part in frame.groupby('arch', sort=True):
        pivot = part.pivot_table(index=keys, columns='method', values='test_acc', aggfunc='mean')
        pivot.columns = [str(column) for column in pivot.columns]
        features = pivot.index.to_frame(index=False)
        pivot = pivot.reset_index(drop=True)
        grids[str(arch)] = OutcomeGrid(architecture=str(arch), features=features, accuracies=pivot)
    return grids


def exact_binomial_tail(wins: int, trials: int) -> Fraction:
    """P[X >= wins] for X ~ Binomial(trials, 1/2), as an exact fraction.

    Raises:
        UndefinedTestError: If trials is zero.
        ConfigError: If wins is outside [0, trials].
    """
    if trials < 1:
        err_msg = 'The binomial test is undefined without trials.'
        raise UndefinedTestError(err_msg)
    if not 0 <= wins <= trials:
        err_msg = f'wins must lie in [0, {trials}], got {wins}.'
        raise ConfigError(err_msg)
    return Fraction(sum(math.comb(trials, k) for k in range(wins, trials + 1)), 2**trials)


def exact_binomial_test(wins: int, trials: int) -> float:
    """One-sided exact sign-test p-value sum_{k >= wins} C(trials, k) / 2^trials. Ties must be removed first."""
    return float(exact_binomial_tail(wins, trials))


def holm_stepdown(p_values: Sequence[float], alpha: float = DEFAULT_ALPHA) -> list[bool]:
    """Holm's step-down procedure.

    Sorted p-values p_(i) are rejected while p_(i) <= alpha / (m - i + 1); the first failure stops the procedure.

    Args:
        p_values: The p-values of the family.
        alpha: Family-wise error level.

    Returns:
        Reject flags in the order of the input.
    """
    m = len(p_values)
    rejected = [False] * m
    for rank, index in enumerate(sorted(range(m), key=lambda i: (p_values[i], i))):
        if p_values[index] > alpha / (m - rank):
            break
        rejected[index] = True
    return rejected


@dataclass(frozen=True)
class PairResult:
    """Comparison of the column method against the row method over their shared settings.

    Attributes:
        row: The method in the row.
        column: The method in the column.
        wins: Settings where the column method is strictly better.
        losses: Settings where the column method is strictly worse.
        ties: Settings with equal accuracy, excluded from the test.
        p_value: One-sided p-value, None if every setting is tied.
        star: Significant at alpha without correction.
        circle: Significant after Holm correction over the architecture's table.
    """

    row: str
    column: str
    wins: int
    losses: int
    ties: int
    p_value: None | float
    star: bool
    circle: bool

    @property
    def trials(self) -> int:
        """Number of untied settings."""
        return self.wins + self.losses


@dataclass(frozen=True)
class SignificanceTable:
    """All ordered method pairs of one architecture."""

    architecture: str
    alpha: float
    pairs: list[PairResult] = field(default_factory=list)

    def get(self, row: str, column: str) -> PairResult:
        """Looks up one ordered pair.

        Raises:
            KeyError: If the pair is not part of the table.
        """
        for pair in self.pairs:
            if pair.row == row and pair.column == column:
                return pair
        raise KeyError((row, column))

    def to_frame(self) -> pd.DataFrame:
        """Tabulates the pairs with the columns arch, pair, row, column, wins, trials, ties, p, star, circle."""
        return pd.DataFrame(
            [
                {
                    'arch': self.architecture,
                    'pair': f'{pair.column}>{pair.row}',
                    'row': pair.row,
                    'column': pair.column,
                    'wins': pair.wins,
                    'trials': pair.trials,
                    'ties': pair.ties,
                    'p': pair.p_value,
                    'star': pair.star,
                    'circle': pair.circle,
                }
                for pair in self.pairs
            ],
            columns=['arch', 'pair', 'row', 'column', 'wins', 'trials', 'ties', 'p', 'star', 'circle'],
        )


def pairwise_significance(grid: OutcomeGrid, alpha: float = DEFAULT_ALPHA) -> SignificanceTable:
    """Tests every ordered method pair of a grid.

    Ties are dropped before the exact test. The Holm family is the set of pairs with a defined p-value.

    Args:
        grid: The outcome grid of one architecture.
        alpha: Significance level.

    Returns:
        The significance table.

    Raises:
        ConfigError: If a pair shares no setting.
    """
    methods = grid.methods
    counts: list[tuple[str, str, int, int, int, None | float]] = []
    for row in methods:
        for column in methods:
            if row == column:
                continue
            shared = grid.accuracies[[row, column]].dropna()
            if shared.empty:
                err_msg = f'{row} and {column} share no setting in {grid.architecture}.'
                raise ConfigError(err_msg)
            diff = shared[column].to_numpy() - shared[row].to_numpy()
            wins, losses = int(np.sum(diff > 0)), int(np.sum(diff < 0))
            p_value = exact_binomial_test(wins, wins + losses) if wins + losses else None
            counts.append((row, column, wins, losses, int(np.sum(diff == 0)), p_value))

    defined = [entry[5] for entry in counts if entry[5] is not None]
    holm = iter(holm_stepdown(defined, alpha))
    pairs = []
    for row, column, wins, losses, ties, p_value in counts:
        circle = next(holm) if p_value is not None else False
        star = p_value is not None and p_value <= alpha
        pairs.append(PairResult(row, column, wins, losses, ties, p_value, star, circle))
    return SignificanceTable(architecture=grid.architecture, alpha=alpha, pairs=pairs)


def _gini_exact(counts: Sequence[int]) -> Fraction:
    total = sum(counts)
    if total < 1 or any(count < 0 for count in counts):
        err_msg = f'Gini impurity is undefined for counts {list(counts)}.'
        raise UndefinedTestError(err_msg)
    return 1 - sum(Fraction(count, total) ** 2 for count in counts)


def gini(label_counts: Sequence[int]) -> float:
    """Gini impurity 1 - sum (n_c / n)^2.

    Raises:
        UndefinedTestError: If the counts are empty or negative.
    """
    return float(_gini_exact(label_counts))


def best_method_labels(grid: OutcomeGrid) -> list[str]:
    """Best method of every setting; ties go to the earlier method in the fixed method order."""
    methods = grid.methods
    labels = []
    for _, row in grid.accuracies[methods].iterrows():
        values = row.dropna()
        if values.empty:
            err_msg = f'A setting of {grid.architecture} has no outcome.'
            raise ConfigError(err_msg)
        best = values.max()
        labels.append(next(method for method in methods if method in values.index and values[method] == best))
    return labels


@dataclass
class TreeNode:
    """A node of a fitted tree. Internal nodes send rows matching the split to the left child."""

    samples: int
    counts: dict[str, int]
    gini: float
    depth: int
    feature: None | str = None
    threshold: None | float = None
    category: None | str = None
    left: None | TreeNode = None
    right: None | TreeNode = None

    @property
    def is_leaf(self) -> bool:
        """Whether the node has no children."""
        return self.left is None

    def condition(self) -> str:
        """Describes the split of an internal node."""
        if self.category is not None:
            return f'{self.feature} == {self.category}'
        return f'{self.feature} <= {self.threshold:g}'


@dataclass(frozen=True)
class DecisionTree:
    """A fitted CART classification tree."""

    root: TreeNode
    features: list[str]
    min_leaf: int
    max_depth: int

    def nodes(self) -> Iterator[TreeNode]:
        """Iterates over all nodes in pre-order."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if node.right is not None:
                stack.append(node.right)
            if node.left is not None:
                stack.append(node.left)

    def leaves(self) -> list[TreeNode]:
        """The leaves from left to right."""
        return [node for node in self.nodes() if node.is_leaf]

    @property
    def depth(self) -> int:
        """Depth of the deepest leaf; a single-leaf tree has depth 0."""
        return max(node.depth for node in self.nodes())

    def dump(self) -> str:
        """Indented text rendering of the tree."""
        lines: list[str] = []

        def visit(node: TreeNode, prefix: str) -> None:
            indent = '    ' * node.depth
            labels = ', '.join(_top_set(node))
            lines.append(f'{indent}{prefix}gini={node.gini:.3f} samples={node.samples} labels=[{labels}]')
            if node.left is not None and node.right is not None:
                visit(node.left, f'if {node.condition()}: ')
                visit(node.right, 'else: ')

        visit(self.root, '')
        return '\n'.join(lines)


@dataclass(frozen=True)
class _Split:
    gain: Fraction
    feature: str
    threshold: None | float
    category: None | str
    left: np.ndarray


def _counts(labels: np.ndarray, label_order: Sequence[str]) -> dict[str, int]:
    values, numbers = np.unique(labels, return_counts=True)
    found = {str(value): int(number) for value, number in zip(values, numbers, strict=True)}
    rank = {label: index for index, label in enumerate(label_order)}
    return dict(sorted(found.items(), key=lambda item: (rank.get(item[0], len(rank)), item[0])))


def _candidates(column: pd.Series) -> Iterator[tuple[None | float, None | str, np.ndarray]]:
    if pd.api.types.is_numeric_dtype(column) and not pd.api.types.is_bool_dtype(column):
        values = column.to_numpy(dtype=float)
        distinct = np.unique(values)
        for low, high in zip(distinct[:-1], distinct[1:], strict=True):
            threshold = float((low + high) / 2)
            yield threshold, None, values <= threshold
    else:
        values = column.astype(str).to_numpy()
        for category in sorted(set(values)):
            yield None, category, values == category


def _best_split(rows: pd.DataFrame, labels: np.ndarray, min_leaf: int) -> None | _Split:
    n = len(labels)
    parent = _gini_exact(list(_counts(labels, LABEL_ORDER).values()))
    best: None | _Split = None
    for feature in rows.columns:
        for threshold, category, left in _candidates(rows[feature]):
            n_left = int(left.sum())
            if n_left < min_leaf or n - n_left < min_leaf:
                continue
            left_counts = list(_counts(labels[left], LABEL_ORDER).values())
            right_counts = list(_counts(labels[~left], LABEL_ORDER).values())
            weighted = (n_left * _gini_exact(left_counts) + (n - n_left) * _gini_exact(right_counts)) / n
            gain = parent - weighted
            if gain > 0 and (best is None or gain > best.gain):
                best = _Split(gain, str(feature), threshold, category, left)
    return best


def fit_tree(
    rows: pd.DataFrame,
    labels: Sequence[str],
    min_leaf: int = DEFAULT_MIN_LEAF,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> DecisionTree:
    """Fits a greedy CART tree with Gini impurity.

    Numeric features split at midpoints between consecutive distinct values (left if <=); other features split
    one category against the rest. Impurities are compared exactly, and ties between splits go to the earlier
    feature column, then to the smaller threshold or category. A split needs a positive gain, both children
    with at least min_leaf rows, and a parent shallower than max_depth (the root has depth 0).

    Args:
        rows: Feature table, one row per sample; column order is the feature order.
        labels: Class label of every row.
        min_leaf: Minimum number of rows in a leaf.
        max_depth: Maximum depth of a leaf.

    Returns:
        The fitted tree.

    Raises:
        ConfigError: If there are no rows or the label count does not match.
    """
    label_array = np.asarray(labels, dtype=str)
    if len(rows) == 0 or len(rows) != len(label_array):
        err_msg = f'fit_tree needs a non-empty table with one label per row, got {len(rows)} rows.'
        raise ConfigError(err_msg)
    table = rows.reset_index(drop=True)

    def grow(index: np.ndarray, depth: int) -> TreeNode:
        node_labels = label_array[index]
        counts = _counts(node_labels, LABEL_ORDER)
        node = TreeNode(samples=len(index), counts=counts, gini=gini(list(counts.values())), depth=depth)
        if depth >= max_depth:
            return node
        split = _best_split(table.iloc[index], node_labels, min_leaf)
        if split is None:
            return node
        node.feature, node.threshold, node.category = split.feature, split.threshold, split.category
        node.left = grow(index[split.left], depth + 1)
        node.right = grow(index[~split.left], depth + 1)
        return node

    tree = DecisionTree(
        root=grow(np.arange(len(table)), 0),
        features=[str(column) for column in table.columns],
        min_leaf=min_leaf,
        max_depth=max_depth,
    )
    logger.info('Fitted tree on %d rows: depth %d, %d leaves.', len(table), tree.depth, len(tree.leaves()))
    return tree


def _top_set(node: TreeNode) -> list[str]:
    ranked = sorted(node.counts.items(), key=lambda item: -item[1])
    if node.gini <= TOP_SET_GINI or len(ranked) == 1:
        return [ranked[0][0]]
    second = ranked[1][1]
    return [label for label, count in ranked if count >= second]


@dataclass(frozen=True)
class LeafSummary:
    """Reported methods of one leaf together with the path leading to it."""

    path: str
    samples: int
    gini: float
    counts: dict[str, int]
    top: list[str]


def leaf_report(tree: DecisionTree) -> list[LeafSummary]:
    """Summarizes every leaf.

    Leaves with Gini <= 0.5 report their majority method; more impure leaves report every method at least as
    frequent as the second most frequent one.
    """
    summaries: list[LeafSummary] = []

    def visit(node: TreeNode, path: list[str]) -> None:
        if node.left is None or node.right is None:
            summaries.append(
                LeafSummary(' and '.join(path) or 'all', node.samples, node.gini, dict(node.counts), _top_set(node))
            )
            return
        condition = node.condition()
        visit(node.left, [*path, condition])
        visit(node.right, [*path, f'not ({condition})'])

    visit(tree.root, [])
    return summaries
