"""Tests for margins, weight size, flatness and round speed."""

from __future__ import annotations

import itertools

import numpy as np
import pytest
from scipy import stats

from reinit_lab.api import ContractViolationError, diagnostics
from reinit_lab.api.data import gen_synthetic
from reinit_lab.api.diagnostics import WeightSizeReport, flatness_curve, round_speed, softmax_margins, weight_size
from reinit_lab.api.model import Dataset, EpochRecord, SplitData, TrainTrace, train
from reinit_lab.api.numerics import RngStream
from reinit_lab.schema import TrainConfig

from .builders import dense_network


def test_margins_of_uniform_predictions_are_zero(mlp):
    mlp.params.assign(np.zeros(mlp.params.d))
    report = softmax_margins(mlp, Dataset(np.ones((3, 12)), np.array([0, 4, 7], dtype=np.int64)))
    assert np.allclose(report.margins, 0.0)


def test_margins_are_sorted_and_truncated(mlp, small_spec):
    train_set = gen_synthetic(small_spec).train
    report = softmax_margins(mlp, train_set, m=10)
    assert report.margins.shape == (48,)
    assert np.all(np.diff(report.margins) >= 0)
    assert np.array_equal(report.smallest, report.margins[:10])
    assert np.all(np.abs(report.margins) <= 1.0)


def test_margins_of_misclassified_examples_are_negative():
    network = dense_network(2, 2, use_bias=False)
    network.params.assign(np.array([1.0, 0.0, 0.0, 1.0]))
    report = softmax_margins(network, Dataset(np.array([[5.0, 0.0], [0.0, 5.0]]), np.array([1, 1], dtype=np.int64)))
    assert report.margins[0] < 0
    assert report.margins[1] > 0


def test_weight_size_frobenius_product():
    network = dense_network(2, 2, 2, use_bias=False)
    network.params.assign(np.array([2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0]))
    report = weight_size(network, np.ones((4, 2)))
    assert np.isclose(report.frob_product, 36.0)
    assert report.ratio_vs_baseline is None


def test_head_measure_of_zero_activations_is_zero():
    network = dense_network(2, 2, 2, use_bias=False)
    network.initialize(RngStream(0))
    assert weight_size(network, np.zeros((4, 2))).head_measure == 0.0


def test_head_measure_uses_the_last_dense_layer():
    network = dense_network(2, 2, 2, use_bias=False)
    network.params.assign(np.array([1.0, 0.0, 0.0, 1.0, 3.0, 0.0, 0.0, 4.0]))
    report = weight_size(network, np.array([[3.0, 4.0]]))
    # activations entering the head have norm 5, the head weight has norm 5
    assert np.isclose(report.head_measure, 25.0)


def test_ratio_versus_baseline():
    report = WeightSizeReport(frob_product=1.0, head_measure=3.0)
    assert report.with_baseline(WeightSizeReport(1.0, 2.0)).ratio_vs_baseline == 1.5
    assert report.with_baseline(WeightSizeReport(1.0, 0.0)).ratio_vs_baseline is None


def test_flatness_at_zero_noise_is_exactly_zero(mlp, small_spec):
    train_set = gen_synthetic(small_spec).train
    curve = flatness_curve(mlp, train_set, [0.05, 0.0], 3, RngStream(0))
    assert [point.sigma_noise for point in curve.points] == [0.0, 0.05]
    zero = curve.points[0]
    assert zero.delta_acc == 0.0
    assert zero.delta_loss == 0.0
    assert zero.delta_acc_stderr == 0.0
    assert len(curve.points[1].draws_acc) == 3


def test_flatness_restores_parameters_and_is_deterministic(mlp, small_spec):
    train_set = gen_synthetic(small_spec).train
    before = mlp.params.flat.copy()
    first = flatness_curve(mlp, train_set, [0.0, 0.5], 4, RngStream(1))
    assert np.array_equal(mlp.params.flat, before)
    second = flatness_curve(mlp, train_set, [0.0, 0.5], 4, RngStream(1))
    assert first == second
    assert first.points[1].draws_loss != (0.0,) * 4


def test_flatness_grows_with_the_noise_scale(mlp, small_spec):
    train_set = gen_synthetic(small_spec).train
    train(mlp, SplitData(train_set), TrainConfig(learning_rate=0.05, max_steps=200), RngStream(4))
    curve = flatness_curve(mlp, train_set, [0.0, 0.01, 0.05, 0.2], 20, RngStream(5))
    for draws in ('draws_acc', 'draws_loss'):
        sizes = [np.abs(getattr(point, draws)) for point in curve.points]
        for lower, upper in itertools.pairwise(sizes):
            slack = 2 * (stats.sem(lower) + stats.sem(upper))
            assert upper.mean() >= lower.mean() - slack
    assert np.mean(np.abs(curve.points[-1].draws_loss)) > 0


def test_flatness_restores_parameters_when_evaluation_fails(mlp, small_spec, monkeypatch):
    train_set = gen_synthetic(small_spec).train
    before = mlp.params.flat.copy()
    calls = {'n': 0}
    original = diagnostics.accuracy

    def failing(network, dataset):
        calls['n'] += 1
        if calls['n'] > 1:
            raise RuntimeError
        return original(network, dataset)

    monkeypatch.setattr(diagnostics, 'accuracy', failing)
    with pytest.raises(RuntimeError):
        flatness_curve(mlp, train_set, [0.0, 1.0], 2, RngStream(0))
    assert np.array_equal(mlp.params.flat, before)


@pytest.mark.parametrize(('sigmas', 'n_draws'), [([0.01], 2), ([0.0, -0.1], 2), ([0.0], 0)])
def test_flatness_preconditions(mlp, small_spec, sigmas, n_draws):
    with pytest.raises(ContractViolationError):
        flatness_curve(mlp, gen_synthetic(small_spec).train, sigmas, n_draws, RngStream(0))


def test_round_speed():
    reached = TrainTrace(epochs=[EpochRecord(0, 0.3, None, 0.1), EpochRecord(5, 1.0, None, 0.1)])
    stalled = TrainTrace(epochs=[EpochRecord(0, 0.3, None, 0.1), EpochRecord(5, 0.9, None, 0.1)])
    assert round_speed([reached, stalled], 0.99) == [5, None]
    assert round_speed([reached, stalled], 0.0) == [0, 0]
    with pytest.raises(ContractViolationError):
        round_speed([reached], 1.5)
