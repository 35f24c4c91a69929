"""Tests for masks, the reinitialization update, layerwise rounds, schedules and whole-method runs."""

from __future__ import annotations

import math

import numpy as np
import pytest

from reinit_lab.api import ConfigError, ContractViolationError
from reinit_lab.api import reinit as reinit_module
from reinit_lab.api.data import SyntheticData, gen_synthetic
from reinit_lab.api.model import Network, SplitData, TrainTrace, block_output
from reinit_lab.api.numerics import RngStream, frobenius_norm
from reinit_lab.api.presets import build_network
from reinit_lab.api.reinit import (
    RoundSpec,
    apply_reinit,
    compute_block_stats,
    insert_or_update_lambda,
    lw_round,
    make_schedule,
    mask_fc,
    mask_fixed,
    mask_random,
    mask_smallest,
    record_init_scales,
    rescale_blocks,
    run_method,
    train_method,
)
from reinit_lab.schema import (
    METHOD_ORDER,
    ArchName,
    ArchSection,
    LwFlags,
    Method,
    ReinitPlan,
    ScheduleVariant,
    TrainConfig,
)

from .builders import dense_network


def plan_for(method: Method, **updates: object) -> ReinitPlan:
    values: dict[str, object] = {'repeats': 2, 'steps_per_round': 4, 'stats_sample_size': 32}
    values.update(updates)
    return ReinitPlan(method=method, **values)  # type: ignore[arg-type]


def no_training(*args: object, **kwargs: object) -> TrainTrace:  # noqa: ARG001
    return TrainTrace()


def test_apply_reinit_example():
    network = dense_network(1, 3, use_bias=False)
    network.params.assign(np.array([1.0, 2.0, 3.0]))
    apply_reinit(network.params, np.array([False, True, False]), np.full(3, 9.0))
    assert network.params.flat.tolist() == [1.0, 9.0, 3.0]


def test_apply_reinit_with_empty_and_full_masks(mlp):
    before = mlp.params.flat.copy()
    eta = mlp.sample_init(RngStream(1))
    apply_reinit(mlp.params, np.zeros(mlp.params.d, dtype=bool), eta)
    assert np.array_equal(mlp.params.flat, before)
    apply_reinit(mlp.params, np.ones(mlp.params.d, dtype=bool), eta)
    assert np.array_equal(mlp.params.flat, eta)


def test_apply_reinit_partitions_the_parameters(mlp):
    before = mlp.params.flat.copy()
    eta = mlp.sample_init(RngStream(2))
    mask = mask_random(mlp.params.d, 0.3, RngStream(3))
    apply_reinit(mlp.params, mask, eta)
    assert np.array_equal(mlp.params.flat[mask], eta[mask])
    assert np.array_equal(mlp.params.flat[~mask], before[~mask])


def test_apply_reinit_rejects_length_mismatch(mlp):
    with pytest.raises(ContractViolationError):
        apply_reinit(mlp.params, np.zeros(3, dtype=bool), np.zeros(3))


def test_mask_random_cardinality():
    assert mask_random(10, 0.2, RngStream(0)).sum() == 2
    assert mask_random(10, 1.0, RngStream(0)).all()
    assert mask_random(7, 0.5, RngStream(0)).sum() == 3


def test_mask_sizes_survive_float_rounding():
    assert mask_random(100, 0.29, RngStream(0)).sum() == 29
    assert mask_smallest(np.arange(100.0), 0.29).sum() == 29
    assert mask_fixed(100, 0.57, RngStream(0)).sum() == 57


def test_mask_random_differs_between_rounds():
    rounds = RngStream(0).child('round')
    first = mask_random(1000, 0.2, rounds.child(1).child('mask'))
    second = mask_random(1000, 0.2, rounds.child(2).child('mask'))
    assert not np.array_equal(first, second)


@pytest.mark.parametrize('fraction', [0.0, -0.1, 1.5])
def test_masks_reject_invalid_fractions(fraction):
    with pytest.raises(ContractViolationError):
        mask_random(10, fraction, RngStream(0))
    with pytest.raises(ContractViolationError):
        mask_smallest(np.ones(10), fraction)


def test_mask_fixed_is_stable_per_run_and_differs_between_runs():
    run = RngStream(0).child(1)
    assert np.array_equal(mask_fixed(1000, 0.2, run), mask_fixed(1000, 0.2, run))
    assert not np.array_equal(mask_fixed(1000, 0.2, run), mask_fixed(1000, 0.2, RngStream(0).child(2)))
    assert mask_fixed(1000, 0.2, run).sum() == 200


def test_mask_smallest_examples():
    weights = np.array([0.5, -0.1, 2.0, 0.05, -0.3])
    assert mask_smallest(weights, 0.4).tolist() == [False, True, False, True, False]
    assert mask_smallest(np.ones(5), 0.4).tolist() == [True, True, False, False, False]
    assert mask_smallest(weights, 1.0).all()


def test_mask_cardinalities_agree(mlp):
    d = mlp.params.d
    expected = math.floor(0.2 * d)
    assert mask_random(d, 0.2, RngStream(0)).sum() == expected
    assert mask_fixed(d, 0.2, RngStream(0)).sum() == expected
    assert mask_smallest(mlp.params.flat, 0.2).sum() == expected


def test_mask_fc_on_the_mlp_covers_the_last_dense_layer(mlp):
    mask = mask_fc(mlp)
    head = mlp.blocks[2][0]
    assert mask.sum() == head.params['weight'].size + head.params['bias'].size
    assert mask[-(32 * 8 + 8) :].all()


def test_mask_fc_on_the_cnn_covers_both_dense_layers(scnn):
    dense = scnn.dense_layers_above(scnn.fc_boundary)
    expected = sum(layer.params['weight'].size + layer.params['bias'].size for layer in dense)
    assert len(dense) == 2
    assert mask_fc(scnn).sum() == expected


def test_mask_fc_needs_a_dense_layer_above_the_boundary():
    with pytest.raises(ConfigError):
        mask_fc(dense_network(4, 3))


def test_record_init_scales_examples():
    network = dense_network(2, 1)
    network.params.assign(np.array([3.0, 4.0, 0.0]))
    scales = record_init_scales(network)
    layer_id = network.blocks[0][0].layer_id
    assert scales[(layer_id, 'weight')] == 5.0
    assert scales[(layer_id, 'bias')] == 0.0
    with pytest.raises(ContractViolationError):
        record_init_scales(network)


def test_rescale_blocks_restores_recorded_norms(mlp):
    record_init_scales(mlp)
    first = mlp.blocks[0][0]
    first.params['weight'] *= 2.0
    first.params['bias'][...] = 0.0
    mlp.blocks[2][0].params['weight'] *= 3.0
    untouched = mlp.blocks[2][0].params['weight'].copy()
    rescale_blocks(mlp, 1)
    recorded = mlp.init_scales[(first.layer_id, 'weight')]
    assert math.isclose(frobenius_norm(first.params['weight']), recorded, rel_tol=1e-12)
    assert not first.params['bias'].any()
    assert np.array_equal(mlp.blocks[2][0].params['weight'], untouched)


def test_rescale_blocks_leaves_matching_norms_unchanged(mlp):
    record_init_scales(mlp)
    before = mlp.params.flat.copy()
    rescale_blocks(mlp, None)
    assert np.array_equal(mlp.params.flat, before)


def test_rescale_blocks_scales_every_tensor_when_k_is_none(mlp):
    record_init_scales(mlp)
    mlp.params.flat[...] *= 0.5
    rescale_blocks(mlp, None)
    for segment in mlp.params.segments:
        recorded = mlp.init_scales[(segment.layer_id, segment.name)]
        assert math.isclose(frobenius_norm(mlp.params.view(segment)), recorded, rel_tol=1e-12, abs_tol=0.0)


def test_rescale_blocks_preconditions(mlp):
    with pytest.raises(ContractViolationError):
        rescale_blocks(mlp, 1)
    record_init_scales(mlp)
    with pytest.raises(ContractViolationError):
        rescale_blocks(mlp, 4)


def test_compute_block_stats_examples():
    network = dense_network(1, 1, 2, use_bias=False)
    network.params.assign(np.array([1.0, 0.3, -0.3]))
    assert compute_block_stats(network, 1, np.array([[1.0], [3.0]])) == (2.0, 1.0)
    mu, sigma = compute_block_stats(network, 1, np.array([[2.0], [2.0]]))
    assert mu == 2.0
    assert sigma == 1e-8


def test_insert_or_update_lambda(mlp):
    d = mlp.params.d
    layer = insert_or_update_lambda(mlp, 1, 0.5, 2.0)
    assert mlp.lambdas == {1: layer}
    assert mlp.params.d == d
    assert insert_or_update_lambda(mlp, 1, 1.0, 3.0, repeat=2) is layer
    assert (layer.mu, layer.sigma) == (1.0, 3.0)
    with pytest.raises(ContractViolationError):
        insert_or_update_lambda(mlp, 1, 0.0, 1.0)
    with pytest.raises(ContractViolationError):
        insert_or_update_lambda(mlp, 2, 0.0, 1.0, repeat=2)
    assert [type(layer).__name__ for layer in mlp.layers()].count('LambdaNorm') == 1


def test_inserted_lambda_standardizes_the_sample_it_was_fit_on(mlp, small_spec):
    sample = gen_synthetic(small_spec).train.x
    for k in range(1, mlp.k + 1):
        mu, sigma = compute_block_stats(mlp, k, sample)
        layer = insert_or_update_lambda(mlp, k, mu, sigma)
        z = layer.forward(block_output(mlp, sample, k), training=False)
        assert abs(z.mean()) < 1e-9
        assert abs(z.std() - 1.0) < 1e-6


def test_lw_round_without_rescale_or_normalize_reinitializes_above_k(mlp, small_spec, monkeypatch):
    monkeypatch.setattr(reinit_module, 'train', no_training)
    record_init_scales(mlp)
    before = mlp.params.flat.copy()
    rng = RngStream(0).child('round').child(0)
    flags = LwFlags(do_rescale=False, do_normalize=False)
    split = SplitData(gen_synthetic(small_spec).train)
    lw_round(mlp, RoundSpec(0, 1, 1, 4), split, TrainConfig(), rng, flags=flags, sample_x=split.train.x)
    kept = mlp.params.mask_of(mlp.layer_ids_through(1))
    eta = mlp.sample_init(rng.child('eta'))
    assert np.array_equal(mlp.params.flat[kept], before[kept])
    assert np.array_equal(mlp.params.flat[~kept], eta[~kept])
    assert mlp.lambdas == {}


def test_lw_round_keeps_rescaled_blocks_and_inserts_lambda(small_spec, monkeypatch):
    seen: list[np.ndarray] = []

    def capture(network: Network, *args: object, **kwargs: object) -> TrainTrace:  # noqa: ARG001
        seen.append(network.params.flat.copy())
        return TrainTrace()

    monkeypatch.setattr(reinit_module, 'train', capture)
    networks = []
    for _ in range(2):
        network = build_network(ArchSection(), small_spec)
        network.initialize(RngStream(7))
        record_init_scales(network)
        network.params.flat[...] *= 1.5
        networks.append(network)
    expected, network = networks
    rescale_blocks(expected, 2)

    split = SplitData(gen_synthetic(small_spec).train)
    flags = LwFlags()
    lw_round(network, RoundSpec(0, 2, 1, 4), split, TrainConfig(), RngStream(1), flags=flags, sample_x=split.train.x)
    kept = network.params.mask_of(network.layer_ids_through(2))
    assert np.array_equal(seen[0][kept], expected.params.flat[kept])
    assert list(network.lambdas) == [2]


def test_lw_round_on_the_last_block_only_touches_head_layers(mlp, small_spec, monkeypatch):
    monkeypatch.setattr(reinit_module, 'train', no_training)
    record_init_scales(mlp)
    before = mlp.params.flat.copy()
    split = SplitData(gen_synthetic(small_spec).train)
    flags = LwFlags(do_rescale=False)
    lw_round(mlp, RoundSpec(0, 3, 1, 4), split, TrainConfig(), RngStream(0), flags=flags, sample_x=split.train.x)
    # The MLP head holds no trainable layer.
    assert np.array_equal(mlp.params.flat, before)
    assert list(mlp.lambdas) == [3]


def test_lw_round_freeze_kept(mlp, small_spec):
    record_init_scales(mlp)
    before = mlp.params.flat.copy()
    split = SplitData(gen_synthetic(small_spec).train)
    flags = LwFlags(do_rescale=False, freeze_kept=True)
    config = TrainConfig(momentum=0.9)
    trace = lw_round(mlp, RoundSpec(0, 1, 1, 5), split, config, RngStream(0), flags=flags, sample_x=split.train.x)
    kept = mlp.params.mask_of(mlp.layer_ids_through(1))
    assert trace.total_steps == 5
    assert np.array_equal(mlp.params.flat[kept], before[kept])


def test_lw_round_needs_a_kept_block(mlp, small_spec):
    split = SplitData(gen_synthetic(small_spec).train)
    flags = LwFlags()
    with pytest.raises(ContractViolationError):
        lw_round(mlp, RoundSpec(0, None, 1, 4), split, TrainConfig(), RngStream(0), flags=flags, sample_x=split.train.x)


def test_main_schedule():
    plan = ReinitPlan(method=Method.LW, repeats=3, steps_per_round=200)
    schedule = make_schedule(plan, 3)
    assert len(schedule) == 9
    assert sum(round_spec.steps for round_spec in schedule) == 1800
    assert [(r.kept_block, r.repeat) for r in schedule[:4]] == [(1, 1), (1, 2), (1, 3), (2, 1)]
    assert [r.index for r in schedule] == list(range(9))


def test_baseline_schedule_is_one_round_with_the_summed_budget():
    schedule = make_schedule(ReinitPlan(method=Method.BL, repeats=3, steps_per_round=200), 3)
    assert schedule == [RoundSpec(index=0, kept_block=None, repeat=1, steps=1800)]


def test_appendix_schedule():
    plan = ReinitPlan(method=Method.LW, schedule_variant=ScheduleVariant.APPENDIX_A, steps_per_round=10)
    schedule = make_schedule(plan, 3)
    assert [r.kept_block for r in schedule] == [1, 1, 2, 2, 3]
    assert [r.repeat for r in schedule] == [1, 2, 1, 2, 1]
    clamped = make_schedule(plan, 2)
    assert [r.kept_block for r in clamped] == [1, 1, 2, 2, 2]
    assert [r.repeat for r in clamped] == [1, 2, 1, 2, 3]
    baseline = make_schedule(plan.model_copy(update={'method': Method.BL}), 3)
    assert baseline[0].steps == 50


def test_plan_blocks_override_the_network_depth():
    schedule = make_schedule(ReinitPlan(method=Method.WELS, blocks=1, repeats=4, steps_per_round=5), 3)
    assert len(schedule) == 4
    assert {r.kept_block for r in schedule} == {1}


def counting_apply_reinit(monkeypatch: pytest.MonkeyPatch) -> list[np.ndarray]:
    masks: list[np.ndarray] = []
    original = reinit_module.apply_reinit

    def wrapper(params, mask, eta):
        masks.append(mask.copy())
        original(params, mask, eta)

    monkeypatch.setattr(reinit_module, 'apply_reinit', wrapper)
    return masks


@pytest.mark.parametrize('method', [Method.BL, Method.RESCALE_ONLY])
def test_methods_without_reinitialization(method, small_spec, fast_config, monkeypatch):
    masks = counting_apply_reinit(monkeypatch)
    record = run_method(plan_for(method), ArchSection(), small_spec, fast_config, seed=0)
    assert masks == []
    assert record.test_acc is not None


def test_wels_reuses_one_mask(small_spec, fast_config, monkeypatch):
    masks = counting_apply_reinit(monkeypatch)
    run_method(plan_for(Method.WELS), ArchSection(), small_spec, fast_config, seed=0)
    assert len(masks) == 5
    assert all(np.array_equal(mask, masks[0]) for mask in masks)


def test_welsr_draws_a_new_mask_every_round(small_spec, fast_config, monkeypatch):
    masks = counting_apply_reinit(monkeypatch)
    run_method(plan_for(Method.WELSR), ArchSection(), small_spec, fast_config, seed=0)
    assert len(masks) == 5
    assert not np.array_equal(masks[0], masks[1])


def test_fc_reinitializes_the_fc_support_every_round(small_spec, fast_config, monkeypatch):
    masks = counting_apply_reinit(monkeypatch)
    run_method(plan_for(Method.FC, blocks=1, repeats=3), ArchSection(), small_spec, fast_config, seed=0)
    support = mask_fc(build_network(ArchSection(), small_spec))
    assert len(masks) == 2
    assert all(np.array_equal(mask, support) for mask in masks)


def test_lw_run_inserts_one_lambda_per_block(small_spec, fast_config):
    run = train_method(plan_for(Method.LW), ArchSection(), small_spec, fast_config, seed=0)
    assert sorted(run.network.lambdas) == [1, 2, 3]
    assert [metrics.kept_block for metrics in run.record.rounds] == [1, 1, 2, 2, 3, 3]
    assert len(run.traces) == 6


def test_methods_are_compute_matched(small_spec, fast_config):
    steps = {
        method: run_method(plan_for(method), ArchSection(), small_spec, fast_config, seed=1).total_steps
        for method in (*METHOD_ORDER, Method.RESCALE_ONLY)
    }
    assert set(steps.values()) == {24}


def test_run_record_contents(small_spec, fast_config):
    record = run_method(plan_for(Method.DSD), ArchSection(), small_spec, fast_config, seed=2, run_id='dsd')
    assert record.run_id == 'dsd'
    assert len(record.rounds) == 6
    assert record.test_acc == record.rounds[-1].test_acc
    assert record.val_acc is None
    assert all(metrics.steps == 4 for metrics in record.rounds)
    assert set(record.rounds[0].steps_to_threshold) == {'0.5', '0.9', '0.99', '1.0'}


def test_runs_are_deterministic(small_spec, fast_config):
    first = run_method(plan_for(Method.WELSR), ArchSection(), small_spec, fast_config, seed=3)
    second = run_method(plan_for(Method.WELSR), ArchSection(), small_spec, fast_config, seed=3)
    assert first.model_dump(exclude={'wall_ms'}) == second.model_dump(exclude={'wall_ms'})


def test_methods_of_a_seed_share_the_initialization(small_spec, fast_config, monkeypatch):
    starts: list[np.ndarray] = []
    original = reinit_module.record_init_scales

    def capture(network):
        starts.append(network.params.flat.copy())
        return original(network)

    monkeypatch.setattr(reinit_module, 'record_init_scales', capture)
    for method in (Method.BL, Method.LW):
        run_method(plan_for(method), ArchSection(), small_spec, fast_config, seed=4)
    assert np.array_equal(starts[0], starts[1])


def test_test_set_never_influences_training(small_spec, fast_config):
    data = gen_synthetic(small_spec)
    other_test = gen_synthetic(small_spec.model_copy(update={'seed': 99})).test
    runs = [
        train_method(plan_for(Method.LW), ArchSection(), small_spec, fast_config, seed=0, data=candidate)
        for candidate in (data, SyntheticData(train=data.train, test=other_test))
    ]
    assert np.array_equal(runs[0].network.params.flat, runs[1].network.params.flat)
    assert runs[0].record.train_acc == runs[1].record.train_acc


def test_plan_deeper_than_the_network_is_rejected(small_spec, fast_config):
    with pytest.raises(ConfigError):
        run_method(plan_for(Method.LW, blocks=4), ArchSection(), small_spec, fast_config, seed=0)


def test_validation_split_is_reported(small_spec):
    config = TrainConfig(max_steps=5, val_fraction=0.25, early_stop=True)
    record = run_method(plan_for(Method.BL), ArchSection(), small_spec, config, seed=0)
    assert record.val_acc is not None


def test_cnn_runs_every_method(image_spec):
    config = TrainConfig(learning_rate=0.01, momentum=0.9, batch_size=8)
    arch = ArchSection(name=ArchName.SCNN_MINI)
    for method in (Method.FC, Method.LW):
        record = run_method(plan_for(method, repeats=1, steps_per_round=2), arch, image_spec, config, seed=0)
        assert record.total_steps == 4
