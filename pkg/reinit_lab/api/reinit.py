"""Reinitialization regimes: masks, the partial reinitialization update, layerwise rounds and round schedules."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt

from reinit_lab.api import ConfigError, ContractViolationError
from reinit_lab.api.data import SyntheticData, gen_synthetic
from reinit_lab.api.layers import SIGMA_FLOOR, LambdaNorm
from reinit_lab.api.model import (
    Network,
    ParameterStore,
    SplitData,
    TrainTrace,
    accuracy,
    block_output,
    split_dataset,
    train,
)
from reinit_lab.api.numerics import RngStream, Tensor, frobenius_norm
from reinit_lab.api.presets import build_network
from reinit_lab.schema import (
    ArchSection,
    LwFlags,
    Method,
    ReinitPlan,
    RoundMetrics,
    RunRecord,
    ScheduleVariant,
    SyntheticSpec,
    TrainConfig,
)

if TYPE_CHECKING:
    from reinit_lab.api.model import Dataset

logger = logging.getLogger(__name__)

Mask = npt.NDArray[np.bool_]

APPENDIX_A_KEPT_BLOCKS = (1, 1, 2, 2, 3)


@dataclass(frozen=True)
class RoundSpec:
    """One round of a schedule.

    Attributes:
        index: 0-based position in the schedule.
        kept_block: Block k kept by a layerwise round, None for the baseline.
        repeat: 1-based repetition n of the kept block.
        steps: Step budget of the round.
    """

    index: int
    kept_block: None | int
    repeat: int
    steps: int


@dataclass
class MethodRun:
    """Everything a finished run leaves behind, for the diagnostics."""

    record: RunRecord
    network: Network
    traces: list[TrainTrace]
    split: SplitData
    data: SyntheticData


def _check_fraction(fraction: float) -> None:
    if not 0 < fraction <= 1:
        err_msg = f'The reinitialized fraction must lie in (0, 1], got {fraction}.'
        raise ContractViolationError(err_msg)


def apply_reinit(params: ParameterStore, mask: Mask, eta: Tensor) -> None:
    """Sets w <- (1 - s) * w + s * eta in place.

    Args:
        params: The parameter store.
        mask: Boolean mask s of length d.
        eta: Fresh initialization of length d.

    Raises:
        ContractViolationError: If the lengths do not match d.
    """
    if mask.shape != (params.d,) or eta.shape != (params.d,):
        err_msg = f'Mask of length {mask.size} and eta of length {eta.size} do not match d={params.d}.'
        raise ContractViolationError(err_msg)
    params.assign(np.where(mask, eta, params.flat))


def _mask_size(fraction: float, d: int) -> int:
    # 0.29 * 100 evaluates to 28.999999999999996
    return math.floor(round(fraction * d, 9))


def mask_random(d: int, fraction: float, rng: RngStream) -> Mask:
    """Selects exactly floor(fraction * d) positions uniformly without replacement."""
    _check_fraction(fraction)
    mask = np.zeros(d, dtype=bool)
    mask[rng.generator().choice(d, size=_mask_size(fraction, d), replace=False)] = True
    return mask


def mask_fixed(d: int, fraction: float, rng: RngStream) -> Mask:
    """Draws the run's fixed mask on the dedicated 'fixed-mask' child stream. Callers draw it once per run."""
    return mask_random(d, fraction, rng.child('fixed-mask'))


def mask_smallest(params: Tensor, fraction: float) -> Mask:
    """Selects the floor(fraction * d) parameters of smallest magnitude, ties broken by lowest index."""
    _check_fraction(fraction)
    mask = np.zeros(params.size, dtype=bool)
    mask[np.argsort(np.abs(params), kind='stable')[: _mask_size(fraction, params.size)]] = True
    return mask


def mask_fc(network: Network) -> Mask:
    """Selects the parameters of every dense layer above the network's fc_boundary block.

    Raises:
        ConfigError: If there is no dense layer above the boundary.
    """
    dense = network.dense_layers_above(network.fc_boundary)
    if not dense:
        err_msg = f'{network.name} has no dense layer above block {network.fc_boundary}.'
        raise ConfigError(err_msg)
    return network.params.mask_of({layer.layer_id for layer in dense})


def record_init_scales(network: Network) -> dict[tuple[int, str], float]:
    """Records the Frobenius norm of every trainable tensor.

    Raises:
        ContractViolationError: If the scales were already recorded.
    """
    if network.init_scales is not None:
        err_msg = 'Initialization scales are recorded exactly once.'
        raise ContractViolationError(err_msg)
    params = network.params
    network.init_scales = {
        (segment.layer_id, segment.name): frobenius_norm(params.view(segment)) for segment in params.segments
    }
    return network.init_scales


def rescale_blocks(network: Network, k: None | int) -> None:
    """Scales every trainable tensor of blocks 1..k back to its recorded norm.

    Tensors whose current or recorded norm is zero are left unchanged. k=None covers every tensor of the
    network, head included.

    Raises:
        ContractViolationError: If no scales were recorded or k is out of range.
    """
    scales = network.init_scales
    if scales is None:
        err_msg = 'Initialization scales have not been recorded.'
        raise ContractViolationError(err_msg)
    if k is None:
        segments = list(network.params.segments)
    else:
        if not 1 <= k <= network.k:
            err_msg = f'Block index must lie in [1, {network.k}], got {k}.'
            raise ContractViolationError(err_msg)
        segments = network.params.segments_of(network.layer_ids_through(k))
    for segment in segments:
        view = network.params.view(segment)
        current = frobenius_norm(view)
        recorded = scales[(segment.layer_id, segment.name)]
        if current > 0 and recorded > 0:
            view *= recorded / current


def compute_block_stats(network: Network, k: int, sample_x: Tensor) -> tuple[float, float]:
    """Scalar mean and population standard deviation of the eval-mode output of block k.

    sigma is clamped to 1e-8 from below.
    """
    z = block_output(network, sample_x, k)
    return float(z.mean()), max(float(z.std()), SIGMA_FLOOR)


def insert_or_update_lambda(network: Network, k: int, mu: float, sigma: float, repeat: int = 1) -> LambdaNorm:
    """Inserts a LambdaNorm after block k on the first repetition, updates it on later ones.

    Args:
        network: The network.
        k: The kept block.
        mu: Mean of the block output.
        sigma: Standard deviation of the block output.
        repeat: 1-based repetition of the kept block.

    Returns:
        The inserted or updated layer.

    Raises:
        ContractViolationError: If an update finds no layer, or an insert finds one already present.
    """
    existing = network.lambdas.get(k)
    if repeat > 1:
        if existing is None:
            err_msg = f'No LambdaNorm after block {k} to update.'
            raise ContractViolationError(err_msg)
        existing.update(mu, sigma)
        return existing
    if existing is not None:
        err_msg = f'A LambdaNorm after block {k} already exists.'
        raise ContractViolationError(err_msg)
    layer = LambdaNorm(mu, sigma)
    network.lambdas[k] = layer
    return layer


def lw_round(  # noqa: PLR0913
    network: Network,
    round_spec: RoundSpec,
    split: SplitData,
    config: TrainConfig,
    rng: RngStream,
    *,
    flags: LwFlags,
    sample_x: Tensor,
) -> TrainTrace:
    """One layerwise round.

    In order: rescale blocks 1..k, measure the block-k statistics, insert or update the LambdaNorm after block k,
    reinitialize every trainable layer above block k with a fresh eta, then train the whole network. Each step
    except the statistics can be switched off by the flags; freeze_kept keeps blocks 1..k fixed while training.

    Args:
        network: The network, modified in place.
        round_spec: The round; kept_block must be set.
        split: The training split of the run.
        config: Training settings.
        rng: The round's stream.
        flags: The ablation switches.
        sample_x: The fixed statistics sample.

    Returns:
        The training trace of the round.
    """
    k = round_spec.kept_block
    if k is None:
        err_msg = 'A layerwise round needs a kept block.'
        raise ContractViolationError(err_msg)
    if flags.do_rescale:
        rescale_blocks(network, k)
    mu, sigma = compute_block_stats(network, k, sample_x)
    if flags.do_normalize:
        insert_or_update_lambda(network, k, mu, sigma, round_spec.repeat)
    if flags.do_reinit:
        mask = network.params.mask_of(network.layer_ids_above(k))
        apply_reinit(network.params, mask, network.sample_init(rng.child('eta')))
    frozen = network.params.mask_of(network.layer_ids_through(k)) if flags.freeze_kept else None
    logger.debug(
        'LW round %d: block %d repeat %d, mu=%.4g sigma=%.4g.', round_spec.index, k, round_spec.repeat, mu, sigma
    )
    return train(network, split, config, rng.child('train'), max_steps=round_spec.steps, frozen=frozen)


def make_schedule(plan: ReinitPlan, blocks: int) -> list[RoundSpec]:
    """Lays out the rounds of a plan.

    MAIN visits k = 1..K with N repetitions each. APPENDIX_A keeps blocks 1, 1, 2, 2, 3 (clamped to K).
    BL gets a single round with the summed budget of the variant.

    Args:
        plan: The plan.
        blocks: K, used when the plan does not fix it.

    Returns:
        The rounds in order.
    """
    k_total = plan.blocks if plan.blocks is not None else blocks
    if plan.schedule_variant is ScheduleVariant.APPENDIX_A:
        kept = [min(k, k_total) for k in APPENDIX_A_KEPT_BLOCKS]
        pairs = [(k, kept[: index + 1].count(k)) for index, k in enumerate(kept)]
    else:
        pairs = [(k, n) for k in range(1, k_total + 1) for n in range(1, plan.repeats + 1)]

    if plan.method is Method.BL:
        return [RoundSpec(index=0, kept_block=None, repeat=1, steps=len(pairs) * plan.steps_per_round)]
    return [
        RoundSpec(index=index, kept_block=k, repeat=n, steps=plan.steps_per_round)
        for index, (k, n) in enumerate(pairs)
    ]


def _stats_sample(train_set: Dataset, size: int, rng: RngStream) -> Tensor:
    n = len(train_set)
    indices = np.sort(rng.generator().choice(n, size=min(size, n), replace=False))
    return train_set.x[indices]


def _round_mask(network: Network, plan: ReinitPlan, fixed: None | Mask, rng: RngStream) -> Mask:
    method = plan.method
    if method is Method.WELSR:
        return mask_random(network.params.d, plan.fraction, rng)
    if method is Method.WELS and fixed is not None:
        return fixed
    if method is Method.DSD:
        return mask_smallest(network.params.flat, plan.fraction)
    if method is Method.FC:
        return mask_fc(network)
    err_msg = f'{method.value} does not reinitialize by mask.'
    raise ContractViolationError(err_msg)


def train_method(  # noqa: PLR0913
    plan: ReinitPlan,
    arch: ArchSection,
    spec: SyntheticSpec,
    config: TrainConfig,
    seed: int,
    *,
    master_seed: int = 0,
    run_id: None | str = None,
    data: None | SyntheticData = None,
) -> MethodRun:
    """Runs one method end to end and keeps the trained network.

    Random streams are derived from (master_seed, seed) only, so all methods of a seed share the initialization,
    the validation split and the statistics sample.

    Args:
        plan: The method and its round structure.
        arch: The architecture preset.
        spec: The synthetic task; its seed selects the data.
        config: Training settings.
        seed: The run seed.
        master_seed: Seed of the whole experiment.
        run_id: Identifier stored in the record.
        data: Pre-generated data for spec.

    Returns:
        The record, the trained network, the per-round traces, the split and the data.

    Raises:
        ConfigError: If the plan does not fit the architecture.
    """
    start = time.perf_counter()
    root = RngStream(master_seed).child(seed)
    data = gen_synthetic(spec) if data is None else data
    network = build_network(arch, spec)
    network.initialize(root.child('init'))
    record_init_scales(network)

    k_total = plan.blocks if plan.blocks is not None else network.k
    if k_total > network.k and plan.method in (Method.LW, Method.RESCALE_ONLY):
        err_msg = f'Plan visits {k_total} blocks but {network.name} has {network.k}.'
        raise ConfigError(err_msg)
    schedule = make_schedule(plan, network.k)

    split = split_dataset(data.train, config.val_fraction, root.child('split'))
    sample_x = _stats_sample(split.train, plan.stats_sample_size, root.child('stats-sample'))
    fixed = mask_fixed(network.params.d, plan.fraction, root) if plan.method is Method.WELS else None

    rounds: list[RoundMetrics] = []
    traces: list[TrainTrace] = []
    for round_spec in schedule:
        round_rng = root.child('round').child(round_spec.index)
        if plan.method is Method.LW:
            trace = lw_round(
                network, round_spec, split, config, round_rng, flags=plan.lw_flags, sample_x=sample_x
            )
        else:
            if round_spec.index > 0 and plan.method is Method.RESCALE_ONLY:
                rescale_blocks(network, None)
            elif round_spec.index > 0 and plan.method is not Method.BL:
                mask = _round_mask(network, plan, fixed, round_rng.child('mask'))
                apply_reinit(network.params, mask, network.sample_init(round_rng.child('eta')))
            trace = train(network, split, config, round_rng.child('train'), max_steps=round_spec.steps)
        traces.append(trace)
        rounds.append(
            RoundMetrics(
                index=round_spec.index,
                kept_block=round_spec.kept_block if plan.method is Method.LW else None,
                steps=trace.total_steps,
                train_acc=accuracy(network, split.train),
                val_acc=accuracy(network, split.val) if split.val is not None else None,
                test_acc=accuracy(network, data.test),
                learning_rate=trace.final.learning_rate if trace.final is not None else config.learning_rate,
                steps_to_threshold=trace.threshold_map(config.accuracy_thresholds),
            )
        )
        logger.info(
            '%s seed %d round %d/%d: train %.3f test %.3f.',
            plan.method.value,
            seed,
            round_spec.index + 1,
            len(schedule),
            rounds[-1].train_acc,
            rounds[-1].test_acc,
        )

    last = rounds[-1]
    record = RunRecord(
        run_id=run_id if run_id is not None else f'{plan.method.value}-{seed}',
        plan=plan,
        arch=arch,
        data=spec,
        config=config,
        seed=seed,
        rounds=rounds,
        train_acc=last.train_acc,
        val_acc=last.val_acc,
        test_acc=last.test_acc,
        total_steps=sum(metrics.steps for metrics in rounds),
        wall_ms=int((time.perf_counter() - start) * 1000),
    )
    return MethodRun(record=record, network=network, traces=traces, split=split, data=data)


def run_method(  # noqa: PLR0913
    plan: ReinitPlan,
    arch: ArchSection,
    spec: SyntheticSpec,
    config: TrainConfig,
    seed: int,
    *,
    master_seed: int = 0,
    run_id: None | str = None,
) -> RunRecord:
    """Runs one method end to end.

    Returns:
        The run record.
    """
    return train_method(plan, arch, spec, config, seed, master_seed=master_seed, run_id=run_id).record
