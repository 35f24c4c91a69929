"""Defines the pydantic models used for configuration and persistent run records."""

from __future__ import annotations

import enum
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

FULL_BATCH = 'full'
DEFAULT_THRESHOLDS = [0.5, 0.9, 0.99, 1.0]


class Method(enum.Enum):
    """Training regimes. RESCALE_ONLY is the rescaling ablation without reinitialization."""

    BL = 'BL'
    WELSR = 'WELSR'
    DSD = 'DSD'
    WELS = 'WELS'
    FC = 'FC'
    LW = 'LW'
    RESCALE_ONLY = 'RESCALE_ONLY'


# Fixed order used to break ties when selecting the best method of a setting.
METHOD_ORDER = (Method.BL, Method.WELSR, Method.DSD, Method.WELS, Method.FC, Method.LW)
MASK_METHODS = (Method.WELSR, Method.WELS, Method.DSD, Method.FC)


class ScheduleVariant(enum.Enum):
    """Round schedules."""

    MAIN = 'MAIN'
    APPENDIX_A = 'APPENDIX_A'


class Initializer(enum.Enum):
    """Parameter initializers."""

    HE_NORMAL = 'he_normal'
    XAVIER_UNIFORM = 'xavier_uniform'


class ArchName(enum.Enum):
    """Architecture presets."""

    MLP_SYNTH = 'MLP_SYNTH'
    SCNN_MINI = 'SCNN_MINI'


class DataKind(enum.Enum):
    """Synthetic data generators."""

    VECTORS = 'vectors'
    IMAGES = 'images'


class RunStatus(enum.Enum):
    """Outcome of a single run."""

    OK = 'ok'
    FAILED = 'failed'


class TrainConfig(BaseModel):
    """Optimizer, schedule and validation settings of one training call."""

    model_config = ConfigDict(strict=True, extra='forbid')

    learning_rate: float = Field(default=0.05, gt=0)
    momentum: float = Field(default=0.0, ge=0, lt=1)
    weight_decay: float = Field(default=0.0, ge=0)
    batch_size: int | Literal['full'] = Field(default=FULL_BATCH)
    max_steps: int = Field(default=1800, ge=0)
    plateau_patience_epochs: None | int = Field(default=None, gt=0)
    plateau_factor: float = Field(default=0.5, gt=0, lt=1)
    val_fraction: float = Field(default=0.0, ge=0, lt=1)
    early_stop: bool = Field(default=False)
    accuracy_thresholds: list[float] = Field(default_factory=lambda: list(DEFAULT_THRESHOLDS))

    @model_validator(mode='after')
    def _check_consistency(self) -> TrainConfig:
        if isinstance(self.batch_size, int) and self.batch_size < 1:
            err_msg = 'batch_size must be a positive integer or "full".'
            raise ValueError(err_msg)
        if self.early_stop and self.val_fraction == 0:
            err_msg = 'early_stop requires a validation split (val_fraction > 0).'
            raise ValueError(err_msg)
        if any(not 0 <= threshold <= 1 for threshold in self.accuracy_thresholds):
            err_msg = 'accuracy_thresholds must lie in [0, 1].'
            raise ValueError(err_msg)
        return self


class LwFlags(BaseModel):
    """Switches of the layerwise rounds, used by the ablations."""

    model_config = ConfigDict(strict=True, extra='forbid')

    do_rescale: bool = Field(default=True)
    do_normalize: bool = Field(default=True)
    do_reinit: bool = Field(default=True)
    freeze_kept: bool = Field(default=False)


class PlanSection(BaseModel):
    """Round structure shared by every method of an experiment."""

    model_config = ConfigDict(strict=True, extra='forbid')

    blocks: None | int = Field(default=None, ge=1)
    repeats: int = Field(default=3, ge=1)
    steps_per_round: int = Field(default=200, ge=1)
    schedule_variant: ScheduleVariant = Field(default=ScheduleVariant.MAIN)
    fraction: float = Field(default=0.2, gt=0, le=1)
    lw_flags: LwFlags = Field(default_factory=LwFlags)
    stats_sample_size: int = Field(default=256, ge=1)


class ReinitPlan(PlanSection):
    """Which regime to run together with its round structure."""

    method: Method = Field()


class ArchSection(BaseModel):
    """Architecture preset and its experiment-design knobs."""

    model_config = ConfigDict(strict=True, extra='forbid')

    name: ArchName = Field(default=ArchName.MLP_SYNTH)
    initializer: Initializer = Field(default=Initializer.HE_NORMAL)
    dropout: float = Field(default=0.0, ge=0, lt=1)
    use_bias: bool = Field(default=True)
    fc_boundary: None | int = Field(default=None, ge=1)


class SyntheticSpec(BaseModel):
    """Synthetic classification task: three label bits scaled by alpha plus Gaussian noise."""

    model_config = ConfigDict(strict=True, extra='forbid')

    kind: DataKind = Field(default=DataKind.VECTORS)
    alpha: float = Field(default=1.0, gt=0)
    n_train: int = Field(default=256, ge=1)
    n_test: int = Field(default=2048, ge=1)
    dim: int = Field(default=128, ge=3)
    n_classes: Literal[8] = Field(default=8)
    image_size: int = Field(default=16, ge=8)
    seed: int = Field(default=0)


class DataSection(BaseModel):
    """Data section of an experiment config. Alpha and seed are matrix axes."""

    model_config = ConfigDict(strict=True, extra='forbid')

    kind: DataKind = Field(default=DataKind.VECTORS)
    n_train: int = Field(default=256, ge=1)
    n_test: int = Field(default=2048, ge=1)
    dim: int = Field(default=128, ge=3)
    image_size: int = Field(default=16, ge=8)


class MatrixSection(BaseModel):
    """Axes whose Cartesian product defines the runs of an experiment."""

    model_config = ConfigDict(strict=True, extra='forbid')

    methods: list[Method] = Field(min_length=1)
    alphas: list[float] = Field(default_factory=lambda: [1.0], min_length=1)
    seeds: list[int] = Field(default_factory=lambda: list(range(20)), min_length=1)
    penalties: list[float] = Field(default_factory=lambda: [0.0], min_length=1)
    budgets: list[int] = Field(default_factory=list)
    dropouts: list[float] = Field(default_factory=list)
    initializers: list[Initializer] = Field(default_factory=list)
    master_seed: int = Field(default=0)

    @model_validator(mode='after')
    def _check_axes(self) -> MatrixSection:
        if any(alpha <= 0 for alpha in self.alphas):
            err_msg = 'alphas must be positive.'
            raise ValueError(err_msg)
        if any(penalty < 0 for penalty in self.penalties):
            err_msg = 'penalties must be non-negative.'
            raise ValueError(err_msg)
        if any(budget < 1 for budget in self.budgets):
            err_msg = 'budgets must be positive step counts.'
            raise ValueError(err_msg)
        if any(not 0 <= dropout < 1 for dropout in self.dropouts):
            err_msg = 'dropouts must lie in [0, 1).'
            raise ValueError(err_msg)
        return self


class OutputSection(BaseModel):
    """Where results go and which diagnostics are produced."""

    model_config = ConfigDict(strict=True, extra='forbid')

    directory: None | str = Field(default=None)
    margins: bool = Field(default=False)
    flatness: bool = Field(default=False)
    weight_size: bool = Field(default=False)
    speed: bool = Field(default=False)
    smallest_margins: int = Field(default=400, ge=1)
    flatness_sigmas: list[float] = Field(default_factory=lambda: [0.0, 0.01, 0.02, 0.05])
    flatness_draws: int = Field(default=20, ge=1)
    speed_threshold: float = Field(default=0.99, ge=0, le=1)


class ExperimentConfig(BaseModel):
    """The experiment config file."""

    model_config = ConfigDict(strict=True, extra='forbid')

    arch: ArchSection = Field(default_factory=ArchSection)
    data: DataSection = Field(default_factory=DataSection)
    train: TrainConfig = Field(default_factory=TrainConfig)
    plan: PlanSection = Field(default_factory=PlanSection)
    matrix: MatrixSection = Field()
    output: OutputSection = Field(default_factory=OutputSection)


class RoundMetrics(BaseModel):
    """Metrics recorded at the end of one round."""

    model_config = ConfigDict(strict=True, extra='forbid')

    index: int = Field(ge=0)
    kept_block: None | int = Field(default=None)
    steps: int = Field(ge=0)
    train_acc: float = Field(ge=0, le=1)
    val_acc: None | float = Field(default=None, ge=0, le=1)
    test_acc: float = Field(ge=0, le=1)
    learning_rate: float = Field(gt=0)
    steps_to_threshold: dict[str, None | int] = Field(default_factory=dict)


class RunRecord(BaseModel):
    """One training run: configuration, seed, per-round metrics and final accuracies."""

    model_config = ConfigDict(strict=True, extra='forbid')

    run_id: str = Field()
    status: RunStatus = Field(default=RunStatus.OK)
    error: None | str = Field(default=None)
    plan: ReinitPlan = Field()
    arch: ArchSection = Field()
    data: SyntheticSpec = Field()
    config: TrainConfig = Field()
    seed: int = Field()
    rounds: list[RoundMetrics] = Field(default_factory=list)
    train_acc: None | float = Field(default=None, ge=0, le=1)
    val_acc: None | float = Field(default=None, ge=0, le=1)
    test_acc: None | float = Field(default=None, ge=0, le=1)
    total_steps: int = Field(default=0, ge=0)
    wall_ms: int = Field(default=0, ge=0)
