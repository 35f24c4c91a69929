"""Shared fixtures of the reinit_lab test suite."""

from __future__ import annotations

import pytest

from reinit_lab.api.model import Network
from reinit_lab.api.numerics import RngStream
from reinit_lab.api.presets import build_network
from reinit_lab.schema import ArchName, ArchSection, DataKind, PlanSection, SyntheticSpec, TrainConfig


@pytest.fixture
def small_spec() -> SyntheticSpec:
    return SyntheticSpec(alpha=2.0, n_train=48, n_test=40, dim=12, seed=3)


@pytest.fixture
def image_spec() -> SyntheticSpec:
    return SyntheticSpec(kind=DataKind.IMAGES, alpha=2.0, n_train=24, n_test=16, image_size=8, seed=5)


@pytest.fixture
def mlp(small_spec: SyntheticSpec) -> Network:
    network = build_network(ArchSection(), small_spec)
    network.initialize(RngStream(11).child('init'))
    return network


@pytest.fixture
def scnn(image_spec: SyntheticSpec) -> Network:
    network = build_network(ArchSection(name=ArchName.SCNN_MINI), image_spec)
    network.initialize(RngStream(12).child('init'))
    return network


@pytest.fixture
def fast_config() -> TrainConfig:
    return TrainConfig(learning_rate=0.05, max_steps=5)


@pytest.fixture
def fast_plan() -> PlanSection:
    return PlanSection(repeats=2, steps_per_round=4, stats_sample_size=32)
