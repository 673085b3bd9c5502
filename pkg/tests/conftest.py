import os

import numpy as np
import pytest

from sleepevents.models.configs import (
    KCOMPLEX,
    SPINDLE,
    GridConfig,
    NetConfig,
    RunConfig,
    SynthConfig,
    TrainConfig,
)
from sleepevents.models.models import Annotation, Event, Record
from sleepevents.services.geometry import build_grid
from sleepevents.services.network import init_model
from sleepevents.services.synth import generate_dataset

RUN_SLOW = os.getenv("SLEEPEVENTS_RUN_SLOW") == "1"


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="set SLEEPEVENTS_RUN_SLOW=1 to run end-to-end benchmarks")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def make_record(data, sample_rate=16.0, record_id="rec") -> Record:
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    return Record(
        id=record_id,
        sample_rate=sample_rate,
        channel_names=[f"ch{i}" for i in range(data.shape[0])],
        data=data,
    )


def make_annotation(bounds, record_id="rec", label=1) -> Annotation:
    return Annotation(
        record_id=record_id,
        events=[Event.from_bounds(start, end, label) for start, end in bounds],
    )


def forced_model(net_cfg, positive_default, probability=0.9):
    """Heads ignore the input: zero offsets, label 1 on one default, background elsewhere."""
    model = init_model(net_cfg, seed=0, dtype=np.float64)
    model.params["loc_head.weight"][:] = 0.0
    model.params["cls_head.weight"][:] = 0.0
    logit = np.log(probability / (1 - probability))
    bias = np.zeros(2 * net_cfg.n_defaults)
    for i in range(net_cfg.n_defaults):
        bias[2 * i + (1 if i == positive_default else 0)] = logit
    model.params["cls_head.bias"] = bias
    return model


@pytest.fixture
def tiny_net_cfg():
    """C=1, T=8, K=1, N_d=2, L=1."""
    return NetConfig(n_channels=1, n_times=8, n_blocks=1, n_labels=1, n_defaults=2)


@pytest.fixture
def tiny_grid():
    # 2 s windows at 4 Hz give T=8; two 1 s defaults
    return build_grid(2.0, 1.0, 0.0)


@pytest.fixture
def tiny_model64(tiny_net_cfg):
    return init_model(tiny_net_cfg, seed=3, dtype=np.float64)


@pytest.fixture
def small_run_cfg():
    """64 Hz, 8 s windows, K=4: T=512, 16 defaults of 1 s at 50 % overlap."""
    return RunConfig(
        sample_rate=64.0,
        n_blocks=4,
        grid=GridConfig(default_duration=1.0, overlap=0.5),
        train=TrainConfig(window_duration=8.0, batch_size=4, max_epochs=2, steps_per_epoch=2, lr=1e-3),
        synth=SynthConfig(sample_rate=64.0, record_seconds=60.0, events=[SPINDLE, KCOMPLEX]),
        threads=1,
    )


@pytest.fixture
def small_dataset(small_run_cfg):
    return generate_dataset(small_run_cfg.synth, 5, seed=7, threads=1)
