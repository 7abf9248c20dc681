import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from d2r.volume import Volume, generate_phantom

settings.register_profile(
    "d2r",
    max_examples=int(os.environ.get("D2R_HYPOTHESIS_EXAMPLES", "40")),
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("d2r")

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def phantom32():
    return generate_phantom(5, (32, 32, 32), n_structures=10)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_volume(rng, shape) -> Volume:
    return Volume(rng.random(shape, dtype=np.float32), (10.0, 10.0, 10.0))


def tiny_pipeline_config(workspace=None, r=4, **overrides):
    """Seconds-scale settings exercising every stage."""
    from d2r.dgean import DGEANConfig, LossConfig, TrainConfig
    from d2r.irsde import OptimizerConfig, PredictorConfig
    from d2r.losses import LossWeights
    from d2r.pipeline import PipelineConfig, SDEParams, Stage1Config

    kw = dict(
        r=r,
        sde=SDEParams(T=4),
        stage1=Stage1Config(n_pairs=16, patch=(2 * r + 1, 16),
                            predictor=PredictorConfig(base_channels=4, n_scales=2, time_dim=8, groups=2),
                            optimizer=OptimizerConfig(lr=1e-3, steps=3, batch_size=4, val_every=3)),
        stage2_batch=64,
        dgean=DGEANConfig(encoder_channels=(4, 4, 4, 4, 4), gaussian_embed_dim=4, depth_embed_dim=4),
        losses=LossConfig(LossWeights(0.0, 0.0, 0.0)),
        dgean_train=TrainConfig(lr=1e-3, steps=3, batch_size=2, patch=(16, 16), val_windows=2, val_every=3),
        workspace=None if workspace is None else str(workspace),
    )
    kw.update(overrides)
    return PipelineConfig(**kw)


@pytest.fixture
def tiny_config():
    return tiny_pipeline_config


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
