import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rs():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cfg():
    from scribocc.pipeline import TrainConfig

    return TrainConfig(steps=40)


@pytest.fixture(scope="session")
def small_inputs(small_cfg):
    from scribocc.pipeline import prepare

    return prepare(small_cfg)


# rows needed by the trend criteria; "DL+TL" and "w/o range-info" share a cell
BENCHMARK_ROWS = ("baseline", "DL", "DL+TL", "DL+TL+RGO2D", "w/o global", "w/o local", "w/o range-info")
BENCHMARK_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="session")
def benchmark_runs():
    """Per-seed reports of the default benchmark for the trend checks, plus wall time."""
    import time

    from scribocc.pipeline import TrainConfig, ablation_rows, run_seed

    cfg = TrainConfig()
    rows = [r for r in ablation_rows(cfg.distill) if r["name"] in BENCHMARK_ROWS]
    t0 = time.perf_counter()
    per_seed = [run_seed(cfg.with_seed(s), rows) for s in BENCHMARK_SEEDS]
    elapsed = time.perf_counter() - t0
    mean = {k: float(np.mean([ps[k].miou[-1] for ps in per_seed])) for k in per_seed[0]}
    return {"per_seed": per_seed, "mean_miou": mean, "elapsed": elapsed}
