import warnings

import pytest

from routeflow.config import PipelineConfig
from routeflow.pipeline import run_pipeline, warm_up
from routeflow.synthgen import generate, standard_configs


@pytest.fixture(scope="session")
def jit_warm():
    return warm_up()


@pytest.fixture(scope="session")
def standard_runs(jit_warm):
    """(synth config, dataset, run result) for the 12 standard configs."""
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for sc in standard_configs():
            ds = generate(sc)
            out.append((sc, ds, run_pipeline(ds.trajectories, PipelineConfig())))
    return out


@pytest.fixture(scope="session")
def seed42(jit_warm):
    ds = generate(PipelineConfig().synth_config())
    return ds, run_pipeline(ds.trajectories, PipelineConfig())


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
