import dataclasses
import time

import numpy as np
import pytest

from reprokit import bundled
from reprokit.model_core import FrozenModel, dense, relu, softmax_layer

ACCEPTANCE_LINES = []


def random_model(rng, dims, final_softmax=True):
    """Frozen MLP with relu between dense layers, e.g. dims=(6, 5, 4)."""
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(dense(a, b, rng.normal(scale=0.8, size=(b, a)), rng.normal(scale=0.3, size=b)))
        if i < len(dims) - 2:
            layers.append(relu())
    if final_softmax:
        layers.append(softmax_layer())
    return FrozenModel(tuple(layers), dims[0], dims[-1])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model(rng):
    return random_model(rng, (8, 6, 5))


@pytest.fixture(scope="session")
def bundled_source():
    return bundled.source_model()


@pytest.fixture(scope="session")
def bundled_runs(bundled_source):
    """Ten seeded white-box runs on fresh draws of the bundled target task."""
    from reprokit.diagnostics import theorem1_report, w1_tracker
    from reprokit.model_core import param_digest
    from reprokit.reprogram import reprogram

    heldout = bundled.source_data()[1]
    runs = []
    start = time.perf_counter()
    for i in range(10):
        train, test = bundled.target_data(100 + i)
        cfg = dataclasses.replace(bundled.WHITE_BOX, seed=i)
        before = param_digest(bundled_source)
        hook = w1_tracker(bundled_source, heldout, test.samples, n_rep=256, seed=i)
        t, omap, trace = reprogram(bundled_source, train, test, cfg, epoch_hook=hook)
        report = theorem1_report(bundled_source, t, omap, heldout, test, n_rep=256, seed=i)
        runs.append({"trace": trace, "transform": t, "omap": omap, "report": report,
                     "digest_before": before, "digest_after": param_digest(bundled_source)})
    return {"runs": runs, "seconds": time.perf_counter() - start}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
