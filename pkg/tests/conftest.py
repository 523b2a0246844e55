"""Shared fixtures: the synthetic dataset and forests trained on it are built once per session."""
import numpy as np
import pytest

from bsdsim import estimator, synth
from bsdsim.controller import WeightClass

TRAIN_STRIDE = 3


@pytest.fixture(scope="session")
def subject():
    return synth.SubjectParams(seed=0)


@pytest.fixture(scope="session")
def dataset(subject):
    return synth.generate_dataset(subject, [synth.TrialSpec(w, 10) for w in WeightClass])


@pytest.fixture(scope="session")
def models(dataset):
    out = {}
    for mode in ("state", "weight"):
        X, y = estimator.training_set(dataset.train, mode, TRAIN_STRIDE)
        out[mode] = estimator.train_forest(X, y, mode=mode)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One verdict line per acceptance criterion, after the normal report."""
    rows = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if rep.when == "call" and "criterion" in props:
                rows.append((props["criterion"], outcome, props.get("detail", "")))
    if rows:
        terminalreporter.section("acceptance criteria")
        for number, outcome, detail in sorted(rows):
            terminalreporter.write_line(f"criterion {number:2d}  {'PASS' if outcome == 'passed' else 'FAIL'}  {detail}")
