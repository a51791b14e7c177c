"""Shared fixtures: one trained toy model and its datasets per session."""

import sys

import numpy as np
import pytest

from hedgegrad.data import generate_synthetic_dataset
from hedgegrad.train import train_toy_model


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "REPORT_LINES", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def train_dataset():
    return generate_synthetic_dataset(240, seed=101, objects="single")


@pytest.fixture(scope="session")
def eval_dataset():
    return generate_synthetic_dataset(200, seed=202, objects="single")


@pytest.fixture(scope="session")
def two_object_dataset():
    return generate_synthetic_dataset(50, seed=303, objects="double")


@pytest.fixture(scope="session")
def toy_model(train_dataset):
    return train_toy_model(train_dataset, preset="tiny-cnn", epochs=10, lr=0.1, seed=0)


@pytest.fixture(scope="session")
def micro_model(train_dataset):
    return train_toy_model(train_dataset, preset="micro-cnn", epochs=10, lr=0.1, seed=0)
