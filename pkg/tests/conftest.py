import json
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aaphase import cli
from aaphase.config import bundled_config, load_config
from aaphase.dynamics import TrajectoryRecord
from aaphase.experiment import build_problem
from aaphase.optimal_control import evaluate, load_checkpoint

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


class OptimizedRun:
    """Artifacts of one ``aaphase optimize`` invocation."""

    def __init__(self, name, out_dir):
        self.name = name
        self.out = str(out_dir)
        self.exit_code = cli.main(["optimize", "--config", bundled_config(name),
                                   "--out", self.out])
        self.config = load_config(bundled_config(name))
        with open(os.path.join(self.out, "phase_report.json")) as fh:
            self.report = json.load(fh)
        with open(os.path.join(self.out, "optimization.json")) as fh:
            self.summary = json.load(fh)
        self.control, self.psi0, self.history, _ = load_checkpoint(
            os.path.join(self.out, "checkpoint.json"))
        self.record = TrajectoryRecord.from_csv(os.path.join(self.out, "trajectory_full.csv"))

    def problem(self):
        return build_problem(self.config).with_psi0(self.psi0)

    def evaluation(self, record_propagator=False):
        return evaluate(self.control, self.problem(), record_propagator=record_propagator)


@pytest.fixture(scope="session")
def p1_run(tmp_path_factory):
    return OptimizedRun("p1", tmp_path_factory.mktemp("p1"))


@pytest.fixture(scope="session")
def p2_run(tmp_path_factory):
    return OptimizedRun("p2", tmp_path_factory.mktemp("p2"))


@pytest.fixture
def rng():
    return np.random.default_rng(20261017)


SOFT_TARGETS: list[str] = []


@pytest.fixture
def soft_target():
    """Record a reported-not-gated comparison for the end-of-run summary."""
    return SOFT_TARGETS.append


def pytest_terminal_summary(terminalreporter):
    if SOFT_TARGETS:
        terminalreporter.section("soft targets (reported, not gated)")
        for line in SOFT_TARGETS:
            terminalreporter.write_line(line)
