from __future__ import annotations

import numpy as np
import pytest

from twics.cohort import Stage3
from twics.execution import UNDEFINED, TrialData
from twics.population import CONTINUOUS


def make_data(y, z, d, x=None, *, kind=CONTINUOUS, names=None, contaminated=None) -> TrialData:
    """Hand-built dataset: offered arm is z == 1, acceptance is d there."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=np.int8)
    d = np.asarray(d, dtype=np.int8)
    n = len(y)
    x = np.zeros((n, 0)) if x is None else np.asarray(x, dtype=float).reshape(n, -1)
    offered = z == 1
    a = np.where(offered, d, UNDEFINED).astype(np.int8)
    stage3 = np.where(offered, np.where(d == 1, Stage3.CONSENTED, Stage3.REFUSED), Stage3.NOT_OFFERED).astype(np.int8)
    if contaminated is None:
        contaminated = (z == 0) & (d == 1)
    return TrialData(
        ids=np.arange(n, dtype=np.int64),
        z=z,
        offered=offered,
        stage3=stage3,
        a=a,
        tested=np.zeros(n, dtype=bool),
        biomarker_pos=np.full(n, UNDEFINED, dtype=np.int8),
        d=d,
        y=y,
        x=x,
        contaminated=np.asarray(contaminated, dtype=bool),
        covariate_names=tuple(names or (f"x{j + 1}" for j in range(x.shape[1]))),
        outcome_kind=kind,
    )


def random_refusal_data(rng: np.random.Generator, n: int = 400, acceptance: float = 0.7, effect: float = 1.0):
    z = np.repeat([1, 0], n // 2)
    accept = rng.random(n) < acceptance
    d = (z == 1) & accept
    y0 = rng.normal(size=n) + 0.5 * accept
    y = y0 + effect * d
    return make_data(y, z, d.astype(int))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
