import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conceptrec import encoder as enc  # noqa: E402
from conceptrec import synthetic  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_fixture():
    return synthetic.prerequisite_fixture(n_concepts=20, n_families=4, n_learners=40, seed=3)


@pytest.fixture(scope="session")
def stub():
    return enc.StubBackend(d=16, seed=0)


def write_csv(path, rows, header="user_id,skill_id,skill_name,correct,order_id"):
    path.write_text(header + "\n" + "\n".join(",".join(str(v) for v in r) for r in rows) + "\n")
    return path


# a pipeline configuration that runs end to end in a few seconds
SMALL = [
    "data.n_learners=40",
    "data.n_concepts=20",
    "data.n_families=4",
    "data.fixture_seed=3",
    "backend.d=16",
    "distill.budget=30",
    "student.kd_epochs=20",
    "student.pref_epochs=5",
    "dkt.hidden=8",
    "dkt.epochs=2",
    "reranker.pool=10",
    "reranker.proj=8",
    "reranker.width=8",
    "reranker.epochs=2",
    "eval.ks=[1, 5]",
]


def small_args(*extra):
    args = []
    for pair in SMALL + list(extra):
        args += ["--set", pair]
    return args


# acceptance verdicts, one line per criterion, echoed after the run
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
