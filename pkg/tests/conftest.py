import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from flexencoder.data import from_triples

ROOT = Path(__file__).resolve().parents[1]
ML100K = ROOT / "data" / "ml-100k" / "u.data"
ML1M = ROOT / "data" / "ml-1m" / "ratings.dat"


def random_table(users=30, items=40, density=0.3, seed=0):
    rng = np.random.default_rng(seed)
    occupied = rng.random((users, items)) < density
    u, i = np.nonzero(occupied)
    r = rng.integers(2, 11, u.size) / 2.0
    return from_triples(u + 100, i + 500, r, None)


@pytest.fixture
def small_table():
    return random_table()


@pytest.fixture(scope="session")
def ml100k_path():
    if not ML100K.exists():
        subprocess.run([sys.executable, str(ROOT / "scripts" / "fetch_movielens.py")], check=False)
    if not ML100K.exists():
        pytest.skip("MovieLens 100K not available and could not be fetched")
    return ML100K


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
