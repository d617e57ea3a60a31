import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

DATA = Path(__file__).parent / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def confusion_tables():
    from ropstage.metrics import ConfusionMatrix

    return {p.stem: ConfusionMatrix.from_json(json.loads(p.read_text()))
            for p in sorted((DATA / "confusion").glob("*.json"))}


@pytest.fixture
def synthetic(tmp_path):
    from ropstage.fixtures import make_synthetic_dataset

    via = make_synthetic_dataset(tmp_path / "data", per_stage=(10, 10, 10), width=64, height=48, seed=7)
    return via.parent


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=int):
        terminalreporter.write_line(f"[{key}] {RESULTS[key]}")
