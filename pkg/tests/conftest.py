from pathlib import Path

import pytest

from globalsir import _fast

REPO_ROOT = Path(__file__).resolve().parents[1]
DATA_DIR = REPO_ROOT / "data"


@pytest.fixture(scope="session", autouse=True)
def warm_kernel():
    # compile the numba kernel once so timed tests measure work, not JIT
    _fast.warm_up()


@pytest.fixture(scope="session")
def data_dir():
    return DATA_DIR
