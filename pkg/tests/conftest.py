"""
Pytest configuration file.
Provides fixtures that can be used across all tests, and the golden-file helper
behind the --update-golden option.
"""
import io
import json
import os
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import pytest
from pandas.testing import assert_frame_equal

from orthoconv.commands import get_command_manager
from orthoconv.conv import ConvGeometry
from orthoconv.logger import LoggerSingleton, get_logger
from orthoconv.settings import Settings
from orthoconv.tensor import KernelTensor, make_rng

GOLDEN_DIR = Path(__file__).parent / "golden"
# A golden value of "*" matches anything; used for fields that carry rounding noise.
WILDCARD = "*"
GOLDEN_RTOL = 1e-9
GOLDEN_ATOL = 1e-12


def pytest_addoption(parser):
    parser.addoption("--update-golden", action="store_true", default=False,
                     help="rewrite the golden files under tests/golden from the current output")


def _strict_json(text: str):
    def reject(constant):
        raise ValueError(f"non-JSON constant {constant}")
    return json.loads(text, parse_constant=reject)


def golden_mismatch(expected, actual, where: str = "$") -> Optional[str]:
    """First difference between a golden JSON value and an actual one, or None."""
    if expected == WILDCARD:
        return None
    if isinstance(expected, dict):
        if not isinstance(actual, dict):
            return f"{where}: expected an object, got {actual!r}"
        if set(expected) != set(actual):
            return f"{where}: keys {sorted(actual)} differ from {sorted(expected)}"
        for key in sorted(expected):
            found = golden_mismatch(expected[key], actual[key], f"{where}.{key}")
            if found:
                return found
        return None
    if isinstance(expected, list):
        if not isinstance(actual, list) or len(actual) != len(expected):
            return f"{where}: expected {len(expected)} items, got {actual!r}"
        for i, (e, a) in enumerate(zip(expected, actual)):
            found = golden_mismatch(e, a, f"{where}[{i}]")
            if found:
                return found
        return None
    if expected is None or isinstance(expected, (bool, str)):
        return None if type(actual) is type(expected) and actual == expected else f"{where}: {actual!r} != {expected!r}"
    if isinstance(actual, bool) or not isinstance(actual, (int, float)):
        return f"{where}: expected a number, got {actual!r}"
    if actual != pytest.approx(expected, rel=GOLDEN_RTOL, abs=GOLDEN_ATOL):
        return f"{where}: {actual!r} != {expected!r}"
    return None


@pytest.fixture
def golden(request):
    """
    Compare output text against tests/golden/<name>.

    JSON is parsed strictly and compared key by key with a relative tolerance of 1e-9;
    CSV is compared as a pandas frame with the same tolerance. A missing golden file
    fails the test; --update-golden writes the current output instead.
    """
    update = request.config.getoption("--update-golden")

    def check(name: str, text: str) -> None:
        path = GOLDEN_DIR / name
        if update:
            GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8", newline="\n")
            return
        if not path.exists():
            pytest.fail(f"No golden file tests/golden/{name}; record it with pytest --update-golden")
        expected = path.read_text(encoding="utf-8")
        if name.endswith(".json"):
            mismatch = golden_mismatch(_strict_json(expected), _strict_json(text))
            assert mismatch is None, f"{name}: {mismatch}"
        elif name.endswith(".csv"):
            assert_frame_equal(pd.read_csv(io.StringIO(text)), pd.read_csv(io.StringIO(expected)),
                               check_dtype=False, rtol=GOLDEN_RTOL, atol=GOLDEN_ATOL, obj=name)
        else:
            assert text == expected, f"{name} differs from its golden file"

    return check


@pytest.fixture
def reset_singletons():
    """Reset all singleton instances before each test."""
    LoggerSingleton._instance = None
    Settings._instance = None
    get_command_manager()._commands = {}
    yield
    Settings._instance = None


@pytest.fixture
def clean_env():
    """Provide a clean environment with no orthoconv-specific variables."""
    original_env = os.environ.copy()
    for var in list(os.environ.keys()):
        if var.startswith('ORTHOCONV_'):
            del os.environ[var]
    Settings._instance = None
    yield
    os.environ.clear()
    os.environ.update(original_env)
    Settings._instance = None


@pytest.fixture
def logger():
    """Provide a logger instance."""
    LoggerSingleton._instance = None
    return get_logger()


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def toy_geometry():
    """1x1x2x2 kernel on a 1x4x4 input: 9x16 DBT matrix."""
    return ConvGeometry(c_in=1, h=4, w=4, m_out=1, k=2, stride=1)


@pytest.fixture
def random_kernel(rng):
    def make(m_out, c_in, k, std=1.0):
        return KernelTensor.random(m_out, c_in, k, rng, std=std)
    return make


@pytest.fixture
def npy_kernel(tmp_path):
    """Write a kernel to an NPY file and return its path."""
    from orthoconv.io import write_npy

    def make(data, name="kernel.npy"):
        path = tmp_path / name
        write_npy(str(path), np.asarray(data, dtype=np.float64))
        return str(path)
    return make
