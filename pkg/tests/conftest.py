import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def verdict(capsys):
    """Print one ``CRITERION k: PASS|FAIL`` line (outside output capture) and assert."""

    def check(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {number} failed: {detail}"

    return check
