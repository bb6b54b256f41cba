import functools

import pytest

from wetlearn.sim import run_trials


@functools.lru_cache(maxsize=None)
def _cached(cfg):
    return tuple(run_trials(cfg))


@pytest.fixture(scope="session")
def trials_of():
    """Run (or reuse) the trials of a ``SimConfig``; long runs are shared across test files."""
    return _cached
