"""Shared instances and cached enumerations."""

from functools import lru_cache

import numpy as np
import pytest

from sgia.instances import random_instance
from sgia.solver import brute_force_equilibria, enumerate_profiles

# reference family: two agents, states, actions, types and menu items; eight histories
REFERENCE_SEEDS = tuple(range(20))


@lru_cache(maxsize=None)
def reference(seed):
    return random_instance(seed)


@lru_cache(maxsize=None)
def equilibria(seed):
    g, f, c = reference(seed)
    return tuple(brute_force_equilibria(g, f, c, history_free=True))


@lru_cache(maxsize=None)
def enumerable_seeds(count=5, search=40):
    """First ``count`` reference seeds whose history-free pure enumeration holds a PPME."""
    out = []
    for s in range(search):
        if equilibria(s):
            out.append(s)
        if len(out) == count:
            break
    return tuple(out)


@lru_cache(maxsize=None)
def pure_profiles(seed):
    g, f, _ = reference(seed)
    return tuple(enumerate_profiles(g, f, history_free=True))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
