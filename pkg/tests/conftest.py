"""Shared fixtures: the expensive desk-scale sweeps are built once per session."""

import os

import pytest

from hjbsparse.characteristics import fit_feedback, sweep
from hjbsparse.grid import NodeFamily, build_grid
from hjbsparse.problems import make_example1, make_example3


@pytest.fixture(scope="session")
def workers():
    return os.cpu_count() or 1


@pytest.fixture(scope="session")
def ex3():
    return make_example3()


def _ex3_pipeline(problem, q, workers):
    grid = build_grid(NodeFamily.CGL, 4, q, problem.domain)
    solution = sweep(problem, grid, tol=1e-8, workers=workers)
    law = fit_feedback(problem, grid, solution)
    return grid, solution, law


@pytest.fixture(scope="session")
def ex3_q9(ex3, workers):
    return _ex3_pipeline(ex3, 9, workers)


@pytest.fixture(scope="session")
def ex3_q10(ex3, workers):
    return _ex3_pipeline(ex3, 10, workers)


@pytest.fixture(scope="session")
def ex1():
    return make_example1()


@pytest.fixture(scope="session")
def ex1_q8(ex1, workers):
    grid = build_grid(NodeFamily.CGL, 6, 8, ex1.domain)
    solution = sweep(ex1, grid, tol=1e-8, workers=workers)
    law = fit_feedback(ex1, grid, solution)
    return grid, solution, law
