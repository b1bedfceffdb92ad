import re

import numpy as np
import pytest

from gmsfem_wave.basis import build_offline_basis
from gmsfem_wave.fem import assemble_forms, build_spaces
from gmsfem_wave.medium import MediumField, constant_medium, layered_random_medium
from gmsfem_wave.mesh import build_staggered_mesh


class Problem:
    """Mesh, medium, spaces and forms for one test configuration."""

    def __init__(self, n, r, medium="constant", seed=3):
        self.sm = build_staggered_mesh(n, r)
        f = self.sm.fine
        if medium == "constant":
            self.medium = constant_medium(f)
        elif medium == "layered":
            self.medium = layered_random_medium(f)
        elif medium == "random":
            rng = np.random.default_rng(seed)
            self.medium = MediumField(rng.uniform(0.1, 10.0, f.n_triangles), rng.uniform(0.5, 2.0, f.n_triangles))
        else:
            raise ValueError(medium)
        self.spaces = build_spaces(f, self.sm.skeleton, self.sm.edge_sets)
        self.forms = assemble_forms(f, self.medium, self.spaces)
        self._ob = None

    @property
    def offline(self):
        if self._ob is None:
            self._ob = build_offline_basis(self.sm, self.spaces, self.forms, self.medium)
        return self._ob


@pytest.fixture(scope="session")
def problem_cache():
    cache = {}

    def get(n, r, medium="constant"):
        key = (n, r, medium)
        if key not in cache:
            cache[key] = Problem(n, r, medium)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def small(problem_cache):
    return problem_cache(2, 2, "random")


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def emit(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        key = lambda s: (int(re.match(r"\d+", s.split()[1]).group()), s)  # noqa: E731
        for line in sorted(ACCEPTANCE_LINES, key=key):
            terminalreporter.write_line(line)
