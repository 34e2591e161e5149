import numpy as np
import pytest

from urelliptic.geometry import generate_boundary, make_domain
from urelliptic.solver import CoefficientField

# Lines recorded by the acceptance suite, replayed at the end of the session.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def half_plane_64():
    """Upper half of the unit box above a flat boundary at y = 0, h = 1/64."""
    s = generate_boundary("hyperplane", {"box": 1, "below": 0}, 1 / 64)
    d = make_domain(s)
    return s, d, CoefficientField.identity(s.grid)


@pytest.fixture(scope="session")
def skew_operator(half_plane_64):
    """A variable, non-symmetric coefficient field on the half_plane_64 grid."""
    s, _, _ = half_plane_64
    rot = np.array([[0.0, 1.0], [-1.0, 0.0]])
    sym = np.array([[1.0, 0.5], [0.5, 0.0]])
    return CoefficientField.from_function(
        s.grid,
        lambda p: np.eye(2) + 0.3 * rot * np.sin(3 * p[..., 0, None, None])
        + 0.2 * sym * (1 + p[..., 1, None, None]),
    )
