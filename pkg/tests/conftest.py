import numpy as np
import pytest

from normsgd.prox import CompositeProblem, L1Prox, ZeroProx


def half_square(reg=None, dim=1):
    """``f(x) = 0.5 * ||x||^2`` with an optional regularizer."""

    def grad(x):
        return np.array(x, dtype=np.float64)

    return CompositeProblem(
        dim=dim,
        smooth_value=lambda x: 0.5 * float(np.dot(x, x)),
        smooth_grad=grad,
        stochastic_grad=lambda x, batch=None, rng=None: grad(x),
        regularizer=reg if reg is not None else ZeroProx(),
        metadata={"lipschitz": 1.0},
    )


def random_lasso(rng, n=None, d=None, nu=None):
    from normsgd.problems import SyntheticSpec, make_problem

    d = d or int(rng.integers(2, 21))
    n = n or int(rng.integers(d, 3 * d + 1))
    A = rng.standard_normal((n, d))
    b = rng.standard_normal(n)
    nu = nu if nu is not None else float(rng.uniform(0.05, 1.0))
    return make_problem(SyntheticSpec("quadratic_l1", A=A, b=b), L1Prox(nu))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
