import sys

import numpy as np
import pytest

from jacobi_entropy.geometry import SystemSpec
from jacobi_entropy.potential import parse_potential


def harmonic_source(n, omega2=1.0):
    return f"{0.5 * omega2!r}*(" + " + ".join(f"x{i + 1}^2" for i in range(n)) + ")"


def harmonic(n=3, E=2.0, **kw):
    return SystemSpec(n, E, parse_potential(harmonic_source(n), n), **kw)


def flat(n=2, E=0.5):
    return SystemSpec(n, E, parse_potential("0", n))


def random_quadratic_source(rng, n, convex=True):
    """``0.5 x^T A x + b.x + c`` with ``A`` SPD when ``convex``."""
    Q = rng.standard_normal((n, n))
    A = Q @ Q.T + 0.5 * np.eye(n) if convex else Q + Q.T
    b = rng.standard_normal(n) * 0.3
    c = float(rng.uniform(-0.5, 0.5))
    terms = [f"{c!r}"]
    for i in range(n):
        terms.append(f"{float(b[i])!r}*x{i + 1}")
        for j in range(n):
            terms.append(f"{float(0.5 * A[i, j])!r}*x{i + 1}*x{j + 1}")
    return " + ".join(terms), A, b, c


def random_polynomial_source(rng, n, degree=3, terms=6):
    out = [f"{float(rng.uniform(-1, 1))!r}"]
    for _ in range(terms):
        powers = rng.integers(0, degree + 1, size=n)
        while powers.sum() > degree:
            powers[rng.integers(n)] = 0
        mono = "*".join(f"x{i + 1}^{p}" for i, p in enumerate(powers) if p)
        coef = float(rng.uniform(-1, 1))
        out.append(f"{coef!r}*{mono}" if mono else f"{coef!r}")
    return " + ".join(out)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def harmonic3():
    return harmonic(3, 2.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
