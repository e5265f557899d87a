from fractions import Fraction

import pytest
from hypothesis import HealthCheck, settings

from fraclab.generators import corpus_system, generate_planar

settings.register_profile("fraclab", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fraclab")


@pytest.fixture(scope="session")
def corpus8():
    """Default corpus instances at level 8 as (name, set, measure)."""
    out = []
    for name in ("four_corner", "cantor_line", "segment", "diagonal"):
        K, mu = generate_planar(corpus_system(name, 8))
        out.append((name, K, mu))
    return out


@pytest.fixture(scope="session")
def four_corner6():
    return generate_planar(corpus_system("four_corner", 6))


def frac(s) -> Fraction:
    return Fraction(s)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(k: int, ok: bool, detail: str) -> str:
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
