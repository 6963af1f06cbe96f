import pytest

from flowvmc.flow import FlowModel, FlowSpec
from flowvmc.numerics import RngStream

_acceptance_results: list[tuple[str, bool, str]] = []


@pytest.fixture
def rng():
    return RngStream(1234)


def _random_flow(dim: int, layers: int, seed: int = 0, hidden: int = 8, scale: float = 0.3) -> FlowModel:
    rng = RngStream(seed)
    return FlowModel(FlowSpec(dim, n_layers=layers, hidden=hidden), rng=rng.spawn(0)).randomized(rng.spawn(1), scale)


@pytest.fixture
def random_flow():
    """Factory for flows with every parameter perturbed away from the identity."""
    return _random_flow


@pytest.fixture
def acceptance_report():
    """Record ``(criterion, passed, detail)`` lines for the terminal summary."""

    def record(name: str, passed: bool, detail: str = "") -> None:
        _acceptance_results.append((name, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _acceptance_results:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  {name}" + (f"  [{detail}]" if detail else ""))

