import pytest

from reliakit import kernels


@pytest.fixture(params=kernels.available_backends())
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    impl = kernels.get_backend(request.param)
    for name in ("page_hinkley_scan", "kth_neighbor_distance", "linear_assignment"):
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance_results():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
