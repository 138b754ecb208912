import pytest

from tbrd import kernels

BACKENDS = ["python"] + (["compiled"] if kernels.compiled_kernels is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test against each available hash-chain kernel."""
    impl = kernels.python_kernels if request.param == "python" else kernels.compiled_kernels
    monkeypatch.setattr(kernels, "hash_chain", impl.hash_chain)
    monkeypatch.setattr(kernels, "hash_forward", impl.hash_forward)
    return request.param


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
