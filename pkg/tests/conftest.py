import numpy as np
import pytest

from sdrmem.formats import write_idx


@pytest.fixture(scope="session")
def mnist_arrays():
    """5,000 real MNIST digits (500 per class) shipped inside the mlxtend wheel."""
    data = pytest.importorskip("mlxtend.data")
    X, y = data.mnist_data()
    return X.reshape(-1, 28, 28).astype(np.uint8), y.astype(np.uint8)


@pytest.fixture(scope="session")
def mnist_idx(mnist_arrays, tmp_path_factory):
    X, y = mnist_arrays
    d = tmp_path_factory.mktemp("mnist")
    write_idx(d / "images-idx3-ubyte", X)
    write_idx(d / "labels-idx1-ubyte", y)
    return d / "images-idx3-ubyte", d / "labels-idx1-ubyte"


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def emit(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} -- {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
