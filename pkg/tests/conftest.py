from pathlib import Path

import pytest

from polywave.network import NetworkSpec

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def configs_dir():
    return CONFIGS


@pytest.fixture
def notes_spec():
    """Five-stage note recognition net with degrees 1, 1, 2, 3, 5 and an MLP head."""
    return NetworkSpec.load(CONFIGS / "notes_pnn.txt")


@pytest.fixture
def denoiser_spec():
    """Fully convolutional denoiser: widths 16/16/1, degree 5 throughout, same padding."""
    return NetworkSpec.load(CONFIGS / "denoiser_pnn.txt")


def as_degree_one(spec: NetworkSpec) -> NetworkSpec:
    from polywave.network import conv

    return spec.with_layers([conv(l.units, l.kernel, l.activation) if l.is_conv else l for l in spec.layers])


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[0][1:])):
            terminalreporter.write_line(line)
