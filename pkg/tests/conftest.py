import pytest
import torch

from roma.data import make_toy_dataset
from roma.embedding import TokenGrid

_CRITERIA = []


def record_criterion(number, name, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name}"
    if detail:
        line += f" -- {detail}"
    _CRITERIA.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    make_toy_dataset(root, seed=0, clips=3, frames_per_clip=6, size=64)
    return root


def random_grids(gen, n_layers, rows, cols, d, lead=()):
    return [TokenGrid(torch.randn(*lead, rows * cols, d, generator=gen, dtype=torch.float64),
                      rows, cols, layer) for layer in range(n_layers)]


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)
