import os
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from glace.graph import AttributedGraph

ROOT = Path(__file__).resolve().parent.parent

# (criterion number, passed, detail) collected by test_acceptance
ACCEPTANCE = []


def data_dir():
    return Path(os.environ.get("GLACE_DATA_DIR", ROOT / "data"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def toy_graph():
    """Six nodes, undirected, dense random attributes."""
    rng = np.random.default_rng(5)
    src = [0, 0, 1, 2, 3, 4, 1]
    dst = [1, 2, 2, 3, 4, 5, 5]
    X = sp.csr_matrix(rng.random((6, 5)) * (rng.random((6, 5)) < 0.7))
    return AttributedGraph(6, src, dst, [1.0, 2.0, 1.0, 0.5, 1.0, 3.0, 1.0], X, directed=False)


@pytest.fixture
def write_files(tmp_path):
    def _write(edges_text, attrs_text):
        e = tmp_path / "g.edges"
        a = tmp_path / "g.attrs"
        e.write_text(edges_text)
        a.write_text(attrs_text)
        return e, a

    return _write
