import os
from pathlib import Path

import pytest

import numpy as np

from wgscatter import DomainSpec, Mesh, Waveguide, build_domain

# eigenbases are cached across sessions; delete the directory to start cold
CACHE = Path(os.environ.get("WGSCATTER_TEST_CACHE", Path(__file__).parent / ".cache"))


@pytest.fixture(scope="session")
def cache_dir():
    CACHE.mkdir(parents=True, exist_ok=True)
    return CACHE


@pytest.fixture(scope="session")
def cylinder(cache_dir):
    """Straight channel 2 x 8, no obstacle: S is known in closed form."""
    spec = DomainSpec.channel(width=2.0, length=8.0, refinement=8)
    return Waveguide.build(spec, M=300, modes_per_port=10, cache_dir=cache_dir)


@pytest.fixture(scope="session")
def obstacle(cache_dir):
    spec = DomainSpec.channel(radius=0.3, offset=0.1, refinement=12)
    return Waveguide.build(spec, M=300, modes_per_port=10, cache_dir=cache_dir)


@pytest.fixture(scope="session")
def capped(cache_dir):
    """2 x 4 rectangle open at the left end only: S = exp(2 i sqrt(lam) L)."""
    m = build_domain(DomainSpec.channel(width=2.0, length=4.0, refinement=8))
    tags = np.where(m.edge_tags == 2, 0, m.edge_tags)
    mesh = Mesh(m.vertices, m.triangles, m.edges, tags)
    return Waveguide.from_mesh(mesh, M=300, modes_per_port=10, cache_dir=cache_dir)


# acceptance reporting: one line per numbered criterion at the end of the run
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): numbered acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_runtest_logreport(report):
    n = dict(report.user_properties).get("criterion")
    if n is None or (report.passed and report.when != "call"):
        return
    details = [str(v) for k, v in report.user_properties if k == "detail"]
    entry = _CRITERIA.setdefault(n, [True, []])
    entry[0] = entry[0] and report.passed
    entry[1].extend(details if report.passed else details + [f"{report.head_line} failed"])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, lines = _CRITERIA[n]
        detail = "; ".join(dict.fromkeys(lines))
        terminalreporter.write_line(f"CRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}")
