import numpy as np
import pytest
from hypothesis import settings

from extremeregions.ingest import StationSeries

settings.register_profile("default", max_examples=60, deadline=None)
settings.register_profile("fast", max_examples=10, deadline=None)
settings.load_profile("default")


def make_series(values, sid="S", lon=0.0, lat=0.0, start=2000):
    return StationSeries(sid, lon, lat, {start + k: float(v) for k, v in enumerate(values)})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def blob_with_outliers(n_blob=50, n_out=4, spread=0.05, far=0.16):
    """Dense 1-D blob plus outliers that sit `far` from every other item."""
    x = np.linspace(0.0, 1.0, n_blob)
    n = n_blob + n_out
    D = np.full((n, n), far)
    D[:n_blob, :n_blob] = spread * np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(D, 0.0)
    return D


def random_dissimilarity(n, rng):
    a = rng.uniform(size=(n, n))
    D = np.triu(a, 1)
    return D + D.T


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory):
    """One end-to-end run of the two-region demo, shared across test modules."""
    from extremeregions.pipeline import demo

    out = tmp_path_factory.mktemp("demo")
    manifest, scenario = demo(out, seed=1)
    return out, manifest, scenario


_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; assert afterwards."""

    def check(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
