import numpy as np
import pytest

from postsampling.data import synthetic_kaduna
from postsampling.domain import GeoPoint
from postsampling.io import ingest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid9():
    """3x3 unit grid (row-major), value 100 everywhere except 500 at the centre."""
    pts = [GeoPoint(float(x), float(y)) for y in range(3) for x in range(3)]
    values = np.full(9, 100.0)
    values[4] = 500.0
    return pts, values


@pytest.fixture(scope="session")
def kaduna_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "kaduna.csv"
    path.write_text(synthetic_kaduna())
    return path


@pytest.fixture(scope="session")
def kaduna_markets(kaduna_csv):
    obs = ingest(kaduna_csv).observations
    pts = {}
    for o in obs:
        pts.setdefault(o.location_id, o.point)
    return dict(sorted(pts.items()))
