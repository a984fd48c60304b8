"""Bundled synthetic market dataset shaped like a Kaduna State price survey.

Sixteen markets in four geographic groups report weekly prices for one
commodity over twenty weeks (November to March). Prices sit near 200-230
currency units with a group effect, a market effect, a shared weekly
trend and noise. A handful of records have an empty value. The numbers
are synthetic; they do not reproduce any published survey.
"""

from __future__ import annotations

from datetime import date, timedelta
from pathlib import Path
from typing import Optional

import numpy as np

from .domain import _csv_text
from .io import CSV_HEADER

DATA_DIR = Path(__file__).parent / "data"
FIXTURE = DATA_DIR / "kaduna_synthetic.csv"
DEMO_CONFIG = DATA_DIR / "kaduna_demo.ini"

FIXTURE_SEED = 2017
N_WEEKS = 20
START = date(2016, 11, 7)

# (lat, lon) group centres, markets per group, price level
GROUPS = (
    ((11.05, 7.70), 5, 205.0),
    ((10.50, 7.42), 5, 212.0),
    ((9.62, 8.25), 3, 224.0),
    ((10.38, 8.62), 3, 230.0),
)
N_MISSING = 8


def synthetic_kaduna(seed: int = FIXTURE_SEED, spike: Optional[tuple] = None) -> str:
    """CSV text of the synthetic dataset.

    ``spike=(market_index, week_index, factor)`` multiplies one record's
    price, for robustness checks.
    """
    rng = np.random.default_rng(seed)
    markets = []
    for g, ((lat0, lon0), count, level) in enumerate(GROUPS):
        for _ in range(count):
            lat = lat0 + rng.uniform(-0.12, 0.12)
            lon = lon0 + rng.uniform(-0.12, 0.12)
            markets.append((lat, lon, level + rng.normal(0, 3.0)))
    trend = np.cumsum(rng.normal(0.4, 1.0, N_WEEKS))
    prices = np.array([[lvl + trend[t] + rng.normal(0, 4.0) for t in range(N_WEEKS)] for *_, lvl in markets])
    if spike is not None:
        m, t, factor = spike
        prices[m, t] *= factor
    missing = set()
    while len(missing) < N_MISSING:
        cell = (int(rng.integers(len(markets))), int(rng.integers(N_WEEKS)))
        if spike is None or cell != spike[:2]:
            missing.add(cell)
    collectors = [f"c{j:02d}" for j in range(1, 13)]

    rows = [list(CSV_HEADER)]
    for m, (lat, lon, _) in enumerate(markets):
        for t in range(N_WEEKS):
            value = "" if (m, t) in missing else f"{prices[m, t]:.2f}"
            rows.append([
                f"m{m + 1:02d}-w{t + 1:02d}",
                f"M{m + 1:02d}",
                f"{lat:.6f}",
                f"{lon:.6f}",
                value,
                (START + timedelta(weeks=t)).isoformat(),
                collectors[int(rng.integers(len(collectors)))],
            ])
    return _csv_text(rows)


def fixture_path() -> Path:
    return FIXTURE
