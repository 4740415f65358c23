"""Shared builders for synthetic check-in data and model instances."""

import numpy as np
import pytest

from jtcr.data import CheckinRecord, InteractionStore
from jtcr.geo import GeoIndex
from jtcr.model import LatentModel
from jtcr.temporal import RegularizerVectors

T0 = 1280000000  # 2010-07-24T19:33:20Z


def make_records(rows):
    """rows: (user_id, poi_id, ts, lat, lon, category or None)."""
    return [CheckinRecord(*row) for row in rows]


def dataset_from_rows(rows):
    from jtcr.data import _assemble

    return _assemble(make_records(rows))


def write_checkin_file(path, rows, delim="\t"):
    lines = []
    for row in rows:
        cells = [str(c) for c in row if c is not None]
        lines.append(delim.join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def random_rows(rng, n_users=6, n_pois=8, per_user=12, span_days=400, categories=3):
    pois = [
        (f"p{j}", round(1.0 + 0.015 * j, 6), round(103.0 + 0.02 * j, 6), f"c{j % categories}")
        for j in range(n_pois)
    ]
    rows = []
    for i in range(n_users):
        for _ in range(per_user):
            pid, lat, lon, cat = pois[rng.integers(0, n_pois)]
            ts = T0 + int(rng.integers(0, span_days * 86400))
            rows.append((f"u{i}", pid, ts, lat, lon, cat))
    return rows


def store_from_visits(visits, n_users, n_pois):
    """Build an InteractionStore straight from {user: {poi: count}} without
    touching the parsing path."""
    l_star, l_single, l_plus, l_minus = [], [], [], []
    counts = {}
    for i in range(n_users):
        per = visits.get(i, {})
        for j, c in per.items():
            counts[(i, j)] = c
        star = np.array(sorted(j for j, c in per.items() if c >= 2), dtype=np.intp)
        single = np.array(sorted(j for j, c in per.items() if c == 1), dtype=np.intp)
        plus = np.array(sorted(per.keys()), dtype=np.intp)
        mask = np.ones(n_pois, dtype=bool)
        mask[plus] = False
        l_star.append(star)
        l_single.append(single)
        l_plus.append(plus)
        l_minus.append(np.nonzero(mask)[0].astype(np.intp))
    return InteractionStore(n_users, n_pois, l_star, l_single, l_plus, l_minus, counts)


def random_instance(rng, d=4, n=3, m=5, alpha=0.5, with_reg=True, star_prob=0.4, visit_prob=0.5):
    """A random model/store/geo triple for loss and gradient tests."""
    visits = {}
    for i in range(n):
        per = {}
        for j in range(m):
            if rng.random() < visit_prob:
                per[j] = 2 if rng.random() < star_prob else 1
        visits[i] = per
    store = store_from_visits(visits, n, m)
    coords = np.column_stack(
        [1.0 + 0.5 * rng.random(m), 103.0 + 0.5 * rng.random(m)]
    )
    geo = GeoIndex.from_coords_deg(coords)
    reg = None
    if with_reg:
        reg = RegularizerVectors(
            lambda_u=0.01 * (1.0 + rng.random(n)),
            lambda_v=0.01 * (1.0 + rng.random(m)),
            lam=0.01,
            sigma2_u=np.zeros(n),
            sigma2_v=np.zeros(m),
        )
    model = LatentModel(
        u=0.3 * rng.standard_normal((d, n)),
        v=0.3 * rng.standard_normal((d, m)),
        alpha=alpha,
        reg=reg,
    )
    return model, store, geo


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
