"""Check-in ingestion, activity filtering, interaction sets, and the
chronological train/validation/test split.

Input files are delimiter-separated UTF-8 text, one check-in per line:
user_id, poi_id, timestamp (ISO 8601 or unix seconds), lat, lon, [category].
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from jtcr.geo import EARTH_RADIUS_KM, GeoIndex, _haversine_block


class ParseError(ValueError):
    """Raised for malformed input lines; carries the 1-based line number."""

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class CheckinRecord:
    """One observed visit event."""

    user_id: str
    poi_id: str
    timestamp: int  # unix seconds, UTC
    lat: float
    lon: float
    category: str | None = None

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass
class Dataset:
    """Check-ins plus dense user/POI indices assigned in first-appearance order.

    A POI with no category in the input is assigned a singleton category equal
    to its own id, so `poi_category` entries are never None.  Split views share
    these index objects with their parent.
    """

    checkins: list
    user_index: dict
    poi_index: dict
    poi_coords: np.ndarray  # (m, 2) degrees
    poi_category: list

    @property
    def n_users(self) -> int:
        return len(self.user_index)

    @property
    def n_pois(self) -> int:
        return len(self.poi_index)

    @property
    def user_ids(self) -> list:
        return list(self.user_index.keys())

    @property
    def poi_ids(self) -> list:
        return list(self.poi_index.keys())

    def visit_counts(self) -> dict:
        """Multiset of (user idx, poi idx) -> number of check-ins in this view."""
        counts = Counter()
        for rec in self.checkins:
            counts[(self.user_index[rec.user_id], self.poi_index[rec.poi_id])] += 1
        return counts

    def geo_index(self) -> GeoIndex:
        return GeoIndex.from_coords_deg(self.poi_coords)


def _parse_timestamp(text, line_no):
    """Accept unix seconds or ISO 8601 (a trailing Z is normalized)."""
    text = text.strip()
    try:
        return int(float(text))
    except ValueError:
        pass
    iso = text[:-1] + "+00:00" if text.endswith("Z") else text
    try:
        dt = datetime.fromisoformat(iso)
    except ValueError:
        raise ParseError(line_no, f"unparseable timestamp {text!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _parse_float(text, line_no, what):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(line_no, f"unparseable {what} {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(line_no, f"non-finite {what} {text!r}")
    return value


def _assemble(records) -> Dataset:
    user_index, poi_index = {}, {}
    coords, categories = [], []
    for rec in records:
        if rec.user_id not in user_index:
            user_index[rec.user_id] = len(user_index)
        if rec.poi_id not in poi_index:
            poi_index[rec.poi_id] = len(poi_index)
            coords.append((rec.lat, rec.lon))
            categories.append(rec.category)
        else:
            j = poi_index[rec.poi_id]
            if coords[j] != (rec.lat, rec.lon):
                raise ValueError(
                    f"conflicting coordinates for poi {rec.poi_id!r}: {coords[j]} vs {(rec.lat, rec.lon)}"
                )
            if rec.category is not None:
                if categories[j] is None:
                    categories[j] = rec.category
                elif categories[j] != rec.category:
                    raise ValueError(
                        f"conflicting categories for poi {rec.poi_id!r}: "
                        f"{categories[j]!r} vs {rec.category!r}"
                    )
    # singleton-category fallback: a POI with no category is its own category
    poi_ids = list(poi_index.keys())
    categories = [c if c is not None else poi_ids[j] for j, c in enumerate(categories)]
    coord_arr = np.array(coords, dtype=np.float64).reshape(len(coords), 2)
    return Dataset(list(records), user_index, poi_index, coord_arr, categories)


def parse_checkins(path, fmt: str = "tsv") -> Dataset:
    """Parse a delimiter-separated check-in file into a Dataset.

    Columns: user_id, poi_id, timestamp, lat, lon, optional category.
    Blank lines are skipped; any malformed line raises ParseError with its
    line number.  Conflicting coordinates or categories for one poi_id raise
    ValueError.
    """
    delim = {"tsv": "\t", "csv": ","}.get(fmt)
    if delim is None:
        raise ValueError(f"unknown format {fmt!r}, expected 'tsv' or 'csv'")
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split(delim)
            if len(parts) not in (5, 6):
                raise ParseError(line_no, f"expected 5 or 6 columns, got {len(parts)}")
            user_id, poi_id = parts[0].strip(), parts[1].strip()
            if not user_id or not poi_id:
                raise ParseError(line_no, "empty user or poi id")
            ts = _parse_timestamp(parts[2], line_no)
            lat = _parse_float(parts[3], line_no, "latitude")
            lon = _parse_float(parts[4], line_no, "longitude")
            category = parts[5].strip() if len(parts) == 6 and parts[5].strip() else None
            try:
                records.append(CheckinRecord(user_id, poi_id, ts, lat, lon, category))
            except ValueError as exc:
                raise ParseError(line_no, str(exc)) from None
    return _assemble(records)


def filter_min_activity(ds: Dataset, min_count: int = 5) -> Dataset:
    """Iteratively drop users and POIs with fewer than min_count check-ins
    until a fixed point, then re-densify indices in first-appearance order."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    records = ds.checkins
    while True:
        user_counts = Counter(r.user_id for r in records)
        poi_counts = Counter(r.poi_id for r in records)
        keep = [
            r for r in records
            if user_counts[r.user_id] >= min_count and poi_counts[r.poi_id] >= min_count
        ]
        if len(keep) == len(records):
            break
        records = keep
    return _assemble(records)


@dataclass
class InteractionStore:
    """Per-user partition of the POI universe by training visit multiplicity.

    l_star holds POIs visited at least twice, l_single exactly once,
    l_plus their union, and l_minus the candidate universe minus l_plus.
    POI-side sets mirror the user-side ones.
    """

    n_users: int
    n_pois: int
    l_star: list
    l_single: list
    l_plus: list
    l_minus: list
    counts: dict  # (user, poi) -> check-in count

    p_plus: list = field(default_factory=list)
    p_star: list = field(default_factory=list)
    p_single: list = field(default_factory=list)
    _candidates: list = None

    def __post_init__(self):
        if not self.p_plus:
            plus = [[] for _ in range(self.n_pois)]
            star = [[] for _ in range(self.n_pois)]
            single = [[] for _ in range(self.n_pois)]
            for i in range(self.n_users):
                for j in self.l_star[i]:
                    star[j].append(i)
                for j in self.l_single[i]:
                    single[j].append(i)
                for j in self.l_plus[i]:
                    plus[j].append(i)
            as_arr = lambda rows: [np.array(r, dtype=np.intp) for r in rows]
            self.p_plus, self.p_star, self.p_single = as_arr(plus), as_arr(star), as_arr(single)

    def p_minus(self, j: int) -> np.ndarray:
        """Users without a training visit to POI j (complement of p_plus)."""
        mask = np.ones(self.n_users, dtype=bool)
        mask[self.p_plus[j]] = False
        return np.nonzero(mask)[0]

    def candidates(self, i: int) -> np.ndarray:
        """Candidate universe for user i: l_plus plus l_minus, sorted."""
        if self._candidates is not None:
            return self._candidates[i]
        return np.sort(np.concatenate([self.l_plus[i], self.l_minus[i]]))

    def n_plus(self, i):
        return len(self.l_plus[i])

    def n_minus(self, i):
        return len(self.l_minus[i])

    def n_star(self, i):
        return len(self.l_star[i])

    def n_single(self, i):
        return len(self.l_single[i])


def build_interactions(ds: Dataset, universe: str = "all", radius_km: float | None = None) -> InteractionStore:
    """Partition every user's candidate POIs into star/single/minus sets.

    With universe="all" the candidate set is every indexed POI.  With
    universe="neighborhood" it is every POI within radius_km of any POI the
    user visited (a linear scan; adequate at desk scale).
    """
    if ds.n_users == 0 or not ds.checkins:
        raise ValueError("cannot build interactions from an empty dataset")
    if universe not in ("all", "neighborhood"):
        raise ValueError(f"unknown candidate universe {universe!r}")
    if universe == "neighborhood":
        if radius_km is None or radius_km <= 0:
            raise ValueError("radius_km must be positive for the neighborhood universe")

    counts = ds.visit_counts()
    per_user = defaultdict(dict)
    for (i, j), c in counts.items():
        per_user[i][j] = c

    lat = np.radians(ds.poi_coords[:, 0])
    lon = np.radians(ds.poi_coords[:, 1])
    n, m = ds.n_users, ds.n_pois
    l_star, l_single, l_plus, l_minus = [], [], [], []
    cand_list = [] if universe == "neighborhood" else None
    for i in range(n):
        visits = per_user.get(i, {})
        star = np.array(sorted(j for j, c in visits.items() if c >= 2), dtype=np.intp)
        single = np.array(sorted(j for j, c in visits.items() if c == 1), dtype=np.intp)
        plus = np.array(sorted(visits.keys()), dtype=np.intp)
        if universe == "all":
            mask = np.ones(m, dtype=bool)
        else:
            mask = np.zeros(m, dtype=bool)
            if len(plus):
                h = _haversine_block(lat[plus], lon[plus], lat, lon)
                mask = (h.min(axis=0) * EARTH_RADIUS_KM) <= radius_km
            cand = np.nonzero(mask | np.isin(np.arange(m), plus))[0]
            cand_list.append(cand.astype(np.intp))
            mask = np.zeros(m, dtype=bool)
            mask[cand] = True
        mask[plus] = False
        minus = np.nonzero(mask)[0].astype(np.intp)
        l_star.append(star)
        l_single.append(single)
        l_plus.append(plus)
        l_minus.append(minus)
    store = InteractionStore(n, m, l_star, l_single, l_plus, l_minus, dict(counts))
    store._candidates = cand_list
    return store


@dataclass
class SplitDataset:
    """Per-user chronological train/validation/test views sharing one index."""

    train: Dataset
    validation: Dataset
    test: Dataset
    split_ratios: tuple = (0.70, 0.10, 0.20)


def chronological_split(ds: Dataset, ratios=(0.70, 0.10, 0.20)) -> SplitDataset:
    """Split each user's check-ins by time into floor(r0*c)/floor(r1*c)/rest.

    Ties on equal timestamps keep the stable input order.  The three views
    share the parent's index maps, coordinates, and categories.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios {ratios} must sum to 1")
    by_user = defaultdict(list)
    for pos, rec in enumerate(ds.checkins):
        by_user[rec.user_id].append((rec.timestamp, pos))
    assignment = {}  # record position -> 0/1/2
    for _, entries in by_user.items():
        entries.sort(key=lambda e: (e[0], e[1]))
        c = len(entries)
        # +1e-9 absorbs binary representation error in ratio*c (e.g. 0.7*5)
        n_tr = math.floor(ratios[0] * c + 1e-9)
        n_val = math.floor(ratios[1] * c + 1e-9)
        for rank, (_, pos) in enumerate(entries):
            assignment[pos] = 0 if rank < n_tr else (1 if rank < n_tr + n_val else 2)
    views = ([], [], [])
    for pos, rec in enumerate(ds.checkins):
        views[assignment[pos]].append(rec)
    make = lambda recs: Dataset(recs, ds.user_index, ds.poi_index, ds.poi_coords, ds.poi_category)
    return SplitDataset(make(views[0]), make(views[1]), make(views[2]), tuple(ratios))
