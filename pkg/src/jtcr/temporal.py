"""Monthly activity analysis and the variance-based regularizer coefficients.

Check-ins are binned by UTC calendar month over the dataset's full month
range (empty months stay in as zero-share bins: they carry variance signal).
Each user's coefficient is lambda*log(1+exp(-var)) of their normalized
monthly shares; each POI inherits the variance of its category's series, so
temporally stable entities are shrunk harder than volatile ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np


def _month_key(ts: int) -> int:
    """Unix seconds -> linear month number (year*12 + month-1, UTC)."""
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    return dt.year * 12 + (dt.month - 1)


def month_label(key: int) -> str:
    return f"{key // 12:04d}-{key % 12 + 1:02d}"


def month_range(ds) -> list:
    """All linear month keys from the earliest to the latest check-in."""
    if not ds.checkins:
        return []
    keys = [_month_key(r.timestamp) for r in ds.checkins]
    return list(range(min(keys), max(keys) + 1))


@dataclass
class MonthlySeries:
    """Normalized monthly check-in shares for one user or category."""

    owner: object
    months: list       # linear month keys covering the dataset range
    shares: np.ndarray  # same length; sums to 1 when total_count > 0
    total_count: int


def _count_matrix(ds, key_of) -> tuple:
    """Rows = owners produced by key_of(record), columns = dataset months."""
    months = month_range(ds)
    if not months:
        return {}, months, np.zeros((0, 0))
    offset = months[0]
    owners = {}
    rows, cols = [], []
    for rec in ds.checkins:
        owner = key_of(rec)
        if owner not in owners:
            owners[owner] = len(owners)
        rows.append(owners[owner])
        cols.append(_month_key(rec.timestamp) - offset)
    counts = np.zeros((len(owners), len(months)))
    np.add.at(counts, (rows, cols), 1.0)
    return owners, months, counts


def _user_key(ds):
    return lambda rec: ds.user_index[rec.user_id]


def _category_key(ds):
    return lambda rec: ds.poi_category[ds.poi_index[rec.poi_id]]


def monthly_series(ds, user=None, category=None) -> MonthlySeries:
    """Monthly share series for one user index or one category key."""
    if (user is None) == (category is None):
        raise ValueError("give exactly one of user= or category=")
    key_of = _user_key(ds) if user is not None else _category_key(ds)
    owner = user if user is not None else category
    owners, months, counts = _count_matrix(ds, key_of)
    if owner not in owners:
        raise KeyError(f"owner {owner!r} has no check-ins in this dataset")
    row = counts[owners[owner]]
    total = int(row.sum())
    return MonthlySeries(owner, months, row / total, total)


def activity_variance(series: MonthlySeries) -> float:
    """Population variance of the shares over every bin in range."""
    if series.total_count <= 0 or series.shares.size == 0:
        raise ValueError("variance of an empty series is undefined")
    return float(np.var(series.shares))


@dataclass
class RegularizerVectors:
    """Per-user and per-POI shrinkage coefficients lambda*log(1+exp(-var))."""

    lambda_u: np.ndarray
    lambda_v: np.ndarray
    lam: float
    sigma2_u: np.ndarray
    sigma2_v: np.ndarray

    @classmethod
    def uniform(cls, lam: float, n: int, m: int) -> "RegularizerVectors":
        """Plain ridge coefficients: every entry is lambda (variance ignored)."""
        return cls(np.full(n, lam), np.full(m, lam), lam, np.zeros(n), np.zeros(m))


def regularizer_vectors(ds, lam: float) -> RegularizerVectors:
    """Variance-derived coefficients from a (training) dataset view.

    Users with no check-ins in the view get variance 0, i.e. the maximal
    coefficient lambda*log(2); same for POIs whose category never appears.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    n, m = ds.n_users, ds.n_pois

    sigma2_u = np.zeros(n)
    owners, _, counts = _count_matrix(ds, _user_key(ds))
    if counts.size:
        totals = counts.sum(axis=1, keepdims=True)
        shares = counts / np.where(totals > 0, totals, 1.0)
        var = np.var(shares, axis=1)
        for owner, row in owners.items():
            sigma2_u[owner] = var[row]

    sigma2_v = np.zeros(m)
    owners, _, counts = _count_matrix(ds, _category_key(ds))
    if counts.size:
        totals = counts.sum(axis=1, keepdims=True)
        shares = counts / np.where(totals > 0, totals, 1.0)
        var = np.var(shares, axis=1)
        for j in range(m):
            row = owners.get(ds.poi_category[j])
            if row is not None:
                sigma2_v[j] = var[row]

    lambda_u = lam * np.log1p(np.exp(-sigma2_u))
    lambda_v = lam * np.log1p(np.exp(-sigma2_v))
    return RegularizerVectors(lambda_u, lambda_v, lam, sigma2_u, sigma2_v)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties assigned the average of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Spearman rank correlation with average-rank tie handling."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ValueError("need at least 2 observations")
    rx, ry = _average_ranks(x), _average_ranks(y)
    sx, sy = rx.std(), ry.std()
    if sx == 0.0 or sy == 0.0:
        raise ValueError("correlation undefined for a constant vector")
    return float(((rx - rx.mean()) * (ry - ry.mean())).mean() / (sx * sy))


@dataclass
class AnalysisReport:
    """Tables behind the activity analysis; the CLI serializes them to CSV."""

    monthly_totals: list          # (month label, count)
    category_popularity: list     # (month label, category, share of that month)
    variance_extremes: list       # (kind, which, owner, variance, total, month, share)
    user_checkin_split: list      # (user_id, single count, multiple count)
    correlations: dict            # name -> rho
    summary: dict                 # Table-style dataset statistics


def dataset_summary(ds) -> dict:
    """Users, POIs, check-ins, average degrees, multiple-check-in share, density."""
    counts = ds.visit_counts()
    n, m, total = ds.n_users, ds.n_pois, len(ds.checkins)
    pairs = len(counts)
    multi = sum(c for c in counts.values() if c >= 2)
    return {
        "users": n,
        "pois": m,
        "checkins": total,
        "avg_pois_per_user": pairs / n if n else 0.0,
        "avg_users_per_poi": pairs / m if m else 0.0,
        "multiple_checkin_pct": 100.0 * multi / total if total else 0.0,
        "density": pairs / (n * m) if n and m else 0.0,
    }


def analysis_report(ds, variance_threshold: int = 50, top_categories: int = 8, extremes: int = 2) -> AnalysisReport:
    """Monthly totals, category popularity, variance extremes, per-user
    single/multiple counts, and the three rank correlations.

    variance_threshold drops low-activity users from the most-variant-user
    table only (they dominate it otherwise); correlations use all owners.
    """
    months = month_range(ds)
    labels = [month_label(k) for k in months]

    u_owners, _, u_counts = _count_matrix(ds, _user_key(ds))
    c_owners, _, c_counts = _count_matrix(ds, _category_key(ds))

    monthly_totals = list(zip(labels, u_counts.sum(axis=0).astype(int).tolist()))

    cat_names = list(c_owners.keys())
    cat_totals = c_counts.sum(axis=1)
    month_totals = c_counts.sum(axis=0)
    top = np.argsort(-cat_totals, kind="stable")[:top_categories]
    category_popularity = []
    for t, label in enumerate(labels):
        denom = month_totals[t] if month_totals[t] > 0 else 1.0
        for r in top:
            category_popularity.append((label, cat_names[r], float(c_counts[r, t] / denom)))

    def shares_and_var(counts):
        totals = counts.sum(axis=1, keepdims=True)
        shares = counts / np.where(totals > 0, totals, 1.0)
        return shares, np.var(shares, axis=1), totals[:, 0]

    u_shares, u_var, u_total = shares_and_var(u_counts)
    c_shares, c_var, c_total = shares_and_var(c_counts)
    user_ids = ds.user_ids
    u_names = [user_ids[i] for i in u_owners.keys()]

    variance_extremes = []

    def emit(kind, which, rows, names, var, total, shares):
        for r in rows:
            for t, label in enumerate(labels):
                variance_extremes.append(
                    (kind, which, names[r], float(var[r]), int(total[r]), label, float(shares[r, t]))
                )

    emit("user", "least", np.argsort(u_var, kind="stable")[:extremes], u_names, u_var, u_total, u_shares)
    active = np.nonzero(u_total >= variance_threshold)[0]
    most_u = active[np.argsort(-u_var[active], kind="stable")[:extremes]]
    emit("user", "most", most_u, u_names, u_var, u_total, u_shares)
    emit("category", "least", np.argsort(c_var, kind="stable")[:extremes], cat_names, c_var, c_total, c_shares)
    emit("category", "most", np.argsort(-c_var, kind="stable")[:extremes], cat_names, c_var, c_total, c_shares)

    counts = ds.visit_counts()
    single = np.zeros(ds.n_users)
    multiple = np.zeros(ds.n_users)
    for (i, _), c in counts.items():
        if c >= 2:
            multiple[i] += c
        else:
            single[i] += c
    user_checkin_split = [
        (uid, int(single[i]), int(multiple[i])) for uid, i in ds.user_index.items()
    ]

    u_quantity = single + multiple
    owner_rows = np.array(list(u_owners.keys()), dtype=np.intp)
    share = multiple / np.where(u_quantity > 0, u_quantity, 1.0)

    def guarded(x, y):
        # undefined for constant vectors; None keeps the JSON standard
        try:
            return spearman(x, y)
        except ValueError:
            return None

    correlations = {
        "user_variance_vs_quantity": guarded(u_var, u_quantity[owner_rows]),
        "category_variance_vs_popularity": guarded(c_var, c_total),
        "checkins_vs_multiple_share": guarded(u_quantity, share),
    }

    return AnalysisReport(
        monthly_totals,
        category_popularity,
        variance_extremes,
        user_checkin_split,
        correlations,
        dataset_summary(ds),
    )
