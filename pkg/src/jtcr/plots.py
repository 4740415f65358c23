"""Figure rendering for the report paths: every plot mirrors one of the CSV
tables the CLI writes, so the figures can be regenerated from the files."""

from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def _save(fig, path):
    # format pinned: atomic writes hand us a .tmp path to rename afterwards
    fig.tight_layout()
    fig.savefig(path, dpi=120, format="png")
    plt.close(fig)


def plot_monthly_totals(monthly_totals, path):
    """Bar chart of check-ins per calendar month."""
    labels = [m for m, _ in monthly_totals]
    counts = [c for _, c in monthly_totals]
    fig, ax = plt.subplots(figsize=(max(6, 0.45 * len(labels)), 3.5))
    ax.bar(range(len(labels)), counts, color="#4878b0")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel("check-ins")
    ax.set_title("Check-ins per month")
    _save(fig, path)


def plot_category_popularity(category_popularity, path):
    """One line per top category: share of each month's check-ins."""
    series = defaultdict(list)
    months = []
    for month, cat, share in category_popularity:
        if month not in months:
            months.append(month)
        series[cat].append(share)
    fig, ax = plt.subplots(figsize=(max(6, 0.45 * len(months)), 4))
    for cat, shares in series.items():
        ax.plot(range(len(shares)), shares, marker="o", markersize=3, label=str(cat))
    ax.set_xticks(range(len(months)))
    ax.set_xticklabels(months, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel("share of monthly check-ins")
    ax.set_title("Top category popularity over time")
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_variance_extremes(variance_extremes, path):
    """2x2 grid: least/most variant users and categories, monthly shares."""
    panels = {
        ("user", "least"): (0, 0, "Least variant users"),
        ("user", "most"): (0, 1, "Most variant users"),
        ("category", "least"): (1, 0, "Least variant categories"),
        ("category", "most"): (1, 1, "Most variant categories"),
    }
    grouped = defaultdict(lambda: defaultdict(list))
    months = []
    for kind, which, owner, _var, _total, month, share in variance_extremes:
        grouped[(kind, which)][owner].append(share)
        if month not in months:
            months.append(month)
    fig, axes = plt.subplots(2, 2, figsize=(11, 6), sharex=True)
    for key, (r, c, title) in panels.items():
        ax = axes[r][c]
        for owner, shares in grouped.get(key, {}).items():
            ax.plot(range(len(shares)), shares, marker="o", markersize=3, label=str(owner))
        ax.set_title(title, fontsize=9)
        if grouped.get(key):
            ax.legend(fontsize=6)
    for ax in axes[1]:
        ax.set_xticks(range(len(months)))
        ax.set_xticklabels(months, rotation=60, ha="right", fontsize=7)
    _save(fig, path)


def plot_user_checkin_split(user_checkin_split, path, max_users: int = 100):
    """Stacked bars of single vs multiple check-ins for the most active users."""
    rows = sorted(user_checkin_split, key=lambda r: -(r[1] + r[2]))[:max_users]
    singles = [r[1] for r in rows]
    multiples = [r[2] for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(max(6, 0.12 * len(rows)), 3.5))
    ax.bar(x, singles, label="single", color="#4878b0")
    ax.bar(x, multiples, bottom=singles, label="multiple", color="#d1615d")
    ax.set_ylabel("check-ins")
    ax.set_xlabel(f"top {len(rows)} users by activity")
    ax.set_title("Single vs multiple check-ins per user")
    ax.legend()
    _save(fig, path)


def plot_trace(trace, path):
    """Objective value per training iteration."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ts = [r[0] for r in trace.rows]
    ax.plot(ts, [r[1] for r in trace.rows], label="objective", color="#333333")
    ax.plot(ts, [r[2] for r in trace.rows], label="phase 1", linestyle="--")
    ax.plot(ts, [r[3] for r in trace.rows], label="phase 2", linestyle=":")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title("Training objective")
    ax.legend()
    _save(fig, path)


def plot_metrics(report, path):
    """Grouped bars with stddev whiskers for each metric and cutoff."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.35
    ks = report.ks
    for offset, name in ((0.0, "prec"), (width, "ndcg")):
        means = [report.mean[f"{name}@{k}"] for k in ks]
        errs = [report.std[f"{name}@{k}"] for k in ks]
        ax.bar([i + offset for i in range(len(ks))], means, width, yerr=errs, capsize=3, label=name)
    ax.set_xticks([i + width / 2 for i in range(len(ks))])
    ax.set_xticklabels([f"@{k}" for k in ks])
    ax.set_title("Ranking quality")
    ax.legend()
    _save(fig, path)
