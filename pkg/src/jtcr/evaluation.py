"""Evaluation protocol: graded relevance from the test split, top-k
recommendation, Prec@k / nDCG@k with per-user averaging, and multi-run
mean/stddev aggregation.

Relevance is three-level: 2 for POIs the user visited multiple times in the
test split, 1 for a single test visit, 0 otherwise.  By default the candidate
list excludes the user's training-visited POIs.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from jtcr.model import LatentModel


def relevance_labels(test_view) -> dict:
    """Per-user {poi index: rel} maps derived from test-split visit counts."""
    labels = {}
    for (i, j), c in test_view.visit_counts().items():
        labels.setdefault(i, {})[j] = 2 if c >= 2 else 1
    return labels


def recommend(model: LatentModel, i: int, store, k: int, include_train_pois: bool = False) -> np.ndarray:
    """Top-k POI indices by descending score; ties broken by ascending index.

    Candidates are all POIs minus the user's training-visited ones unless
    include_train_pois is set.  Returns fewer than k when candidates run out.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = model.u[:, i] @ model.v
    if include_train_pois or store is None:
        candidates = np.arange(model.n_pois)
    else:
        mask = np.ones(model.n_pois, dtype=bool)
        mask[store.l_plus[i]] = False
        candidates = np.nonzero(mask)[0]
    order = np.argsort(-scores[candidates], kind="stable")
    return candidates[order[:k]]


def precision_at_k(recs, labels: dict, k: int) -> float:
    """Fraction of the top-k list with rel >= 1; denominator is k even when
    the list is shorter."""
    if k <= 0:
        raise ValueError("k must be positive")
    hits = sum(1 for j in list(recs)[:k] if labels.get(int(j), 0) >= 1)
    return hits / k


def dcg_at_k(rels, k: int) -> float:
    return sum((2.0 ** r - 1.0) / math.log2(rank + 2) for rank, r in enumerate(list(rels)[:k]))


def ndcg_at_k(recs, labels: dict, k: int) -> float:
    """DCG of the ranked list over the ideal DCG of the user's test labels
    (sorted descending, zero-padded to k).  Raises if the user has no test
    check-ins: such users are skipped upstream, not scored 0."""
    ideal = sorted(labels.values(), reverse=True)[:k]
    idcg = dcg_at_k(ideal, k)
    if idcg == 0.0:
        raise ValueError("IDCG is zero: user has no test check-ins")
    rels = [labels.get(int(j), 0) for j in list(recs)[:k]]
    return dcg_at_k(rels, k) / idcg


def evaluate_single(model: LatentModel, store, test_view, ks=(5, 10, 20), include_train_pois: bool = False) -> dict:
    """Mean Prec@k and nDCG@k over users with at least one test check-in."""
    labels = relevance_labels(test_view)
    kmax = max(ks)
    prec = {k: [] for k in ks}
    ndcg = {k: [] for k in ks}
    for i in sorted(labels.keys()):
        recs = recommend(model, i, store, kmax, include_train_pois)
        for k in ks:
            prec[k].append(precision_at_k(recs, labels[i], k))
            ndcg[k].append(ndcg_at_k(recs, labels[i], k))
    evaluated = len(labels)
    return {
        "prec": {k: float(np.mean(prec[k])) if evaluated else 0.0 for k in ks},
        "ndcg": {k: float(np.mean(ndcg[k])) if evaluated else 0.0 for k in ks},
        "users_evaluated": evaluated,
        "users_skipped": test_view.n_users - evaluated,
    }


@dataclass
class EvalReport:
    """Per-run metric means plus across-run mean and (population) stddev."""

    ks: list
    runs: list              # one dict per run: {"prec": {...}, "ndcg": {...}, ...}
    mean: dict              # "prec@5" -> value
    std: dict
    users_evaluated: int
    users_skipped: int
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "ks": self.ks,
            "runs": self.runs,
            "mean": self.mean,
            "std": self.std,
            "users_evaluated": self.users_evaluated,
            "users_skipped": self.users_skipped,
            "metadata": self.metadata,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        lines = [f"{'metric':<10}" + "".join(f"{'@' + str(k):>18}" for k in self.ks)]
        for name in ("prec", "ndcg"):
            cells = []
            for k in self.ks:
                key = f"{name}@{k}"
                cells.append(f"{self.mean[key]:.4f} ± {self.std[key]:.4f}")
            lines.append(f"{name:<10}" + "".join(f"{c:>18}" for c in cells))
        lines.append(f"users evaluated {self.users_evaluated}, skipped {self.users_skipped}")
        return "\n".join(lines) + "\n"


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def evaluate(checkpoints, split, store, ks=(5, 10, 20), include_train_pois: bool = False,
             checkpoint_paths=None) -> EvalReport:
    """Evaluate one or more run checkpoints against the test view.

    Every checkpoint must carry the same user/POI id maps as the dataset;
    a mismatch raises ValueError naming the offending checkpoint.
    """
    ks = sorted(ks)
    expect_users, expect_pois = split.train.user_ids, split.train.poi_ids
    runs = []
    users_evaluated = users_skipped = 0
    for r, ckpt in enumerate(checkpoints):
        name = str(checkpoint_paths[r]) if checkpoint_paths else f"run{r}"
        if ckpt.user_ids != expect_users or ckpt.poi_ids != expect_pois:
            raise ValueError(f"checkpoint {name}: id maps do not match the dataset")
        res = evaluate_single(ckpt.model, store, split.test, tuple(ks), include_train_pois)
        users_evaluated, users_skipped = res["users_evaluated"], res["users_skipped"]
        runs.append(
            {
                "checkpoint": name,
                "seed": ckpt.seed,
                "prec": {str(k): res["prec"][k] for k in ks},
                "ndcg": {str(k): res["ndcg"][k] for k in ks},
            }
        )
    mean, std = {}, {}
    for name in ("prec", "ndcg"):
        for k in ks:
            values = np.array([run[name][str(k)] for run in runs])
            mean[f"{name}@{k}"] = float(values.mean())
            # shifted two-pass variance: exactly 0 for identical run values
            shifted = values - values[0]
            std[f"{name}@{k}"] = float(np.sqrt(np.mean((shifted - shifted.mean()) ** 2)))
    metadata = {
        "seeds": [ckpt.seed for ckpt in checkpoints],
        "include_train_pois": include_train_pois,
        "checkpoints": [run["checkpoint"] for run in runs],
    }
    if checkpoint_paths:
        metadata["digests"] = [_digest(p) for p in checkpoint_paths]
    return EvalReport(
        ks=list(ks),
        runs=runs,
        mean=mean,
        std=std,
        users_evaluated=users_evaluated,
        users_skipped=users_skipped,
        metadata=metadata,
    )


def per_user_rows(model: LatentModel, store, test_view, ks=(5, 10, 20), include_train_pois: bool = False):
    """Per-user metric rows (user index, then prec@k and ndcg@k per k)."""
    labels = relevance_labels(test_view)
    kmax = max(ks)
    rows = []
    for i in sorted(labels.keys()):
        recs = recommend(model, i, store, kmax, include_train_pois)
        row = {"user": i}
        for k in sorted(ks):
            row[f"prec@{k}"] = precision_at_k(recs, labels[i], k)
            row[f"ndcg@{k}"] = ndcg_at_k(recs, labels[i], k)
        rows.append(row)
    return rows
