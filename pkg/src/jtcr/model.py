"""Latent-factor model: scoring, both ranking losses, and their exact gradients.

Phase 1 penalizes the squared surrogate height of every unvisited POI (the
sum of logistic losses of geo-discounted score differences against all
visited POIs).  Phase 2 penalizes log(1 + surrogate reverse height) of every
multiple-visit POI against the single-visit ones; no geographical factor
enters phase 2.  Variance-derived coefficients add lambda_u[i]*u_i and
lambda_v[j]*v_j to the respective gradients, corresponding to the energy
0.5*sum(lambda_u[i]*|u_i|^2) + 0.5*sum(lambda_v[j]*|v_j|^2).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from jtcr.geo import InfluenceCache
from jtcr.temporal import RegularizerVectors

NORMALIZERS = ("pair_count", "positives", "negatives", "one")


def _normalizer(mode: str, n_outer: int, n_inner: int) -> float:
    """Per-user 1/n_i denominator.  pair_count divides by the number of pairs
    the user's sum ranges over; positives/negatives divide by one side only."""
    if mode == "pair_count":
        return float(n_outer * n_inner)
    if mode == "positives":
        return float(n_inner)
    if mode == "negatives":
        return float(n_outer)
    if mode == "one":
        return 1.0
    raise ValueError(f"unknown normalizer {mode!r}")


@dataclass
class LatentModel:
    """Factor matrices u (d x n) and v (d x m); the score of POI j for user i
    is the dot product u[:, i] . v[:, j] and nothing else (no bias terms)."""

    u: np.ndarray
    v: np.ndarray
    alpha: float
    reg: RegularizerVectors | None = None

    @property
    def d(self) -> int:
        return self.u.shape[0]

    @property
    def n_users(self) -> int:
        return self.u.shape[1]

    @property
    def n_pois(self) -> int:
        return self.v.shape[1]

    def copy(self) -> "LatentModel":
        return LatentModel(self.u.copy(), self.v.copy(), self.alpha, self.reg)


@dataclass
class LossBreakdown:
    phase1: float
    phase2: float

    @property
    def theta(self) -> float:
        return self.phase1 + self.phase2


def score(model: LatentModel, i: int, j: int) -> float:
    if not 0 <= i < model.n_users or not 0 <= j < model.n_pois:
        raise IndexError(f"user {i} or poi {j} out of range")
    return float(model.u[:, i] @ model.v[:, j])


def pairwise_delta(model: LatentModel, i: int, k: int, j: int, geo) -> float:
    """Geo-discounted score difference u_i . (v_k - v_j) / (1 + alpha*exp(g_kj))."""
    gfac = float(geo.influence_block(np.array([k]), np.array([j]), model.alpha)[0, 0])
    return float(model.u[:, i] @ (model.v[:, k] - model.v[:, j])) / gfac


def _logistic(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(-x)), overflow-safe."""
    return np.logaddexp(0.0, -x)


def _sigmoid_neg(x: np.ndarray) -> np.ndarray:
    """1 / (1 + exp(x)), overflow-safe."""
    return np.exp(-np.logaddexp(0.0, x))


def _phase1_user(model, store, cache, i, neg=None):
    """Per-user pieces shared by the phase-1 loss and gradients, or None
    when the user has no positives or no negatives."""
    pos = store.l_plus[i]
    if neg is None:
        neg = store.l_minus[i]
        cacheable = True
    else:
        cacheable = False
    if len(pos) == 0 or len(neg) == 0:
        return None
    g = cache.block(i, pos, neg, cacheable=cacheable)
    scores_p = model.u[:, i] @ model.v[:, pos]
    scores_n = model.u[:, i] @ model.v[:, neg]
    delta = (scores_p[:, None] - scores_n[None, :]) / g
    hprime = _logistic(delta).sum(axis=0)
    return pos, neg, g, delta, hprime


def phase1_loss(model: LatentModel, store, geo, normalizer: str = "pair_count", neg_sets=None) -> float:
    """Sum over users of (1/n_i) * sum over negatives of squared surrogate height.

    Users with no positives or no negatives contribute 0.  neg_sets, when
    given, replaces each user's full negative set (per-iteration subsampling).
    """
    cache = geo if isinstance(geo, InfluenceCache) else InfluenceCache(geo, model.alpha)
    total = 0.0
    with np.errstate(over="ignore"):  # inf is the diverged-run signal, guarded upstream
        for i in range(store.n_users):
            parts = _phase1_user(model, store, cache, i, None if neg_sets is None else neg_sets[i])
            if parts is None:
                continue
            pos, neg, _, _, hprime = parts
            total += float(hprime @ hprime) / _normalizer(normalizer, len(neg), len(pos))
    return total


def phase1_gradients(model: LatentModel, store, geo, normalizer: str = "pair_count",
                     neg_sets=None, compute: str = "both"):
    """Exact gradients of phase1_loss plus the regularizer terms.

    Every user contributes lambda_u[i]*u_i to grad_u and every POI
    lambda_v[j]*v_j to grad_v, on top of the data terms.  The alternating
    updates need one matrix at a time; compute="u" or "v" skips the other
    (returned as None).
    """
    cache = geo if isinstance(geo, InfluenceCache) else InfluenceCache(geo, model.alpha)
    want_u, want_v = compute in ("both", "u"), compute in ("both", "v")
    grad_u = np.zeros_like(model.u) if want_u else None
    grad_v = np.zeros_like(model.v) if want_v else None
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(store.n_users):
            parts = _phase1_user(model, store, cache, i, None if neg_sets is None else neg_sets[i])
            if parts is None:
                continue
            pos, neg, g, delta, hprime = parts
            scale = 2.0 / _normalizer(normalizer, len(neg), len(pos))
            w = _sigmoid_neg(delta) / g  # (|pos|, |neg|): 1/(G*(1+exp(delta)))
            a = hprime * w.sum(axis=0)   # per-negative coefficient
            b = w @ hprime               # per-positive coefficient
            if want_u:
                grad_u[:, i] += scale * (model.v[:, neg] @ a - model.v[:, pos] @ b)
            if want_v:
                grad_v[:, neg] += scale * np.outer(model.u[:, i], a)
                grad_v[:, pos] -= scale * np.outer(model.u[:, i], b)
    if model.reg is not None:
        if want_u:
            grad_u += model.reg.lambda_u[None, :] * model.u
        if want_v:
            grad_v += model.reg.lambda_v[None, :] * model.v
    return grad_u, grad_v


def _phase2_user(model, store, i):
    star = store.l_star[i]
    single = store.l_single[i]
    if len(star) == 0 or len(single) == 0:
        return None
    scores_s = model.u[:, i] @ model.v[:, star]
    scores_q = model.u[:, i] @ model.v[:, single]
    diff = scores_s[:, None] - scores_q[None, :]  # star score minus single score
    piprime = _logistic(diff).sum(axis=1)
    return star, single, diff, piprime


def phase2_loss(model: LatentModel, store, normalizer: str = "pair_count") -> float:
    """Sum over users of (1/n_i) * sum over multiple-visit POIs of
    log(1 + surrogate count of single-visit POIs scored above them)."""
    total = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(store.n_users):
            parts = _phase2_user(model, store, i)
            if parts is None:
                continue
            star, single, _, piprime = parts
            total += float(np.log1p(piprime).sum()) / _normalizer(normalizer, len(single), len(star))
    return total


def phase2_gradients(model: LatentModel, store, normalizer: str = "pair_count",
                     compute: str = "both"):
    """Exact gradients of phase2_loss plus the regularizer terms."""
    want_u, want_v = compute in ("both", "u"), compute in ("both", "v")
    grad_u = np.zeros_like(model.u) if want_u else None
    grad_v = np.zeros_like(model.v) if want_v else None
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(store.n_users):
            parts = _phase2_user(model, store, i)
            if parts is None:
                continue
            star, single, diff, piprime = parts
            scale = 1.0 / _normalizer(normalizer, len(single), len(star))
            w = _sigmoid_neg(diff)          # (|star|, |single|)
            c = 1.0 / (1.0 + piprime)       # per-star coefficient
            a = (c[:, None] * w).sum(axis=0)  # per-single coefficient
            b = c * w.sum(axis=1)             # per-star row sum
            if want_u:
                grad_u[:, i] += scale * (model.v[:, single] @ a - model.v[:, star] @ b)
            if want_v:
                grad_v[:, single] += scale * np.outer(model.u[:, i], a)
                grad_v[:, star] -= scale * np.outer(model.u[:, i], b)
    if model.reg is not None:
        if want_u:
            grad_u += model.reg.lambda_u[None, :] * model.u
        if want_v:
            grad_v += model.reg.lambda_v[None, :] * model.v
    return grad_u, grad_v


def regularizer_energy(model: LatentModel) -> float:
    """0.5*sum(lambda_u[i]*|u_i|^2) + 0.5*sum(lambda_v[j]*|v_j|^2); the
    quantity whose gradient is the per-entity shrinkage term."""
    if model.reg is None:
        return 0.0
    return 0.5 * float(
        model.reg.lambda_u @ (model.u * model.u).sum(axis=0)
        + model.reg.lambda_v @ (model.v * model.v).sum(axis=0)
    )


def loss_breakdown(model: LatentModel, store, geo, normalizer: str = "pair_count", neg_sets=None) -> LossBreakdown:
    return LossBreakdown(
        phase1_loss(model, store, geo, normalizer, neg_sets),
        phase2_loss(model, store, normalizer),
    )


def exact_heights(model: LatentModel, store, geo, i: int):
    """Indicator-based violation counts for user i (diagnostics).

    Returns (height per negative POI, reverse height per multiple-visit POI).
    A tie in scores counts as a violation; heights are geo-discounted by
    1/(1 + alpha*exp(g)), reverse heights are plain counts.
    """
    cache = geo if isinstance(geo, InfluenceCache) else InfluenceCache(geo, model.alpha)
    pos, neg = store.l_plus[i], store.l_minus[i]
    heights = np.zeros(len(neg))
    if len(pos) and len(neg):
        g = cache.block(i, pos, neg)
        scores_p = model.u[:, i] @ model.v[:, pos]
        scores_n = model.u[:, i] @ model.v[:, neg]
        violated = scores_p[:, None] <= scores_n[None, :]
        heights = (violated / g).sum(axis=0)
    star, single = store.l_star[i], store.l_single[i]
    rev = np.zeros(len(star))
    if len(star) and len(single):
        scores_s = model.u[:, i] @ model.v[:, star]
        scores_q = model.u[:, i] @ model.v[:, single]
        rev = (scores_s[:, None] <= scores_q[None, :]).sum(axis=1).astype(np.float64)
    return heights, rev


# --- checkpoint i/o ---------------------------------------------------------

_CKPT_MAGIC = b"JTCR-CKPT-1\n"


@dataclass
class Checkpoint:
    """A trained model plus the id maps needed to interpret its columns."""

    model: LatentModel
    user_ids: list
    poi_ids: list
    lam: float
    seed: int


def save_checkpoint(path, model: LatentModel, user_ids, poi_ids, lam: float, seed: int) -> None:
    """Write magic, a canonical JSON header, then u and v as column-major
    little-endian float64.  Identical contents produce identical bytes."""
    header = {
        "d": model.d,
        "n": model.n_users,
        "m": model.n_pois,
        "alpha": model.alpha,
        "lambda": lam,
        "seed": seed,
        "users": list(user_ids),
        "pois": list(poi_ids),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(np.ascontiguousarray(model.u.T).astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(model.v.T).astype("<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        size = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(size).decode("utf-8"))
        d, n, m = header["d"], header["n"], header["m"]
        u = np.frombuffer(fh.read(8 * d * n), dtype="<f8").reshape(n, d).T.copy()
        v = np.frombuffer(fh.read(8 * d * m), dtype="<f8").reshape(m, d).T.copy()
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after factor matrices")
    model = LatentModel(u, v, header["alpha"], reg=None)
    return Checkpoint(model, header["users"], header["pois"], header["lambda"], header["seed"])
