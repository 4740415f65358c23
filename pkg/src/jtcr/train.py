"""The joint two-phase training loop: alternating full-batch gradient descent
with an absolute-change convergence test on the summed objective.

Each iteration first applies the visited-vs-unvisited updates (all user
columns with v fixed, then all POI columns with the updated u), then the
multiple-vs-single updates in the same order, then recomputes the objective.
The convergence value excludes the regularizer energy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from jtcr.evaluation import evaluate_single
from jtcr.geo import InfluenceCache
from jtcr.model import (
    LatentModel,
    NORMALIZERS,
    phase1_gradients,
    phase1_loss,
    phase2_gradients,
    phase2_loss,
)
from jtcr.temporal import RegularizerVectors

MODES = ("joint", "phase1_only", "no_var", "no_geo")


class DivergenceError(RuntimeError):
    """Objective became non-finite; carries the offending iteration."""

    def __init__(self, iteration):
        super().__init__(f"objective became non-finite at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    d: int = 80
    gamma: float = 1e-4
    lam: float = 1e-4
    alpha: float = 0.5
    max_iter: int = 500
    epsilon: float = 1e-3
    seed: int = 0
    mode: str = "joint"
    normalizer: str = "pair_count"
    neg_samples: int | None = None

    def __post_init__(self):
        if self.gamma <= 0 or self.lam < 0 or self.alpha < 0:
            raise ValueError("gamma must be > 0, lambda and alpha >= 0")
        if self.d < 1 or self.max_iter < 1 or self.epsilon <= 0:
            raise ValueError("d and max_iter must be >= 1 and epsilon > 0")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.normalizer not in NORMALIZERS:
            raise ValueError(f"unknown normalizer {self.normalizer!r}")
        if self.neg_samples is not None and self.neg_samples < 1:
            raise ValueError("neg_samples must be >= 1")


@dataclass
class TrainTrace:
    """Objective values per iteration plus convergence bookkeeping.

    wall_ms holds measured per-iteration timing; it is kept out of the
    serialized trace by default so artifacts stay byte-reproducible.
    """

    initial_theta: float = 0.0
    rows: list = field(default_factory=list)  # (t, theta, phase1, phase2)
    wall_ms: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    def thetas(self):
        return [r[1] for r in self.rows]

    def write_csv(self, path, include_timing: bool = False) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("t,theta,phase1,phase2,millis\n")
            for (t, theta, p1, p2), ms in zip(self.rows, self.wall_ms):
                millis = repr(ms) if include_timing else "0"
                fh.write(f"{t},{theta!r},{p1!r},{p2!r},{millis}\n")


def init_model(cfg: TrainConfig, n: int, m: int) -> LatentModel:
    """Factors drawn i.i.d. from N(0, 0.01^2); the small scale keeps initial
    logistic terms near log 2.  Same seed, same bytes."""
    if n < 1 or m < 1:
        raise ValueError("need at least one user and one POI")
    rng = np.random.default_rng(cfg.seed)
    u = 0.01 * rng.standard_normal((cfg.d, n))
    v = 0.01 * rng.standard_normal((cfg.d, m))
    return LatentModel(u, v, cfg.alpha, reg=None)


def _effective(cfg: TrainConfig, reg: RegularizerVectors, n: int, m: int):
    """Resolve ablation modes into concrete alpha / regularizer / phase-2 flag."""
    alpha = 0.0 if cfg.mode == "no_geo" else cfg.alpha
    if cfg.mode == "no_var":
        reg = RegularizerVectors.uniform(cfg.lam, n, m)
    run_phase2 = cfg.mode != "phase1_only"
    return alpha, reg, run_phase2


def train(cfg: TrainConfig, store, geo, reg: RegularizerVectors):
    """Run the alternating two-phase loop until |theta_change| <= epsilon or
    max_iter; returns the trained model and its trace.

    With neg_samples set, each user's negatives are re-drawn per iteration
    from a dedicated seeded stream and that iteration's objective is computed
    on the same sample.
    """
    n, m = store.n_users, store.n_pois
    alpha, reg, run_phase2 = _effective(cfg, reg, n, m)
    model = init_model(cfg, n, m)
    model.alpha = alpha
    model.reg = reg
    cache = InfluenceCache(geo, alpha)
    sampler = np.random.default_rng([cfg.seed, 1]) if cfg.neg_samples else None

    def draw_negatives():
        if sampler is None:
            return None
        sets = []
        for i in range(n):
            full = store.l_minus[i]
            if len(full) > cfg.neg_samples:
                sets.append(np.sort(sampler.choice(full, size=cfg.neg_samples, replace=False)))
            else:
                sets.append(full)
        return sets

    neg_sets = draw_negatives()
    p1 = phase1_loss(model, store, cache, cfg.normalizer, neg_sets)
    p2 = phase2_loss(model, store, cfg.normalizer)
    theta_new = p1 + p2
    trace = TrainTrace(initial_theta=theta_new)
    theta_old = theta_new / 2.0  # guarantees the loop is entered

    t = 0
    while abs(theta_new - theta_old) > cfg.epsilon and t < cfg.max_iter:
        t += 1
        started = time.perf_counter()
        gu, _ = phase1_gradients(model, store, cache, cfg.normalizer, neg_sets, compute="u")
        model.u -= cfg.gamma * gu
        _, gv = phase1_gradients(model, store, cache, cfg.normalizer, neg_sets, compute="v")
        model.v -= cfg.gamma * gv
        if run_phase2:
            gu, _ = phase2_gradients(model, store, cfg.normalizer, compute="u")
            model.u -= cfg.gamma * gu
            _, gv = phase2_gradients(model, store, cfg.normalizer, compute="v")
            model.v -= cfg.gamma * gv
        theta_old = theta_new
        p1 = phase1_loss(model, store, cache, cfg.normalizer, neg_sets)
        p2 = phase2_loss(model, store, cfg.normalizer)
        theta_new = p1 + p2
        trace.rows.append((t, theta_new, p1, p2))
        trace.wall_ms.append((time.perf_counter() - started) * 1e3)
        if not np.isfinite(theta_new):
            raise DivergenceError(t)
        neg_sets = draw_negatives()
    trace.converged = abs(theta_new - theta_old) <= cfg.epsilon
    trace.iterations = t
    return model, trace


def select_hyperparameters(grid, split, ks=(5,), universe="all", radius_km=None) -> TrainConfig:
    """Train every config on the train view, score validation nDCG@k (first k
    in ks), return the argmax; ties keep the earliest grid position."""
    from jtcr.data import build_interactions
    from jtcr.temporal import regularizer_vectors

    if not grid:
        raise ValueError("empty hyperparameter grid")
    store = build_interactions(split.train, universe=universe, radius_km=radius_km)
    geo = split.train.geo_index()
    best_cfg, best_score = None, -np.inf
    for cfg in grid:
        reg = regularizer_vectors(split.train, cfg.lam)
        model, _ = train(cfg, store, geo, reg)
        report = evaluate_single(model, store, split.validation, ks=tuple(ks))
        ndcg = report["ndcg"][ks[0]]
        if ndcg > best_score:
            best_cfg, best_score = cfg, ndcg
    return best_cfg


def derived_seeds(base_seed: int, runs: int) -> list:
    """Per-run seeds: base_seed + run index (documented counter offsets)."""
    return [base_seed + r for r in range(runs)]


def config_from_dict(payload: dict) -> TrainConfig:
    """Build a TrainConfig from JSON-style keys; 'lambda' aliases 'lam'."""
    allowed = {f: payload[f] for f in payload if f in TrainConfig.__dataclass_fields__}
    if "lambda" in payload:
        allowed["lam"] = payload["lambda"]
    return TrainConfig(**allowed)


def config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "d": cfg.d,
        "gamma": cfg.gamma,
        "lambda": cfg.lam,
        "alpha": cfg.alpha,
        "max_iter": cfg.max_iter,
        "epsilon": cfg.epsilon,
        "seed": cfg.seed,
        "mode": cfg.mode,
        "normalizer": cfg.normalizer,
        "neg_samples": cfg.neg_samples,
    }


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)
