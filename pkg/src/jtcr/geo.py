"""Geographical similarity between POIs and the influence factor on pair losses.

The angular distance between two venues comes from the Haversine formula,
similarity is the reciprocal 1/(1 + km), and the influence factor
1 + alpha*exp(similarity) divides each pairwise ranking loss so that
violations between nearby venues are penalized less.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class GeoPoint:
    """A location on the sphere, stored in radians."""

    lat_rad: float
    lon_rad: float

    def __post_init__(self):
        if not -math.pi / 2 <= self.lat_rad <= math.pi / 2:
            raise ValueError(f"latitude {self.lat_rad} rad outside [-pi/2, pi/2]")
        if not -math.pi <= self.lon_rad <= math.pi:
            raise ValueError(f"longitude {self.lon_rad} rad outside [-pi, pi]")

    @classmethod
    def from_degrees(cls, lat: float, lon: float) -> "GeoPoint":
        return cls(math.radians(lat), math.radians(lon))


def haversine_angle(a: GeoPoint, b: GeoPoint) -> float:
    """Angular great-circle distance between two points, in radians.

    Returns 2*arcsin(sqrt(sin^2(dlat/2) + cos(lat_a)*cos(lat_b)*sin^2(dlon/2))),
    a symmetric value in [0, pi].  The arcsin argument is clamped to [0, 1]
    to absorb floating-point drift at near-antipodal points.
    """
    dlat = b.lat_rad - a.lat_rad
    dlon = b.lon_rad - a.lon_rad
    s = math.sin(dlat / 2.0) ** 2 + math.cos(a.lat_rad) * math.cos(b.lat_rad) * math.sin(dlon / 2.0) ** 2
    s = min(1.0, max(0.0, s))
    return 2.0 * math.asin(math.sqrt(s))


def geo_similarity(a: GeoPoint, b: GeoPoint, radius_km: float = EARTH_RADIUS_KM) -> float:
    """Similarity in (0, 1]: 1/(1 + great-circle km), 1 iff the points coincide."""
    return 1.0 / (1.0 + haversine_angle(a, b) * radius_km)


def influence_factor(g: float, alpha: float) -> float:
    """Geographical influence 1 + alpha*exp(g); always >= 1, so dividing a
    pairwise loss term by it never flips a sign."""
    return 1.0 + alpha * math.exp(g)


def _haversine_block(lat_a, lon_a, lat_b, lon_b):
    """Vectorized haversine over radian arrays; broadcasts to (|a|, |b|)."""
    dlat = lat_b[None, :] - lat_a[:, None]
    dlon = lon_b[None, :] - lon_a[:, None]
    s = np.sin(dlat / 2.0) ** 2 + np.cos(lat_a)[:, None] * np.cos(lat_b)[None, :] * np.sin(dlon / 2.0) ** 2
    np.clip(s, 0.0, 1.0, out=s)
    return 2.0 * np.arcsin(np.sqrt(s))


@dataclass
class GeoIndex:
    """Dense POI index -> coordinates in radians, plus the fixed earth radius."""

    lat_rad: np.ndarray
    lon_rad: np.ndarray
    earth_radius_km: float = EARTH_RADIUS_KM

    @classmethod
    def from_coords_deg(cls, coords: np.ndarray) -> "GeoIndex":
        """Build from an (m, 2) array of (lat, lon) in degrees."""
        rad = np.radians(np.asarray(coords, dtype=np.float64))
        return cls(lat_rad=rad[:, 0].copy(), lon_rad=rad[:, 1].copy())

    @property
    def n_pois(self) -> int:
        return self.lat_rad.shape[0]

    def point(self, j: int) -> GeoPoint:
        return GeoPoint(float(self.lat_rad[j]), float(self.lon_rad[j]))

    def similarity_block(self, idx_a: np.ndarray, idx_b: np.ndarray) -> np.ndarray:
        """Pairwise similarity matrix g of shape (|idx_a|, |idx_b|)."""
        h = _haversine_block(
            self.lat_rad[idx_a], self.lon_rad[idx_a], self.lat_rad[idx_b], self.lon_rad[idx_b]
        )
        return 1.0 / (1.0 + h * self.earth_radius_km)

    def influence_block(self, idx_a: np.ndarray, idx_b: np.ndarray, alpha: float) -> np.ndarray:
        """Pairwise influence matrix 1 + alpha*exp(g) of shape (|idx_a|, |idx_b|)."""
        return 1.0 + alpha * np.exp(self.similarity_block(idx_a, idx_b))


@dataclass
class InfluenceCache:
    """Per-user memo of influence blocks for (visited, candidate) POI pairs.

    The blocks are loop invariants of training, so they are computed once per
    run and reused.  A cached entry is only valid for the exact candidate
    array it was built with; callers that subsample negatives per iteration
    bypass the cache.  Safe for concurrent reads once populated.
    """

    geo: GeoIndex
    alpha: float
    _blocks: dict = field(default_factory=dict)

    def block(self, user: int, pos_idx: np.ndarray, neg_idx: np.ndarray, cacheable: bool = True) -> np.ndarray:
        if self.alpha == 0.0:
            return np.ones((len(pos_idx), len(neg_idx)))
        if not cacheable:
            return self.geo.influence_block(pos_idx, neg_idx, self.alpha)
        hit = self._blocks.get(user)
        if hit is None:
            hit = self.geo.influence_block(pos_idx, neg_idx, self.alpha)
            self._blocks[user] = hit
        return hit
