"""Weighted, mergeable quantile sketch with arcsine tail scaling.

A digest summarizes a weighted empirical distribution as an ordered list of
(mean, weight) clusters. The arcsine scale function keeps clusters small near
the tails and allows them to grow near the median, which bounds both the
maximal normalized cluster mass and the uniform CDF error by sin(pi/delta).

Digests built from disjoint datasets can be merged by pooling their clusters
as weighted samples and rebuilding at the same compression level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DigestError(ValueError):
    """Invalid input to digest construction or deserialization."""


@dataclass(frozen=True)
class WeightedSample:
    value: float
    weight: float


@dataclass(frozen=True)
class Cluster:
    mean: float
    weight: float


@dataclass(frozen=True)
class Digest:
    """Ordered weighted cluster summary. Immutable after construction."""

    clusters: tuple[Cluster, ...]
    compression: float
    total_weight: float

    def __len__(self) -> int:
        return len(self.clusters)

    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.clusters])

    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.clusters])


def scale(q: float, delta: float) -> float:
    """Arcsine scale function mapping a quantile to cluster-size units.

    Strictly increasing on [0, 1]; the full range spans delta/2 units, so a
    unit span corresponds to the maximal admissible cluster.
    """
    if not 0.0 <= q <= 1.0:
        raise DigestError(f"quantile {q!r} outside [0, 1]")
    if delta <= 0.0:
        raise DigestError(f"compression {delta!r} must be positive")
    return (delta / (2.0 * math.pi)) * math.asin(2.0 * q - 1.0)


def _build_from_arrays(
    values: np.ndarray,
    weights: np.ndarray,
    delta: float,
    total: float | None = None,
) -> Digest:
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.size == 0:
        raise DigestError("cannot build a digest from zero samples")
    if delta < 2.0:
        raise DigestError(f"compression {delta!r} must be >= 2")
    if not np.all(np.isfinite(values)):
        raise DigestError("sample values must be finite")
    if not (np.all(weights > 0.0) and np.all(np.isfinite(weights))):
        raise DigestError("sample weights must be positive and finite")

    if total is None:
        # summed in input order so rebuilds are deterministic
        total = float(np.sum(weights))

    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order]
    q = np.minimum(np.cumsum(w) / total, 1.0)
    # r[i] = scale at the right boundary after absorbing sample i
    r = (delta / (2.0 * math.pi)) * np.arcsin(2.0 * q - 1.0)

    means: list[float] = []
    cl_weights: list[float] = []
    r_left = -delta / 4.0  # scale(0, delta)
    cur_mean = v[0]
    cur_w = w[0]
    for i in range(1, v.size):
        if r[i] - r_left <= 1.0 + 1e-12:
            # incremental weighted mean bounds rounding drift over merge chains
            cur_w += w[i]
            cur_mean += (w[i] / cur_w) * (v[i] - cur_mean)
        else:
            means.append(cur_mean)
            cl_weights.append(cur_w)
            r_left = r[i - 1]
            cur_mean = v[i]
            cur_w = w[i]
    means.append(cur_mean)
    cl_weights.append(cur_w)

    clusters = tuple(Cluster(m, cw) for m, cw in zip(means, cl_weights))
    return Digest(clusters=clusters, compression=float(delta), total_weight=total)


def build_digest_arrays(
    values: np.ndarray,
    weights: np.ndarray,
    delta: float,
    total: float | None = None,
) -> Digest:
    """Array-based construction; same greedy pass as build_digest."""
    return _build_from_arrays(values, weights, delta, total=total)


def build_digest(samples: Sequence[WeightedSample], delta: float) -> Digest:
    """Greedy single-pass construction over value-sorted samples.

    Ties in value keep input order (stable sort). A sample joins the current
    cluster iff the cluster's scale span stays at most one unit; a sample
    that alone exceeds the span still forms a singleton cluster, in which
    case the mass bound degrades to max(sin(pi/delta), max_i w_i/W).
    """
    if len(samples) == 0:
        raise DigestError("cannot build a digest from zero samples")
    values = np.array([s.value for s in samples], dtype=float)
    weights = np.array([s.weight for s in samples], dtype=float)
    return _build_from_arrays(values, weights, delta)


def approx_cdf(digest: Digest, t: float) -> float:
    """Step-CDF estimate: normalized mass of clusters with mean <= t."""
    means = digest.means()
    weights = digest.weights()
    return float(np.sum(weights[means <= t]) / digest.total_weight)


def approx_quantile(digest: Digest, u: float) -> float:
    """Smallest cluster mean whose cumulative normalized mass reaches u."""
    if not 0.0 < u <= 1.0:
        raise DigestError(f"quantile level {u!r} outside (0, 1]")
    cum = np.cumsum(digest.weights())
    target = u * digest.total_weight
    idx = int(np.searchsorted(cum, target * (1.0 - 1e-12), side="left"))
    idx = min(idx, len(digest.clusters) - 1)
    return digest.clusters[idx].mean


def merge(digests: Sequence[Digest], delta: float) -> Digest:
    """Pool all clusters as weighted samples and rebuild at compression delta.

    Total weight is the exact sum of the input totals (fixed summation order:
    digest order, then cluster order).
    """
    if len(digests) == 0:
        raise DigestError("cannot merge zero digests")
    values = np.concatenate([d.means() for d in digests])
    weights = np.concatenate([d.weights() for d in digests])
    total = 0.0
    for d in digests:
        total += d.total_weight
    return _build_from_arrays(values, weights, delta, total=total)


def max_cluster_mass(digest: Digest) -> float:
    """Maximum normalized cluster mass; controls the uniform CDF error."""
    return float(np.max(digest.weights()) / digest.total_weight)


def digest_to_json(digest: Digest) -> str:
    """Wire format: {"compression": d, "clusters": [[mean, weight], ...]}."""
    return json.dumps(
        {
            "compression": digest.compression,
            "clusters": [[c.mean, c.weight] for c in digest.clusters],
        }
    )


def digest_from_json(payload: str) -> Digest:
    try:
        obj = json.loads(payload)
        compression = float(obj["compression"])
        raw = obj["clusters"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DigestError(f"malformed digest payload: {exc}") from exc
    if compression <= 0.0:
        raise DigestError("compression must be positive")
    clusters = []
    prev = -math.inf
    total = 0.0
    for pair in raw:
        if len(pair) != 2:
            raise DigestError(f"malformed cluster entry {pair!r}")
        mean, weight = float(pair[0]), float(pair[1])
        if weight <= 0.0:
            raise DigestError(f"nonpositive cluster weight {weight!r}")
        if mean < prev:
            raise DigestError("clusters not sorted by mean")
        prev = mean
        total += weight
        clusters.append(Cluster(mean, weight))
    if not clusters:
        raise DigestError("digest has no clusters")
    return Digest(clusters=tuple(clusters), compression=compression, total_weight=total)
