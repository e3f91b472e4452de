"""Frequency-band clustering of fitted eigenvalues.

Eigenvalues are reduced to one real feature per (window, mode) pair, either
``|Im w|``, ``|Im w|^2``, or ``log10(|Im w|)``. The 1-D features are
partitioned with seeded k-means (k-means++ seeding, best of several
restarts) and partitions are scored with the Silhouette score. Labels are
always reindexed so that label 0 is the lowest-frequency cluster.

Clustering operates on the sorted value multiset, so results are invariant
under permutations of the input order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegeneratePartition, TooFewPoints

TRANSFORMS = ("abs_imag", "abs_imag_sq", "log10_abs_imag")

#: sweeps whose best silhouette falls below this are flagged low-confidence
LOW_CONFIDENCE_SILHOUETTE = 0.25

#: |Im w| below 1e-12 times the median |Im w| is treated as zero frequency
NEAR_ZERO_REL = 1e-12

_MAX_LLOYD_ITERS = 300


@dataclass(frozen=True)
class OmegaFeatures:
    """Clusterable eigenvalue features plus their (level, window, mode) origins.

    ``near_zero_index`` lists entries whose frequency magnitude was too close
    to zero for the log transform; they bypass clustering and are routed to
    the lowest band. ``weights`` optionally carries per-entry cluster weights
    (energy shares); ``None`` means every entry counts equally.
    """

    values: np.ndarray
    transform: str
    source_index: np.ndarray  # (n, 3) int: level, window, mode
    near_zero_index: np.ndarray = field(
        default_factory=lambda: np.empty((0, 3), dtype=np.int64)
    )
    weights: np.ndarray | None = None


@dataclass(frozen=True)
class ClusterResult:
    labels: np.ndarray
    centroids: np.ndarray  # ascending, feature units
    silhouette: float
    seed: int


@dataclass(frozen=True)
class SweepResult:
    best_k: int
    result: ClusterResult
    scores: list[tuple[int, float]]
    low_confidence: bool


def transform_omega(
    omegas: np.ndarray,
    kind: str,
    source_index: np.ndarray | None = None,
    weights: np.ndarray | None = None,
) -> OmegaFeatures:
    """Map complex eigenvalues to 1-D cluster features.

    ``abs_imag`` gives ``|Im w|``, ``abs_imag_sq`` its square, and
    ``log10_abs_imag`` its base-10 log with near-zero entries flagged and
    excluded (pre-assigned to band 0) since the log is undefined there.
    """
    if kind not in TRANSFORMS:
        raise ConfigError(f"unknown omega transform {kind!r}, expected one of {TRANSFORMS}")
    omegas = np.asarray(omegas, dtype=np.complex128).ravel()
    if source_index is None:
        source_index = np.stack(
            [np.zeros(omegas.size, dtype=np.int64)] * 2
            + [np.arange(omegas.size, dtype=np.int64)],
            axis=1,
        )
    source_index = np.asarray(source_index, dtype=np.int64).reshape(omegas.size, 3)
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64).reshape(omegas.size)
    abs_im = np.abs(omegas.imag)
    if kind == "abs_imag":
        return OmegaFeatures(abs_im, kind, source_index, weights=weights)
    if kind == "abs_imag_sq":
        return OmegaFeatures(abs_im**2, kind, source_index, weights=weights)
    threshold = NEAR_ZERO_REL * float(np.median(abs_im)) if abs_im.size else 0.0
    near = (abs_im < threshold) | (abs_im <= 0.0)
    return OmegaFeatures(
        np.log10(abs_im[~near]),
        kind,
        source_index[~near],
        near_zero_index=source_index[near],
        weights=None if weights is None else weights[~near],
    )


def inverse_transform(feature_values: np.ndarray, kind: str) -> np.ndarray:
    """Map feature-space values (e.g. centroids) back to ``|Im w|`` units."""
    v = np.asarray(feature_values, dtype=np.float64)
    if kind == "abs_imag":
        return v
    if kind == "abs_imag_sq":
        return np.sqrt(v)
    if kind == "log10_abs_imag":
        return 10.0**v
    raise ConfigError(f"unknown omega transform {kind!r}")


def _kmeanspp_seed(
    x_sorted: np.ndarray, w_sorted: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    n = x_sorted.size
    centroids = np.empty(k)
    first = rng.choice(n, p=w_sorted / w_sorted.sum())
    centroids[0] = x_sorted[int(first)]
    d2 = w_sorted * (x_sorted - centroids[0]) ** 2
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # remaining mass sits on already-chosen points; fall back to
            # unchosen distinct values (k <= distinct count guarantees enough)
            remaining = np.setdiff1d(np.unique(x_sorted), centroids[:i])
            centroids[i:k] = remaining[: k - i]
            break
        centroids[i] = x_sorted[int(rng.choice(n, p=d2 / total))]
        d2 = np.minimum(d2, w_sorted * (x_sorted - centroids[i]) ** 2)
    return np.sort(centroids)


def _assign_sorted(x_sorted: np.ndarray, centroids: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    k = centroids.size
    mid = 0.5 * (centroids[:-1] + centroids[1:])
    bounds[1:k] = np.searchsorted(x_sorted, mid, side="left")
    np.maximum.accumulate(bounds, out=bounds)
    return np.diff(bounds)


def _lloyd_sorted(
    x_sorted: np.ndarray, w_sorted: np.ndarray, centroids: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float]:
    """Weighted Lloyd iterations on sorted 1-D data; clusters are contiguous runs."""
    n = x_sorted.size
    k = centroids.size
    prefix_wx = np.concatenate([[0.0], np.cumsum(w_sorted * x_sorted)])
    prefix_w = np.concatenate([[0.0], np.cumsum(w_sorted)])
    bounds = np.empty(k + 1, dtype=np.int64)
    bounds[0], bounds[k] = 0, n
    counts = _assign_sorted(x_sorted, centroids, bounds)
    for _ in range(_MAX_LLOYD_ITERS):
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            for c in empties:
                # re-seed each empty cluster on the farthest point of the
                # currently widest cluster, then re-assign
                donor = int(np.argmax(counts))
                seg = x_sorted[bounds[donor] : bounds[donor + 1]]
                centroids[c] = seg[int(np.argmax(np.abs(seg - centroids[donor])))]
                counts[donor] -= 1
            centroids = np.sort(centroids)
            counts = _assign_sorted(x_sorted, centroids, bounds)
            continue
        wsums = prefix_wx[bounds[1:]] - prefix_wx[bounds[:-1]]
        wmass = prefix_w[bounds[1:]] - prefix_w[bounds[:-1]]
        new_centroids = np.where(wmass > 0.0, wsums / np.maximum(wmass, 1e-300), centroids)
        if np.array_equal(new_centroids, centroids):
            break
        centroids = new_centroids
        counts = _assign_sorted(x_sorted, centroids, bounds)
    labels = np.repeat(np.arange(k), counts)
    inertia = float(np.sum(w_sorted * (x_sorted - centroids[labels]) ** 2))
    return labels, centroids, inertia


def kmeans(
    features, k: int, seed: int, restarts: int = 10, weights: np.ndarray | None = None
) -> ClusterResult:
    """Seeded 1-D k-means; returns labels reindexed by ascending centroid.

    Runs ``restarts`` independent k-means++ initializations and keeps the
    partition with the lowest within-cluster sum of squares. Deterministic
    for a fixed ``(features, k, seed, restarts, weights)``. ``weights``
    scales each entry's influence on seeding, centroids, and inertia;
    omitted weights mean plain k-means.
    """
    x = _feature_array(features)
    w = _weight_array(weights, features, x.size)
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    n_distinct = np.unique(x).size
    if k > n_distinct:
        raise TooFewPoints(f"k={k} exceeds {n_distinct} distinct feature values")
    order = np.argsort(x, kind="stable")
    x_sorted = x[order]
    w_sorted = w[order]
    rng = np.random.default_rng(seed)
    best: tuple[float, np.ndarray, np.ndarray] | None = None
    for _ in range(max(1, restarts)):
        centroids0 = _kmeanspp_seed(x_sorted, w_sorted, k, rng)
        labels_s, centroids, inertia = _lloyd_sorted(x_sorted, w_sorted, centroids0.copy())
        if best is None or inertia < best[0]:
            best = (inertia, labels_s, centroids)
    _, labels_sorted, centroids = best
    labels = np.empty_like(labels_sorted)
    labels[order] = labels_sorted
    score = silhouette(x, labels, weights=w) if k >= 2 else 0.0
    return ClusterResult(labels=labels, centroids=centroids, silhouette=score, seed=seed)


def silhouette(features, labels: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Mean silhouette score of a 1-D partition.

    For each point, ``a`` is its mean distance to its own cluster and ``b``
    the lowest mean distance to any other cluster; the contribution is
    ``(b - a) / max(a, b)``. Singletons contribute 0, as does the degenerate
    all-identical case where ``max(a, b) == 0``. With ``weights``, both the
    per-cluster mean distances and the final average are weighted.
    """
    x = _feature_array(features)
    w = _weight_array(weights, features, x.size)
    labels = np.asarray(labels)
    if labels.shape != x.shape:
        raise DegeneratePartition("labels must align with features")
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise DegeneratePartition(f"need >= 2 clusters, got {uniq.size}")
    counts = {int(c): int(np.sum(labels == c)) for c in uniq}
    if min(counts.values()) == 0:
        raise DegeneratePartition("empty cluster")

    # per-cluster sorted values and weighted prefix sums: mean |x - y| in O(log n)
    sorted_vals = {}
    pref_w = {}
    pref_wx = {}
    wmass = {}
    for c in uniq:
        c = int(c)
        mask = labels == c
        order = np.argsort(x[mask], kind="stable")
        vals = x[mask][order]
        wv = w[mask][order]
        sorted_vals[c] = vals
        pref_w[c] = np.concatenate([[0.0], np.cumsum(wv)])
        pref_wx[c] = np.concatenate([[0.0], np.cumsum(wv * vals)])
        wmass[c] = float(pref_w[c][-1])

    def dist_sums(c: int, pts: np.ndarray) -> np.ndarray:
        vals = sorted_vals[c]
        pos = np.searchsorted(vals, pts, side="right")
        left = pts * pref_w[c][pos] - pref_wx[c][pos]
        right = (pref_wx[c][-1] - pref_wx[c][pos]) - pts * (wmass[c] - pref_w[c][pos])
        return left + right

    total = 0.0
    total_w = float(w.sum())
    for c in uniq:
        c = int(c)
        mask = labels == c
        pts = x[mask]
        wc = w[mask]
        if counts[c] == 1:
            continue  # singleton contributes 0
        own_mass = wmass[c] - wc
        a = np.where(own_mass > 0.0, dist_sums(c, pts) / np.maximum(own_mass, 1e-300), 0.0)
        b = np.full(pts.shape, np.inf)
        for other in uniq:
            other = int(other)
            if other == c:
                continue
            b = np.minimum(b, dist_sums(other, pts) / wmass[other])
        denom = np.maximum(a, b)
        s = np.where(denom > 0.0, (b - a) / np.where(denom > 0.0, denom, 1.0), 0.0)
        total += float(np.sum(wc * s))
    return total / total_w if total_w > 0.0 else 0.0


def sweep_clusters(
    features,
    k_min: int,
    k_max: int,
    seed: int,
    restarts: int = 10,
    weights: np.ndarray | None = None,
) -> SweepResult:
    """Run k-means for each K in [k_min, k_max] and keep the best silhouette.

    Ties break toward smaller K. K values exceeding the number of distinct
    feature values are skipped. The result is flagged low-confidence when the
    winning silhouette falls below ``LOW_CONFIDENCE_SILHOUETTE``.
    """
    if k_min < 2:
        raise ConfigError(f"k_min must be >= 2, got {k_min}")
    if k_max < k_min:
        raise ConfigError(f"k_max {k_max} below k_min {k_min}")
    x = _feature_array(features)
    w = _weight_array(weights, features, x.size)
    n_distinct = np.unique(x).size
    scores: list[tuple[int, float]] = []
    best: tuple[int, ClusterResult] | None = None
    for k in range(k_min, k_max + 1):
        if k > n_distinct:
            break
        result = kmeans(x, k, seed, restarts, weights=w)
        scores.append((k, result.silhouette))
        if best is None or result.silhouette > best[1].silhouette:
            best = (k, result)
    if best is None:
        raise TooFewPoints(
            f"no K in [{k_min}, {k_max}] is feasible for {n_distinct} distinct values"
        )
    return SweepResult(
        best_k=best[0],
        result=best[1],
        scores=scores,
        low_confidence=best[1].silhouette < LOW_CONFIDENCE_SILHOUETTE,
    )


def recurrence_mass(
    abs_im: np.ndarray,
    weights: np.ndarray,
    window_ids: np.ndarray,
    delta_dex: float = 0.05,
) -> np.ndarray:
    """Weight mass from other windows near each entry's frequency magnitude.

    A coherent band shows up at (nearly) the same ``|Im w|`` in every window
    it spans, while modes that fit a single window's noise scatter across
    the spectrum. Multiplying cluster weights by this recurrence mass makes
    band centroids insensitive to that scatter. The neighborhood is
    ``+- delta_dex`` in log10 frequency; an entry's own window is excluded
    so isolated modes cannot vouch for themselves. Returns all ones when
    there is no cross-window information (a single window).
    """
    abs_im = np.asarray(abs_im, dtype=np.float64).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    window_ids = np.asarray(window_ids).ravel()
    n = abs_im.size
    if n == 0 or np.unique(window_ids).size < 2:
        return np.ones(n)
    # collapse exact zeros onto one far-left log bin so they see each other
    floor = np.full(n, -400.0)
    positive = abs_im > 0.0
    floor[positive] = np.log10(abs_im[positive])
    log_v = floor

    order = np.argsort(log_v, kind="stable")
    sorted_log = log_v[order]
    sorted_w = weights[order]
    prefix = np.concatenate([[0.0], np.cumsum(sorted_w)])
    lo = np.searchsorted(sorted_log, log_v - delta_dex, side="left")
    hi = np.searchsorted(sorted_log, log_v + delta_dex, side="right")
    total_near = prefix[hi] - prefix[lo]

    own_near = np.zeros(n)
    by_window: dict = {}
    for i, wid in enumerate(window_ids):
        by_window.setdefault(wid, []).append(i)
    for indices in by_window.values():
        idx = np.asarray(indices)
        lv = log_v[idx]
        wv = weights[idx]
        own_near[idx] = np.sum(
            wv[None, :] * (np.abs(lv[None, :] - lv[:, None]) <= delta_dex), axis=1
        )
    mass = np.maximum(total_near - own_near, 0.0)
    if not mass.any():
        return np.ones(n)
    return mass


def apply_recurrence(
    abs_im: np.ndarray,
    weights: np.ndarray,
    window_ids: np.ndarray,
    deltas: tuple[float, ...] = (0.05, 0.05),
) -> np.ndarray:
    """Sharpen cluster weights by repeated recurrence reweighting.

    Each pass multiplies the weights by :func:`recurrence_mass` at the
    pass's neighborhood width (in dex), so mass concentrates on frequencies
    that other windows corroborate and single-window scatter is suppressed
    multiplicatively.
    """
    w = np.asarray(weights, dtype=np.float64).copy()
    for delta in deltas:
        w = w * recurrence_mass(abs_im, w, window_ids, delta_dex=delta)
    return w


def _feature_array(features) -> np.ndarray:
    if isinstance(features, OmegaFeatures):
        x = features.values
    else:
        x = features
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size and not np.isfinite(x).all():
        raise ConfigError("cluster features must be finite")
    return x


def _weight_array(weights, features, size: int) -> np.ndarray:
    if weights is None and isinstance(features, OmegaFeatures):
        weights = features.weights
    if weights is None:
        return np.ones(size)
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.shape != (size,):
        raise ConfigError(f"weights have shape {w.shape}, expected ({size},)")
    if not np.isfinite(w).all() or (w < 0).any():
        raise ConfigError("weights must be finite and non-negative")
    return w
