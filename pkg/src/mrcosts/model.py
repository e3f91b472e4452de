"""Multi-level decomposition, global scale separation, and reconstruction.

Levels are fit in order of increasing window length, each consuming the
previous level's band-0 (slow) reconstruction. Frequency content leaks
between levels, so the fast bands of every level are pooled, aligned in time
onto the first level's window centers by nearest neighbor, and re-clustered
in ``log10 |Im w|`` space into global bands. Global band 0 is the deepest
level's local band 0; it is the only band that carries window means, since
every other level's background is already embedded in the next level's
input through the handoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import (
    NEAR_ZERO_REL,
    OmegaFeatures,
    apply_recurrence,
    inverse_transform,
    kmeans,
    sweep_clusters,
    transform_omega,
)
from .data import SnapshotMatrix
from .errors import (
    BandOutOfRange,
    ConfigError,
    NonIncreasingWindows,
    ShapeMismatch,
)
from .level import (
    NYQUIST_GUARD_REL as _NYQUIST_GUARD_REL,
    LevelConfig,
    LevelDecomposition,
    fit_level,
    lowpass_handoff,
    reconstruct_local_band,
)
from .windows import overlap_reconstruct

GLOBAL_TRANSFORM = "log10_abs_imag"

#: default sweep range for an automatic global band count
GLOBAL_SWEEP_RANGE = (2, 16)


@dataclass
class MrCostsModel:
    """Ordered level decompositions plus the global band assignment.

    ``global_labels`` mirrors the per-level label layout: one integer per
    (window, mode) pair, where ``-1`` marks modes outside the global pool
    (failed windows and the non-deepest levels' band 0), ``0`` the slow band,
    and ``1..P`` the oscillatory bands in increasing frequency order.
    """

    levels: list[LevelDecomposition]
    times: np.ndarray
    seed: int
    global_labels: list[list[np.ndarray]] | None = None
    global_centroids: np.ndarray | None = None
    global_silhouette: float = float("nan")
    global_low_confidence: bool = False
    sweep_scores: list[tuple[int, float]] = field(default_factory=list)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def n_global_bands(self) -> int:
        if self.global_centroids is None:
            raise ConfigError("global separation has not been run")
        return len(self.global_centroids)

    @property
    def separated(self) -> bool:
        return self.global_labels is not None

    def band_mode_count(self, p: int) -> int:
        count = 0
        for per_level in self.global_labels:
            for labels in per_level:
                count += int(np.sum(labels == p))
        return count


def fit(data: SnapshotMatrix, configs: list[LevelConfig], seed: int = 0) -> MrCostsModel:
    """Fit all decomposition levels, each on the previous level's handoff.

    Window lengths must strictly increase across ``configs``; larger windows
    resolve the slower dynamics that smaller windows left in their band 0.
    """
    if not configs:
        raise ConfigError("need at least one level config")
    lengths = [c.window_length for c in configs]
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise NonIncreasingWindows(
            f"window lengths must strictly increase, got {lengths}"
        )
    levels = []
    current = data
    for index, config in enumerate(configs):
        level = fit_level(current, config, seed=seed + index, level=index)
        levels.append(level)
        if index + 1 < len(configs):
            current = lowpass_handoff(level)
    return MrCostsModel(levels=levels, times=data.times, seed=seed)


def _window_centers(level: LevelDecomposition, alive_only: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Center times of the level's windows and their window indices."""
    centers, indices = [], []
    for k, spec in enumerate(level.specs):
        if alive_only and level.fits[k] is None:
            continue
        sl = level.times[spec.start_index : spec.stop_index]
        centers.append(float(sl.mean()))
        indices.append(k)
    return np.asarray(centers), np.asarray(indices, dtype=np.int64)


def nearest_center_indices(centers: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """For each grid time, the index of the nearest center; ties go earlier."""
    centers = np.asarray(centers, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    if len(centers) == 1:
        return np.zeros(len(grid), dtype=np.int64)
    pos = np.clip(np.searchsorted(centers, grid), 1, len(centers) - 1)
    choose_right = np.abs(centers[pos] - grid) < np.abs(grid - centers[pos - 1])
    return np.where(choose_right, pos, pos - 1).astype(np.int64)


def interpolate_omega_global(model: MrCostsModel) -> OmegaFeatures:
    """Fast-band eigenvalues of all levels resampled onto the base grid.

    The base grid is the first level's window-center times. For every level
    and every grid time, the nearest window's fast modes (local band > 0)
    contribute one entry each, so slowly-slid levels are weighted onto the
    same temporal footing as the base level. Features are the mandatory
    ``log10 |Im w|`` transform; sources identify the original
    (level, window, mode) triples for re-indexing after clustering.
    """
    base_centers, _ = _window_centers(model.levels[0])
    values, sources, weights = [], [], []
    for level in model.levels:
        centers, window_idx = _window_centers(level)
        if centers.size == 0:
            continue
        pick = nearest_center_indices(centers, base_centers)
        # the first and last windows are nearest to every grid time beyond
        # the level's center span; cap their multiplicity at the level's
        # typical count so the least reliable (edge) fits are not amplified
        counts = np.bincount(pick, minlength=len(centers))
        typical = float(np.median(counts[counts > 0])) if counts.any() else 1.0
        scale = np.ones(len(centers))
        over = counts > typical
        scale[over] = typical / counts[over]
        for grid_pos in pick:
            k = int(window_idx[grid_pos])
            fit_k = level.fits[k]
            labels = level.local_labels[k]
            snap = level.snapped_abs_im[k]
            mode_w = level.mode_weights[k]
            for j in range(fit_k.n_modes):
                if labels[j] > 0:
                    values.append(1j * snap[j])
                    sources.append((level.level, k, j))
                    weights.append(mode_w[j] * scale[grid_pos])
    omegas = np.asarray(values, dtype=np.complex128)
    source_index = np.asarray(sources, dtype=np.int64).reshape(len(sources), 3)
    weights_arr = np.asarray(weights, dtype=np.float64)
    if weights_arr.size:
        dt = (model.times[-1] - model.times[0]) / (len(model.times) - 1)
        nyquist = np.pi / dt
        weights_arr = weights_arr * (np.abs(omegas.imag) < _NYQUIST_GUARD_REL * nyquist)
    return transform_omega(
        omegas,
        GLOBAL_TRANSFORM,
        source_index,
        weights=weights_arr,
    )


def _gated_features(features: OmegaFeatures) -> OmegaFeatures:
    """Recurrence-gate the pooled feature weights before global clustering."""
    if features.weights is None or features.weights.size == 0:
        return features
    window_ids = features.source_index[:, 0] * 1_000_000 + features.source_index[:, 1]
    gated = apply_recurrence(10.0**features.values, features.weights, window_ids)
    return OmegaFeatures(
        values=features.values,
        transform=features.transform,
        source_index=features.source_index,
        near_zero_index=features.near_zero_index,
        weights=gated,
    )


def global_separation(
    model: MrCostsModel,
    n_bands: int | str = "auto",
    seed: int | None = None,
    k_range: tuple[int, int] = GLOBAL_SWEEP_RANGE,
) -> MrCostsModel:
    """Cluster the time-aligned fast eigenvalues into global frequency bands.

    ``n_bands`` counts the oscillatory bands (clusters); band 0, the deepest
    level's local band 0, is added on top. ``"auto"`` sweeps ``k_range`` and
    keeps the best silhouette. The model is updated in place and returned.
    """
    if seed is None:
        seed = model.seed
    if n_bands != "auto":
        if not isinstance(n_bands, int) or n_bands < 2:
            raise ConfigError(
                f"n_bands must be an integer >= 2 or 'auto', got {n_bands!r} "
                "(the silhouette score needs at least two clusters)"
            )
    features = _gated_features(interpolate_omega_global(model))

    label_by_source: dict[tuple[int, int, int], int] = {}
    centroids_fast = np.zeros(0)
    silhouette_score = float("nan")
    low_confidence = False
    scores: list[tuple[int, float]] = []
    if features.values.size:
        if n_bands == "auto":
            sweep = sweep_clusters(features, k_range[0], k_range[1], seed=seed)
            result = sweep.result
            scores = sweep.scores
            low_confidence = sweep.low_confidence
        else:
            result = kmeans(features, n_bands, seed=seed)
        for (lev, k, j), lab in zip(features.source_index, result.labels):
            label_by_source[(int(lev), int(k), int(j))] = int(lab) + 1
        centroids_fast = inverse_transform(result.centroids, GLOBAL_TRANSFORM)
        silhouette_score = result.silhouette
    for lev, k, j in features.near_zero_index:
        label_by_source[(int(lev), int(k), int(j))] = 0

    deepest = model.levels[-1]
    global_labels: list[list[np.ndarray]] = []
    log_centroids = np.log10(np.maximum(centroids_fast, np.finfo(float).tiny))
    median_abs_im = _median_abs_im(model)
    for level in model.levels:
        per_level: list[np.ndarray] = []
        for k, fit_k in enumerate(level.fits):
            if fit_k is None:
                per_level.append(np.zeros(0, dtype=np.int64))
                continue
            labels = np.full(fit_k.n_modes, -1, dtype=np.int64)
            local = level.local_labels[k]
            for j in range(fit_k.n_modes):
                if local[j] == 0:
                    labels[j] = 0 if level is deepest else -1
                    continue
                key = (level.level, k, j)
                if key in label_by_source:
                    labels[j] = label_by_source[key]
                else:
                    # window never nearest to a grid time: assign directly
                    labels[j] = _nearest_band(
                        fit_k.omega[j], log_centroids, median_abs_im
                    )
            per_level.append(labels)
        global_labels.append(per_level)

    model.global_labels = global_labels
    model.global_centroids = np.concatenate([[float(deepest.centroids[0])], centroids_fast])
    model.global_silhouette = silhouette_score
    model.global_low_confidence = low_confidence
    model.sweep_scores = scores
    return model


def _median_abs_im(model: MrCostsModel) -> float:
    pools = [level.pooled_omega()[0] for level in model.levels]
    pooled = np.concatenate([p for p in pools if p.size]) if pools else np.zeros(0)
    return float(np.median(np.abs(pooled.imag))) if pooled.size else 0.0


def _nearest_band(omega: complex, log_centroids: np.ndarray, median_abs_im: float) -> int:
    abs_im = abs(omega.imag)
    if abs_im <= 0.0 or abs_im < NEAR_ZERO_REL * median_abs_im or log_centroids.size == 0:
        return 0
    return int(np.argmin(np.abs(log_centroids - np.log10(abs_im)))) + 1


def _require_separated(model: MrCostsModel) -> None:
    if not model.separated:
        raise ConfigError("run global_separation before reconstructing global bands")


def reconstruct_global_band(
    model: MrCostsModel, p: int, n_time: int | None = None
) -> np.ndarray:
    """Contribution of global band ``p`` to the field.

    Band 0 returns the deepest level's local band 0 including its window
    means; oscillatory bands sum each level's blended reconstruction of the
    modes assigned to the band, with no background.
    """
    _require_separated(model)
    if not 0 <= p < model.n_global_bands:
        raise BandOutOfRange(f"band {p} outside [0, {model.n_global_bands - 1}]")
    n_time = len(model.times) if n_time is None else n_time
    if p == 0:
        return reconstruct_local_band(model.levels[-1], 0, n_time)
    total = np.zeros((model.levels[0].n_space, n_time))
    for level, per_level in zip(model.levels, model.global_labels):
        if not any((labels == p).any() for labels in per_level):
            continue
        selection = [labels == p for labels in per_level]
        total += overlap_reconstruct(
            level.fits, level.times, n_time, selection=selection, include_background=False
        )
    return total


def reconstruct_full(model: MrCostsModel, n_time: int | None = None) -> np.ndarray:
    """Sum of every global band with the slow-band background counted once."""
    _require_separated(model)
    n_time = len(model.times) if n_time is None else n_time
    total = reconstruct_global_band(model, 0, n_time)
    for p in range(1, model.n_global_bands):
        total = total + reconstruct_global_band(model, p, n_time)
    return total


def aggregate_bands(
    model: MrCostsModel, band_indices, n_time: int | None = None
) -> np.ndarray:
    """Sum of the selected global bands; the background enters only via band 0."""
    _require_separated(model)
    indices = sorted(set(int(p) for p in np.atleast_1d(band_indices)))
    if not indices:
        raise BandOutOfRange("need at least one band index")
    for p in indices:
        if not 0 <= p < model.n_global_bands:
            raise BandOutOfRange(f"band {p} outside [0, {model.n_global_bands - 1}]")
    n_time = len(model.times) if n_time is None else n_time
    total = reconstruct_global_band(model, indices[0], n_time)
    for p in indices[1:]:
        total = total + reconstruct_global_band(model, p, n_time)
    return total


def relative_error(recon: np.ndarray, truth: np.ndarray, edge_trim: int = 0) -> float:
    """Frobenius-relative misfit in percent over the interior time range."""
    recon = np.asarray(recon, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if recon.shape != truth.shape:
        raise ShapeMismatch(f"shapes differ: {recon.shape} vs {truth.shape}")
    if edge_trim < 0:
        raise ShapeMismatch(f"edge_trim must be >= 0, got {edge_trim}")
    n_time = recon.shape[-1]
    if 2 * edge_trim >= n_time:
        raise ShapeMismatch(
            f"edge_trim {edge_trim} leaves no interior of {n_time} snapshots"
        )
    sl = slice(edge_trim, n_time - edge_trim)
    diff = np.linalg.norm(recon[..., sl] - truth[..., sl])
    denom = np.linalg.norm(truth[..., sl])
    if denom == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return 100.0 * float(diff / denom)


def band_table(model: MrCostsModel) -> list[dict]:
    """Per-band summary rows: centroid frequency and period, mode count."""
    _require_separated(model)
    rows = []
    for p in range(model.n_global_bands):
        centroid = float(model.global_centroids[p])
        freq = centroid / (2.0 * np.pi)
        period = (2.0 * np.pi / centroid) if centroid > 0.0 else float("inf")
        rows.append(
            {
                "band": p,
                "centroid_freq": freq,
                "centroid_period": period,
                "n_modes": model.band_mode_count(p),
                "silhouette": model.global_silhouette,
            }
        )
    return rows
