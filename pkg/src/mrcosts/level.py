"""One decomposition level: window fits, local band clustering, band
reconstruction, and the low-frequency handoff to the next level.

A level slides a fixed-length window over the data, fits each demeaned
window with the constrained variable-projection model, pools the fitted
eigenvalues, and clusters them into local frequency bands. Band 0 collects
the slowest dynamics, which are poorly resolved at this window length; its
reconstruction becomes the input of the next (longer-window) level.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .clustering import (
    TRANSFORMS,
    apply_recurrence,
    inverse_transform,
    kmeans,
    sweep_clusters,
    transform_omega,
)
from .data import SnapshotMatrix, WindowFit, WindowSpec
from .errors import (
    AllWindowsFailed,
    BandOutOfRange,
    ConfigError,
    NumericalBreakdown,
    RankDeficientWindow,
    TooFewPoints,
)
from .varpro import EigConstraint, VarproSettings, init_eigenvalues, varpro_solve
from .windows import demean_window, make_windows, overlap_reconstruct

#: default sweep range for an automatic local band count
LOCAL_SWEEP_RANGE = (2, 12)

#: demeaned windows with Frobenius norm below this times the raw window norm
#: are treated as background-only (zero variance)
ZERO_VARIANCE_REL = 1e3 * np.finfo(np.float64).eps

#: modes whose |Im w| agree within this relative tolerance form one group
GROUP_REL_TOL = 1e-3

#: modes this close to the Nyquist rate are sampling artifacts (alternating
#: sign eigenvalues), so they get zero weight in band clustering
NYQUIST_GUARD_REL = 0.98


def mode_groups(omega: np.ndarray, nyquist: float) -> list[np.ndarray]:
    """Indices of modes sharing one frequency magnitude within tolerance.

    Conjugate partners always pair up, and near-degenerate eigenvalue
    collisions (which carry large canceling amplitudes) collapse into a
    single group. Legitimate frequency bands sit far outside the tolerance.
    """
    n = omega.shape[0]
    if n == 0:
        return []
    abs_im = np.abs(omega.imag)
    order = np.argsort(abs_im, kind="stable")
    tol_abs = 1e-9 * nyquist
    groups: list[list[int]] = [[int(order[0])]]
    for idx in order[1:]:
        idx = int(idx)
        anchor = groups[-1][0]
        if abs_im[idx] - abs_im[anchor] <= GROUP_REL_TOL * abs_im[idx] + tol_abs:
            groups[-1].append(idx)
        else:
            groups.append([idx])
    return [np.asarray(g, dtype=np.int64) for g in groups]


def mode_cluster_stats(fit: WindowFit, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode clustering feature value and weight for one window fit.

    Modes are grouped by equal ``|Im w|``; every member reports the group's
    mean ``|Im w|`` as its feature value, so a cluster boundary can never
    split a conjugate or degenerate group. Each group is weighted by the
    Frobenius energy of its joint field contribution over the window
    (normalized to the window total and divided evenly among members), which
    keeps overfit modes with big mutually-canceling amplitudes from biasing
    band centroids: their joint contribution, and hence their weight, is
    small.
    """
    r = fit.n_modes
    snapped = np.zeros(r)
    weights = np.zeros(r)
    if r == 0:
        return snapped, weights
    sl = slice(fit.spec.start_index, fit.spec.stop_index)
    trel = times[sl] - times[fit.spec.start_index]
    dt = (trel[-1] - trel[0]) / (len(trel) - 1)
    abs_im = np.abs(fit.omega.imag)
    energies = []
    groups = mode_groups(fit.omega, np.pi / dt)
    for group in groups:
        snapped[group] = float(abs_im[group].mean())
        dyn = np.exp(np.outer(fit.omega[group], trel)) * fit.amplitudes[group, None]
        joint = fit.phi[:, group] @ dyn
        energies.append(float(np.sum(np.abs(joint) ** 2)))
    total = sum(energies)
    for group, energy in zip(groups, energies):
        share = energy / total if total > 0.0 else 1.0 / len(groups)
        weights[group] = share / group.size
    return snapped, weights


@dataclass(frozen=True)
class LevelConfig:
    """Hyperparameters of one decomposition level.

    ``slide`` is in snapshots. ``rho`` bounds ``|Re w|``; ``None`` resolves
    to ``0.1 / window duration``, allowing about 10% amplitude change across
    the window. ``n_local_bands`` is the total local band count including
    band 0; ``None`` resolves to ``rank / 2`` and ``"auto"`` sweeps.
    """

    window_length: int
    rank: int
    slide: int
    rho: float | None = None
    n_local_bands: int | str | None = None
    transform: str = "abs_imag"
    settings: VarproSettings | None = None

    def __post_init__(self):
        if self.rank < 2 or self.rank % 2 != 0:
            raise ConfigError(f"rank must be an even integer >= 2, got {self.rank}")
        if self.rank >= self.window_length:
            raise ConfigError(
                f"rank {self.rank} must be below window length {self.window_length}"
            )
        if not 1 <= self.slide <= self.window_length:
            raise ConfigError(
                f"slide {self.slide} must be in [1, {self.window_length}]"
            )
        if self.rho is not None and (not np.isfinite(self.rho) or self.rho <= 0.0):
            raise ConfigError(f"rho must be positive and finite, got {self.rho}")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform {self.transform!r}")
        bands = self.n_local_bands
        if bands is not None and bands != "auto":
            if not isinstance(bands, int) or bands < 2:
                raise ConfigError(
                    f"n_local_bands must be an integer >= 2 or 'auto', got {bands!r}"
                )

    def resolve(self, dt: float) -> "LevelConfig":
        """Fill in derived defaults that need the time step."""
        rho = self.rho
        if rho is None:
            rho = 0.1 / ((self.window_length - 1) * dt)
        bands = self.n_local_bands
        if bands is None:
            bands = max(2, self.rank // 2)
        settings = self.settings or VarproSettings(rank=self.rank)
        if settings.rank != self.rank:
            raise ConfigError("settings.rank disagrees with level rank")
        return dataclasses.replace(
            self, rho=rho, n_local_bands=bands, settings=settings
        )


@dataclass(frozen=True)
class LevelDecomposition:
    """All window fits of one level plus the local band assignment."""

    level: int
    config: LevelConfig
    times: np.ndarray
    specs: list[WindowSpec]
    fits: list[WindowFit | None]
    failed_reasons: dict[int, str]
    local_labels: list[np.ndarray]
    centroids: np.ndarray  # |Im w| units, ascending; one entry per band
    mode_weights: list[np.ndarray] = field(default_factory=list)
    snapped_abs_im: list[np.ndarray] = field(default_factory=list)
    silhouette: float = float("nan")
    low_confidence: bool = False

    @property
    def n_bands(self) -> int:
        return len(self.centroids)

    @property
    def n_windows(self) -> int:
        return len(self.fits)

    @property
    def n_failed(self) -> int:
        return len(self.failed_reasons)

    @property
    def n_space(self) -> int:
        for f in self.fits:
            if f is not None:
                return f.background.shape[0]
        raise AllWindowsFailed("no surviving window fit")

    def median_residual(self) -> float:
        residuals = [f.residual_rel for f in self.fits if f is not None and f.n_modes > 0]
        return float(np.median(residuals)) if residuals else float("nan")

    def pooled_omega(self) -> tuple[np.ndarray, np.ndarray]:
        """All fitted eigenvalues and their (level, window, mode) triples."""
        return _pool(self.fits, self.level)


def _fit_one_window(
    data: SnapshotMatrix, spec: WindowSpec, config: LevelConfig
) -> WindowFit:
    xw = data.values[:, spec.start_index : spec.stop_index]
    t = data.times[spec.start_index : spec.stop_index]
    demeaned, background = demean_window(xw)
    raw_norm = float(np.linalg.norm(xw))
    if float(np.linalg.norm(demeaned)) <= ZERO_VARIANCE_REL * max(raw_norm, 1.0):
        # nothing beyond the mean: a valid background-only model
        return WindowFit(
            spec=spec,
            omega=np.zeros(0, dtype=np.complex128),
            phi=np.zeros((data.n_space, 0), dtype=np.complex128),
            amplitudes=np.zeros(0, dtype=np.complex128),
            background=background,
            residual_rel=0.0,
            converged=True,
        )
    omega0 = init_eigenvalues(demeaned, t, config.rank, scale=raw_norm)
    result = varpro_solve(
        demeaned,
        t,
        omega0,
        config.settings,
        EigConstraint(rho=config.rho),
    )
    return WindowFit(
        spec=spec,
        omega=result.omega,
        phi=result.phi,
        amplitudes=result.amplitudes,
        background=background,
        residual_rel=result.residual_rel,
        converged=result.converged,
    )


def fit_level(
    data: SnapshotMatrix, config: LevelConfig, seed: int, level: int = 0
) -> LevelDecomposition:
    """Fit every window of one level and cluster the eigenvalues into bands.

    Windows whose fit aborts (rank deficiency, numerical breakdown) are
    recorded in ``failed_reasons`` and excluded from reconstruction weights.
    Raises :class:`AllWindowsFailed` when nothing survives.
    """
    config = config.resolve(data.dt)
    specs = make_windows(data.n_time, config.window_length, config.slide, level=level)
    fits: list[WindowFit | None] = []
    failed: dict[int, str] = {}
    for spec in specs:
        try:
            fits.append(_fit_one_window(data, spec, config))
        except (RankDeficientWindow, NumericalBreakdown) as exc:
            fits.append(None)
            failed[spec.window_index] = f"{type(exc).__name__}: {exc}"
    if all(f is None for f in fits):
        raise AllWindowsFailed(
            f"all {len(specs)} windows of level {level} failed; "
            f"first failure: {failed[min(failed)]}"
        )

    mode_weights: list[np.ndarray] = []
    snapped: list[np.ndarray] = []
    for f in fits:
        if f is None:
            mode_weights.append(np.zeros(0))
            snapped.append(np.zeros(0))
        else:
            snap, weight = mode_cluster_stats(f, data.times)
            mode_weights.append(weight)
            snapped.append(snap)

    omegas, sources = _pool_snapped(snapped, fits, level)
    pooled_weights = np.concatenate([w for w in mode_weights]) if mode_weights else np.zeros(0)
    labels = [np.zeros(f.n_modes if f is not None else 0, dtype=np.int64) for f in fits]
    centroids = np.zeros(1)
    silhouette_score = float("nan")
    low_confidence = False
    if omegas.size:
        abs_im = np.abs(omegas.imag)
        # band 0 is defined by resolvability, not by clustering: modes whose
        # period exceeds the window length cannot be resolved at this level
        # and are withheld for the next one
        slow_floor = 2.0 * np.pi / (config.window_length * data.dt)
        slow = abs_im < slow_floor
        band0_weight = float(np.sum(pooled_weights[slow]))
        band0_centroid = (
            float(np.sum(abs_im[slow] * pooled_weights[slow]) / band0_weight)
            if band0_weight > 0.0
            else 0.0
        )
        fast_idx = np.flatnonzero(~slow)
        nyquist = np.pi / data.dt
        fast_weights = pooled_weights[fast_idx]
        fast_weights = fast_weights * (abs_im[fast_idx] < NYQUIST_GUARD_REL * nyquist)
        fast_weights = apply_recurrence(
            abs_im[fast_idx], fast_weights, sources[fast_idx, 1]
        )
        centroids = np.asarray([band0_centroid])
        if fast_idx.size:
            features = transform_omega(
                omegas[fast_idx], config.transform, sources[fast_idx], weights=fast_weights
            )
            try:
                if config.n_local_bands == "auto":
                    sweep = sweep_clusters(features, *LOCAL_SWEEP_RANGE, seed=seed)
                    result = sweep.result
                    low_confidence = sweep.low_confidence
                else:
                    result = kmeans(
                        features, max(1, int(config.n_local_bands) - 1), seed=seed
                    )
                for (lev, k, j), lab in zip(features.source_index, result.labels):
                    labels[k][j] = int(lab) + 1
                centroids = np.concatenate(
                    [[band0_centroid], inverse_transform(result.centroids, config.transform)]
                )
                silhouette_score = result.silhouette
            except TooFewPoints:
                # every resolvable eigenvalue shares one feature value
                for lev, k, j in features.source_index:
                    labels[k][j] = 1
                centroids = np.asarray(
                    [band0_centroid, float(np.mean(inverse_transform(features.values, config.transform)))]
                )
    return LevelDecomposition(
        level=level,
        config=config,
        times=data.times,
        specs=specs,
        fits=fits,
        failed_reasons=failed,
        local_labels=labels,
        centroids=centroids,
        mode_weights=mode_weights,
        snapped_abs_im=snapped,
        silhouette=silhouette_score,
        low_confidence=low_confidence,
    )


def _pool(fits: list[WindowFit | None], level: int) -> tuple[np.ndarray, np.ndarray]:
    values, sources = [], []
    for k, fit in enumerate(fits):
        if fit is None:
            continue
        for j in range(fit.n_modes):
            values.append(fit.omega[j])
            sources.append((level, k, j))
    return (
        np.asarray(values, dtype=np.complex128),
        np.asarray(sources, dtype=np.int64).reshape(len(sources), 3),
    )


def _pool_snapped(
    snapped: list[np.ndarray], fits: list[WindowFit | None], level: int
) -> tuple[np.ndarray, np.ndarray]:
    """Pool group-snapped frequency magnitudes as clusterable eigenvalues."""
    values, sources = [], []
    for k, fit in enumerate(fits):
        if fit is None:
            continue
        for j in range(fit.n_modes):
            values.append(1j * snapped[k][j])
            sources.append((level, k, j))
    return (
        np.asarray(values, dtype=np.complex128),
        np.asarray(sources, dtype=np.int64).reshape(len(sources), 3),
    )


def reconstruct_local_band(
    level: LevelDecomposition, p: int, n_time: int | None = None
) -> np.ndarray:
    """Contribution of local band ``p``; the window means are added only for
    band 0, where they belong with the unresolved slow component."""
    if not 0 <= p < level.n_bands:
        raise BandOutOfRange(f"band {p} outside [0, {level.n_bands - 1}]")
    n_time = len(level.times) if n_time is None else n_time
    selection = [labels == p for labels in level.local_labels]
    return overlap_reconstruct(
        level.fits,
        level.times,
        n_time,
        selection=selection,
        include_background=(p == 0),
    )


def lowpass_handoff(level: LevelDecomposition, n_time: int | None = None) -> SnapshotMatrix:
    """Band-0 reconstruction on the original grid, the next level's input."""
    values = reconstruct_local_band(level, 0, n_time)
    return SnapshotMatrix(values=values, times=level.times)
