"""Seeded synthetic multi-scale fields with known ground truth, plus
independent frequency oracles used to cross-check the fit pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SnapshotMatrix
from .errors import ConfigError, RankDeficientWindow

_SPEED_RTOL = 1e-9


@dataclass(frozen=True)
class StandingPattern:
    """Fixed spatial sinusoid times a temporal oscillation."""

    wavenumber: float
    phase: float = 0.0


@dataclass(frozen=True)
class TravelingPattern:
    """Phase-ramped sinusoid moving across the flattened space axis.

    ``speed`` defaults to ``frequency / wavenumber`` so the temporal
    frequency stays consistent with the component; supplying an inconsistent
    speed is a configuration error.
    """

    wavenumber: float
    speed: float | None = None


@dataclass(frozen=True)
class ComponentSpec:
    """One coherent component: oscillation frequency (cycles/time), optional
    exponential growth (1/time), amplitude, spatial pattern, and an optional
    active time range for non-stationary fixtures."""

    frequency: float
    amplitude: float
    pattern: StandingPattern | TravelingPattern
    growth: float = 0.0
    onset: float | None = None
    offset: float | None = None

    def __post_init__(self):
        if self.frequency <= 0.0:
            raise ConfigError(f"component frequency must be > 0, got {self.frequency}")
        if self.onset is not None and self.offset is not None and self.onset >= self.offset:
            raise ConfigError(f"onset {self.onset} must precede offset {self.offset}")
        if isinstance(self.pattern, TravelingPattern) and self.pattern.speed is not None:
            implied = self.pattern.wavenumber * self.pattern.speed
            if abs(implied - self.frequency) > _SPEED_RTOL * self.frequency:
                raise ConfigError(
                    f"traveling speed {self.pattern.speed} implies frequency {implied}, "
                    f"component declares {self.frequency}"
                )


def component_field(spec: ComponentSpec, n_space: int, times: np.ndarray) -> np.ndarray:
    """Evaluate one component's noiseless field, shape (n_space, n_time)."""
    s = np.arange(n_space, dtype=np.float64) / n_space
    envelope = spec.amplitude * np.exp(spec.growth * times)
    if spec.onset is not None:
        envelope = np.where(times >= spec.onset, envelope, 0.0)
    if spec.offset is not None:
        envelope = np.where(times < spec.offset, envelope, 0.0)
    if isinstance(spec.pattern, StandingPattern):
        spatial = np.cos(2.0 * np.pi * spec.pattern.wavenumber * s + spec.pattern.phase)
        temporal = np.cos(2.0 * np.pi * spec.frequency * times)
        field = spatial[:, None] * (envelope * temporal)[None, :]
    else:
        phase = 2.0 * np.pi * (
            spec.pattern.wavenumber * s[:, None] - spec.frequency * times[None, :]
        )
        field = np.cos(phase) * envelope[None, :]
    return field


def generate(
    components: list[ComponentSpec],
    n_space: int,
    n_time: int,
    dt: float,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> tuple[SnapshotMatrix, list[np.ndarray]]:
    """Sum of component fields plus seeded white noise.

    Returns the noisy snapshot matrix and the list of per-component truth
    fields (noise excluded). Deterministic for a fixed seed: the noise is an
    independent Gaussian draw per (space, time) sample.
    """
    if n_space < 1 or n_time < 2:
        raise ConfigError(f"need n_space >= 1 and n_time >= 2, got {n_space}, {n_time}")
    if dt <= 0.0 or not np.isfinite(dt):
        raise ConfigError(f"dt must be positive and finite, got {dt}")
    if noise_sigma < 0.0:
        raise ConfigError(f"noise_sigma must be >= 0, got {noise_sigma}")
    times = np.arange(n_time, dtype=np.float64) * dt
    truths = [component_field(spec, n_space, times) for spec in components]
    values = np.zeros((n_space, n_time))
    for truth in truths:
        values += truth
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        values = values + rng.normal(0.0, noise_sigma, size=values.shape)
    return SnapshotMatrix(values=values, times=times), truths


def oracle_exact_dmd(xw: np.ndarray, t: np.ndarray, r: int) -> np.ndarray:
    """Eigenvalues of the projected one-step least-squares propagator.

    Independent check for the variable-projection fit: builds the propagator
    from the shifted snapshot pair of the window (never from the optimizer's
    internals) and log-maps its eigenvalues by the time step. Exact on
    noiseless data of exponential form. Time-shifted copies are stacked when
    the spatial rank alone cannot support ``r`` directions (standing
    oscillations carry a single spatial direction).
    """
    xw = np.asarray(xw, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    n, m = xw.shape
    rank = 0
    max_delays = max(1, m - r)
    for delays in range(min(2, max_delays), max_delays + 1):
        if delays == 1:
            stacked = xw
        else:
            stacked = np.vstack(
                [xw[:, q : m - delays + 1 + q] for q in range(delays)]
            )
        x1, x2 = stacked[:, :-1], stacked[:, 1:]
        u, s, vh = np.linalg.svd(x1, full_matrices=False)
        floor = max(x1.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
        rank = int(np.sum(s > floor))
        if rank >= r and x1.shape[1] >= r:
            break
    else:
        raise RankDeficientWindow(f"shifted window has numerical rank {rank} < {r}")
    u_r = u[:, :r]
    v_r = vh[:r].conj().T
    atilde = u_r.conj().T @ x2 @ (v_r / s[:r])
    lam = np.linalg.eigvals(atilde)
    dt = (t[-1] - t[0]) / (len(t) - 1)
    mag = np.maximum(np.abs(lam), np.finfo(np.float64).tiny)
    omega = (np.log(mag) + 1j * np.angle(lam)) / dt
    return omega[np.lexsort((omega.real, omega.imag))]


def oracle_fft_peaks(series: np.ndarray, dt: float, n_peaks: int) -> np.ndarray:
    """Frequencies of the strongest periodogram peaks, strongest first.

    Peak picking on noisy spectra is unstable; use this only for presence
    checks of well-separated tones.
    """
    series = np.asarray(series, dtype=np.float64).ravel()
    if series.size < 8:
        raise ConfigError(f"need at least 8 samples, got {series.size}")
    power = np.abs(np.fft.rfft(series)) ** 2
    freqs = np.fft.rfftfreq(series.size, d=dt)
    interior = (power[1:-1] > power[:-2]) & (power[1:-1] >= power[2:])
    peak_idx = np.flatnonzero(interior) + 1
    if peak_idx.size == 0:
        peak_idx = np.array([int(np.argmax(power))])
    order = np.argsort(power[peak_idx])[::-1]
    return freqs[peak_idx[order][:n_peaks]]


def components_from_config(sections: dict) -> tuple[list[ComponentSpec], dict]:
    """Build component specs plus generator parameters from parsed config text.

    Expects top-level ``n_space``, ``n_time``, ``dt``, optional
    ``noise_sigma`` and ``seed``, and one ``[component.N]`` section per
    component with ``pattern = standing`` or ``traveling``.
    """
    top = sections.get("", {})
    params = {}
    for key in ("n_space", "n_time"):
        if key not in top:
            raise ConfigError(f"missing required key {key!r}")
        params[key] = int(top[key])
    params["dt"] = float(top.get("dt", 1.0))
    params["noise_sigma"] = float(top.get("noise_sigma", 0.0))
    params["seed"] = int(top.get("seed", 0))

    names = sorted(
        (name for name in sections if name.startswith("component.")),
        key=lambda s: int(s.split(".", 1)[1]),
    )
    if not names:
        raise ConfigError("no [component.N] sections found")
    components = []
    for name in names:
        body = sections[name]
        kind = body.get("pattern", "standing")
        if kind == "standing":
            pattern = StandingPattern(
                wavenumber=float(body.get("wavenumber", 1.0)),
                phase=float(body.get("phase", 0.0)),
            )
        elif kind == "traveling":
            speed = body.get("speed")
            pattern = TravelingPattern(
                wavenumber=float(body.get("wavenumber", 1.0)),
                speed=None if speed is None else float(speed),
            )
        else:
            raise ConfigError(f"[{name}] unknown pattern {kind!r}")
        if "frequency" not in body or "amplitude" not in body:
            raise ConfigError(f"[{name}] needs frequency and amplitude")
        components.append(
            ComponentSpec(
                frequency=float(body["frequency"]),
                amplitude=float(body["amplitude"]),
                pattern=pattern,
                growth=float(body.get("growth", 0.0)),
                onset=float(body["onset"]) if "onset" in body else None,
                offset=float(body["offset"]) if "offset" in body else None,
            )
        )
    return components, params
