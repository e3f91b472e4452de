"""Sliding-window generation, demeaning, taper weights, and blended reconstruction.

Each decomposition level fits one model per window; a field is rebuilt by
evaluating every window's model on its own span, weighting with a
center-peaked taper, and normalizing by the total covering weight at each
time index. The per-time normalization restores an exact partition of unity
regardless of window geometry.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from .data import WindowFit, WindowSpec
from .errors import UncoveredTime, WindowTooLong

#: floor applied to the taper endpoints so every covered time keeps weight
WEIGHT_FLOOR = 1e-6


def make_windows(n_time: int, window_length: int, slide: int, level: int = 0) -> list[WindowSpec]:
    """Window placements: starts 0, slide, 2*slide, ... plus a tail window.

    Starts advance while ``start + window_length <= n_time``. If the final
    window stops short of the last snapshot, one extra window anchored at
    ``n_time - window_length`` is appended so coverage reaches the end.
    """
    if window_length > n_time:
        raise WindowTooLong(f"window length {window_length} exceeds {n_time} snapshots")
    if slide < 1:
        raise WindowTooLong(f"slide must be >= 1, got {slide}")
    starts = list(range(0, n_time - window_length + 1, slide))
    if starts[-1] + window_length < n_time:
        starts.append(n_time - window_length)
    return [
        WindowSpec(start_index=s, length=window_length, level=level, window_index=k)
        for k, s in enumerate(starts)
    ]


def demean_window(xw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Remove the per-space-point time mean. Returns (demeaned, mean)."""
    xw = np.asarray(xw, dtype=np.float64)
    mean = xw.mean(axis=1)
    return xw - mean[:, None], mean


def window_weights(length: int) -> np.ndarray:
    """Squared-cosine (Hann) taper with a floor of ``WEIGHT_FLOOR`` at the ends.

    Strictly positive everywhere, symmetric, and maximal at the center, so
    overlapping fits are blended toward each window's most reliable region.
    """
    if length < 2:
        raise WindowTooLong(f"taper needs length >= 2, got {length}")
    i = np.arange(length, dtype=np.float64)
    w = np.sin(np.pi * i / (length - 1)) ** 2
    return np.maximum(w, WEIGHT_FLOOR)


Selection = None | Callable[[int, int], bool] | Sequence[np.ndarray]


def _selected_modes(selection: Selection, k: int, n_modes: int) -> np.ndarray:
    if selection is None:
        return np.arange(n_modes)
    if callable(selection):
        return np.array([j for j in range(n_modes) if selection(k, j)], dtype=int)
    mask = np.asarray(selection[k], dtype=bool)
    return np.flatnonzero(mask[:n_modes])


def overlap_reconstruct_with_residue(
    fits: Sequence[WindowFit | None],
    times: np.ndarray,
    n_time: int,
    selection: Selection = None,
    include_background: bool = False,
) -> tuple[np.ndarray, float]:
    """Blend window models into a field; also return the relative imaginary residue.

    Parameters
    ----------
    fits : sequence of WindowFit or None
        One entry per window; ``None`` marks a failed window that is excluded
        from blending.
    times : ndarray
        Full time grid the windows were placed on.
    n_time : int
        Number of time indices to reconstruct (must equal ``len(times)``).
    selection : None, callable, or sequence of bool masks
        Which (window, mode) pairs contribute. ``None`` selects every mode;
        a callable is evaluated as ``selection(window_index, mode_index)``;
        a sequence supplies one boolean mask per window.
    include_background : bool
        Add each window's stored time mean to its partial reconstruction.

    Returns
    -------
    field : ndarray, shape (n_space, n_time)
    imag_residue : float
        Frobenius norm of the discarded imaginary part relative to the
        blended field. Conjugate-pair selections leave this at round-off.
    """
    if n_time != len(times):
        raise UncoveredTime(f"n_time {n_time} does not match time grid of length {len(times)}")
    alive = [f for f in fits if f is not None]
    if not alive:
        raise UncoveredTime("no surviving window to reconstruct from")
    n_space = alive[0].phi.shape[0] if alive[0].phi.size else alive[0].background.shape[0]

    acc = np.zeros((n_space, n_time), dtype=np.complex128)
    wsum = np.zeros(n_time)
    for fit in fits:
        if fit is None:
            continue
        spec = fit.spec
        taper = window_weights(spec.length)
        sl = slice(spec.start_index, spec.stop_index)
        trel = times[sl] - times[spec.start_index]
        js = _selected_modes(selection, spec.window_index, fit.n_modes)
        part = np.zeros((n_space, spec.length), dtype=np.complex128)
        if js.size:
            dyn = np.exp(np.outer(fit.omega[js], trel)) * fit.amplitudes[js, None]
            part += fit.phi[:, js] @ dyn
        if include_background:
            part += fit.background[:, None]
        acc[:, sl] += part * taper[None, :]
        wsum[sl] += taper
    uncovered = np.flatnonzero(wsum == 0.0)
    if uncovered.size:
        idx = int(uncovered[0])
        blame = [
            f.spec.window_index if f is not None else k
            for k, f in enumerate(fits)
            if f is None
        ]
        raise UncoveredTime(
            f"time index {idx} has no surviving window (failed windows: {blame})"
        )
    field = acc / wsum[None, :]
    norm = np.linalg.norm(field)
    residue = float(np.linalg.norm(field.imag) / norm) if norm > 0 else 0.0
    return field.real, residue


def overlap_reconstruct(
    fits: Sequence[WindowFit | None],
    times: np.ndarray,
    n_time: int,
    selection: Selection = None,
    include_background: bool = False,
) -> np.ndarray:
    """Blend window models into a real field. See
    :func:`overlap_reconstruct_with_residue` for the parameters."""
    field, _ = overlap_reconstruct_with_residue(
        fits, times, n_time, selection, include_background
    )
    return field


def total_blend_weight(
    specs: Sequence[WindowSpec], n_time: int, alive: Sequence[bool] | None = None
) -> np.ndarray:
    """Sum of taper weights covering each time index (before normalization)."""
    wsum = np.zeros(n_time)
    for k, spec in enumerate(specs):
        if alive is not None and not alive[k]:
            continue
        wsum[spec.start_index : spec.stop_index] += window_weights(spec.length)
    return wsum
