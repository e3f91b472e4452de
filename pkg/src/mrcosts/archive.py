"""Fitted-model persistence: a directory of structured-text manifest plus
per-window binary blobs.

Layout::

    <dir>/manifest.toml          key/value text, format_version first
    <dir>/times.f64bin           raw little-endian float64 time grid
    <dir>/level<L>/win<K>.f64bin one blob per surviving window fit
    <dir>/global_bands.f64bin    global labels and centroids (if separated)

A window blob packs, as little-endian float64: the mode count, eigenvalues
(re, im pairs), amplitudes (re, im pairs), the background vector, the
spatial modes column by column (re, im pairs), the local band labels, the
relative residual, and the convergence flag. Window placements are not
stored; they are regenerated from the level geometry, which is exact.

Round trips are bit-exact: binary fields verbatim, text floats via
``%.17g``.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from . import textconfig
from .data import WindowFit
from .errors import CorruptArchive, IoError, VersionMismatch
from .level import LevelConfig, LevelDecomposition, mode_cluster_stats
from .model import MrCostsModel
from .varpro import VarproSettings
from .windows import make_windows

ARCHIVE_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.toml"


def _float_list(values) -> str:
    return ",".join("%.17g" % float(v) for v in values)


def _parse_float_list(raw: str) -> np.ndarray:
    if raw == "":
        return np.zeros(0)
    return np.asarray([float(tok) for tok in raw.split(",")], dtype=np.float64)


def _pack_fit(fit: WindowFit, labels: np.ndarray) -> bytes:
    r = fit.n_modes
    parts = [
        np.asarray([float(r)]),
        np.column_stack([fit.omega.real, fit.omega.imag]).ravel() if r else np.zeros(0),
        np.column_stack([fit.amplitudes.real, fit.amplitudes.imag]).ravel() if r else np.zeros(0),
        fit.background.astype(np.float64),
        np.column_stack([fit.phi.T.real.ravel(), fit.phi.T.imag.ravel()]).ravel()
        if r
        else np.zeros(0),
        labels.astype(np.float64),
        np.asarray([fit.residual_rel, 1.0 if fit.converged else 0.0]),
    ]
    return np.concatenate(parts).astype("<f8").tobytes()


def _unpack_fit(payload: bytes, spec, n_space: int, rank: int, where: str):
    floats = np.frombuffer(payload, dtype="<f8")
    if floats.size < 1:
        raise CorruptArchive(f"{where}: empty blob")
    r = int(floats[0])
    if r not in (0, rank):
        raise CorruptArchive(f"{where}: mode count {r} not in (0, {rank})")
    expected = 1 + 2 * r + 2 * r + n_space + 2 * n_space * r + r + 2
    if floats.size != expected:
        raise CorruptArchive(
            f"{where}: blob holds {floats.size} floats, expected {expected}"
        )
    pos = 1
    omega = floats[pos : pos + 2 * r].reshape(r, 2) if r else np.zeros((0, 2))
    pos += 2 * r
    amps = floats[pos : pos + 2 * r].reshape(r, 2) if r else np.zeros((0, 2))
    pos += 2 * r
    background = floats[pos : pos + n_space].copy()
    pos += n_space
    phi_flat = floats[pos : pos + 2 * n_space * r]
    pos += 2 * n_space * r
    labels = floats[pos : pos + r].astype(np.int64)
    pos += r
    residual_rel = float(floats[pos])
    converged = bool(floats[pos + 1] != 0.0)
    phi = (
        (phi_flat[0::2] + 1j * phi_flat[1::2]).reshape(r, n_space).T.copy()
        if r
        else np.zeros((n_space, 0), dtype=np.complex128)
    )
    fit = WindowFit(
        spec=spec,
        omega=(omega[:, 0] + 1j * omega[:, 1]).copy(),
        phi=phi,
        amplitudes=(amps[:, 0] + 1j * amps[:, 1]).copy(),
        background=background,
        residual_rel=residual_rel,
        converged=converged,
    )
    return fit, labels


def save_model(model: MrCostsModel, directory, config_echo: str | None = None) -> None:
    """Write the model archive into ``directory`` (created if missing)."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {directory}: {exc}") from exc

    n_space = model.levels[0].n_space
    sections: textconfig.Sections = {
        "": {
            "format_version": ARCHIVE_FORMAT_VERSION,
            "n_levels": model.n_levels,
            "n_space": n_space,
            "n_time": int(len(model.times)),
            "seed": int(model.seed),
            "separated": model.separated,
        }
    }
    if config_echo is not None:
        sections[""]["config_echo"] = config_echo
    for level in model.levels:
        cfg = level.config
        body: dict = {
            "window_length": cfg.window_length,
            "rank": cfg.rank,
            "slide": cfg.slide,
            "rho": float(cfg.rho),
            "n_local_bands": cfg.n_local_bands
            if isinstance(cfg.n_local_bands, int)
            else str(cfg.n_local_bands),
            "transform": cfg.transform,
            "max_iters": cfg.settings.max_iters,
            "tol_grad": cfg.settings.tol_grad,
            "tol_step": cfg.settings.tol_step,
            "lm_lambda0": cfg.settings.lm_lambda0,
            "n_windows": level.n_windows,
            "n_bands": level.n_bands,
            "centroids": _float_list(level.centroids),
            "silhouette": float(level.silhouette),
            "low_confidence": level.low_confidence,
            "failed_indices": ",".join(str(k) for k in sorted(level.failed_reasons)),
        }
        for k in sorted(level.failed_reasons):
            body[f"failed_reason_{k}"] = level.failed_reasons[k]
        sections[f"level.{level.level}"] = body
    if model.separated:
        sections["global"] = {
            "n_bands": model.n_global_bands,
            "silhouette": float(model.global_silhouette),
            "low_confidence": model.global_low_confidence,
            "sweep": ",".join("%d:%.17g" % (k, s) for k, s in model.sweep_scores),
        }

    _write(directory / MANIFEST_NAME, textconfig.render(sections).encode("utf-8"))
    _write(directory / "times.f64bin", model.times.astype("<f8").tobytes())
    for level in model.levels:
        level_dir = directory / f"level{level.level}"
        level_dir.mkdir(exist_ok=True)
        for k, fit in enumerate(level.fits):
            if fit is None:
                continue
            _write(level_dir / f"win{k}.f64bin", _pack_fit(fit, level.local_labels[k]))
    if model.separated:
        _write(directory / "global_bands.f64bin", _pack_global(model))


def _pack_global(model: MrCostsModel) -> bytes:
    records = []
    for per_level, level in zip(model.global_labels, model.levels):
        for k, labels in enumerate(per_level):
            for j, lab in enumerate(labels):
                records.append((level.level, k, j, int(lab)))
    head = [float(model.n_global_bands)]
    head.extend(float(c) for c in model.global_centroids)
    head.append(float(len(records)))
    flat = np.asarray(head + [v for rec in records for v in rec], dtype=np.float64)
    return flat.astype("<f8").tobytes()


def _unpack_global(payload: bytes, model: MrCostsModel) -> None:
    floats = np.frombuffer(payload, dtype="<f8")
    if floats.size < 2:
        raise CorruptArchive("global_bands.f64bin: truncated header")
    n_bands = int(floats[0])
    if floats.size < 1 + n_bands + 1:
        raise CorruptArchive("global_bands.f64bin: truncated centroid table")
    centroids = floats[1 : 1 + n_bands].copy()
    n_records = int(floats[1 + n_bands])
    expected = 1 + n_bands + 1 + 4 * n_records
    if floats.size != expected:
        raise CorruptArchive(
            f"global_bands.f64bin holds {floats.size} floats, expected {expected}"
        )
    recs = floats[2 + n_bands :].reshape(n_records, 4).astype(np.int64)
    labels = [
        [np.full(f.n_modes if f is not None else 0, -1, dtype=np.int64) for f in level.fits]
        for level in model.levels
    ]
    for lev, k, j, lab in recs:
        try:
            labels[lev][k][j] = lab
        except IndexError:
            raise CorruptArchive(
                f"global_bands.f64bin: record ({lev},{k},{j}) outside model"
            )
    model.global_labels = labels
    model.global_centroids = centroids


def load_model(directory) -> MrCostsModel:
    """Read a model archive previously written by :func:`save_model`."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise CorruptArchive(f"{directory} has no {MANIFEST_NAME}")
    sections = textconfig.read_file(manifest_path)
    top = sections.get("", {})
    version = top.get("format_version")
    if version != ARCHIVE_FORMAT_VERSION:
        raise VersionMismatch(
            f"archive format version {version!r}, this reader supports {ARCHIVE_FORMAT_VERSION}"
        )
    n_levels = int(top["n_levels"])
    n_space = int(top["n_space"])
    n_time = int(top["n_time"])
    seed = int(top.get("seed", 0))
    separated = bool(top.get("separated", False))

    times = np.frombuffer(_read(directory / "times.f64bin"), dtype="<f8")
    if times.size != n_time:
        raise CorruptArchive(f"times.f64bin holds {times.size} values, expected {n_time}")
    times = times.copy()

    levels = []
    for index in range(n_levels):
        name = f"level.{index}"
        if name not in sections:
            raise CorruptArchive(f"manifest is missing [{name}]")
        body = sections[name]
        bands = body["n_local_bands"]
        settings = VarproSettings(
            rank=int(body["rank"]),
            max_iters=int(body["max_iters"]),
            tol_grad=float(body["tol_grad"]),
            tol_step=float(body["tol_step"]),
            lm_lambda0=float(body["lm_lambda0"]),
        )
        config = LevelConfig(
            window_length=int(body["window_length"]),
            rank=int(body["rank"]),
            slide=int(body["slide"]),
            rho=float(body["rho"]),
            n_local_bands=int(bands) if not isinstance(bands, str) else bands,
            transform=str(body["transform"]),
            settings=settings,
        )
        specs = make_windows(n_time, config.window_length, config.slide, level=index)
        if len(specs) != int(body["n_windows"]):
            raise CorruptArchive(
                f"[{name}] declares {body['n_windows']} windows, geometry gives {len(specs)}"
            )
        failed_raw = str(body.get("failed_indices", ""))
        failed_set = {int(tok) for tok in failed_raw.split(",") if tok != ""}
        failed_reasons = {
            k: str(body.get(f"failed_reason_{k}", "unknown")) for k in failed_set
        }
        fits: list[WindowFit | None] = []
        labels: list[np.ndarray] = []
        mode_weights: list[np.ndarray] = []
        snapped: list[np.ndarray] = []
        level_dir = directory / f"level{index}"
        for k, spec in enumerate(specs):
            if k in failed_set:
                fits.append(None)
                labels.append(np.zeros(0, dtype=np.int64))
                mode_weights.append(np.zeros(0))
                snapped.append(np.zeros(0))
                continue
            blob_path = level_dir / f"win{k}.f64bin"
            if not blob_path.exists():
                raise CorruptArchive(f"missing blob {blob_path}")
            fit, fit_labels = _unpack_fit(
                _read(blob_path), spec, n_space, config.rank, str(blob_path)
            )
            fits.append(fit)
            labels.append(fit_labels)
            # clustering stats are a pure function of the stored fit; rebuild
            snap, weight = mode_cluster_stats(fit, times)
            mode_weights.append(weight)
            snapped.append(snap)
        levels.append(
            LevelDecomposition(
                level=index,
                config=config,
                times=times,
                specs=specs,
                fits=fits,
                failed_reasons=failed_reasons,
                local_labels=labels,
                centroids=_parse_float_list(str(body["centroids"])),
                mode_weights=mode_weights,
                snapped_abs_im=snapped,
                silhouette=float(body["silhouette"]),
                low_confidence=bool(body["low_confidence"]),
            )
        )

    model = MrCostsModel(levels=levels, times=times, seed=seed)
    if separated:
        gbody = sections.get("global", {})
        _unpack_global(_read(directory / "global_bands.f64bin"), model)
        model.global_silhouette = float(gbody.get("silhouette", float("nan")))
        model.global_low_confidence = bool(gbody.get("low_confidence", False))
        sweep_raw = str(gbody.get("sweep", ""))
        model.sweep_scores = [
            (int(tok.split(":")[0]), float(tok.split(":")[1]))
            for tok in sweep_raw.split(",")
            if tok
        ]
        declared = int(gbody.get("n_bands", model.n_global_bands))
        if declared != model.n_global_bands:
            raise CorruptArchive(
                f"[global] declares {declared} bands, table holds {model.n_global_bands}"
            )
    return model


def _write(path: Path, payload: bytes) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read(path: Path) -> bytes:
    if not path.exists():
        raise CorruptArchive(f"missing archive file {path}")
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
