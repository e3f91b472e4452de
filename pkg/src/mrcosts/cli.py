"""Command-line front end.

Subcommands: ``synth`` (seeded fixture generation), ``fit`` (multi-level fit
plus global separation, saved as a model archive), ``reconstruct`` (band and
full-field export with error reporting), ``bands`` (band summary table), and
``sweep`` (silhouette versus cluster count for the global separation).

All tables are tab-separated with a header row. Output files are written to
a temporary name and renamed into place, so exit code 0 means the artifacts
are complete.
"""

from __future__ import annotations

import functools
import os
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import textconfig
from .archive import MANIFEST_NAME, load_model, save_model
from .clustering import sweep_clusters
from .data import SnapshotMatrix, load_matrix, save_matrix
from .errors import AllWindowsFailed, ConfigError, MrCostsError
from .level import LevelConfig
from .model import (
    GLOBAL_SWEEP_RANGE,
    GLOBAL_TRANSFORM,
    MrCostsModel,
    aggregate_bands,
    band_table,
    fit,
    global_separation,
    interpolate_omega_global,
    reconstruct_full,
    reconstruct_global_band,
    relative_error,
)
from .synth import components_from_config, generate

DEFAULT_SLIDE_FRACTION = 0.1


@dataclass
class RunConfig:
    levels: list[LevelConfig]
    n_bands: int | str
    k_min: int
    k_max: int
    seed: int
    edge_trim: int | None


def parse_run_config(sections: textconfig.Sections) -> RunConfig:
    top = sections.get("", {})
    seed = int(top.get("seed", 0))
    edge_trim = int(top["edge_trim"]) if "edge_trim" in top else None

    gbody = sections.get("global", {})
    n_bands = gbody.get("n_bands", "auto")
    if isinstance(n_bands, str) and n_bands != "auto":
        raise ConfigError(f"[global] n_bands must be an integer or auto, got {n_bands!r}")
    transform = gbody.get("transform", GLOBAL_TRANSFORM)
    if transform != GLOBAL_TRANSFORM:
        raise ConfigError(
            f"the global separation requires the {GLOBAL_TRANSFORM} transform, got {transform!r}"
        )
    k_min = int(gbody.get("k_min", GLOBAL_SWEEP_RANGE[0]))
    k_max = int(gbody.get("k_max", GLOBAL_SWEEP_RANGE[1]))

    names = sorted(
        (name for name in sections if name.startswith("level.")),
        key=lambda s: int(s.split(".", 1)[1]),
    )
    if not names:
        raise ConfigError("config has no [level.N] sections")
    levels = []
    for name in names:
        body = sections[name]
        if "window_length" not in body or "rank" not in body:
            raise ConfigError(f"[{name}] needs window_length and rank")
        window_length = int(body["window_length"])
        if "slide" in body:
            slide = int(body["slide"])
        else:
            fraction = float(body.get("slide_fraction", DEFAULT_SLIDE_FRACTION))
            if not 0.0 < fraction <= 1.0:
                raise ConfigError(f"[{name}] slide_fraction must be in (0, 1]")
            slide = max(1, round(fraction * window_length))
        rho = body.get("rho", "auto")
        bands = body.get("n_local_bands")
        if isinstance(bands, str) and bands != "auto":
            raise ConfigError(f"[{name}] n_local_bands must be an integer or auto")
        levels.append(
            LevelConfig(
                window_length=window_length,
                rank=int(body["rank"]),
                slide=slide,
                rho=None if rho == "auto" else float(rho),
                n_local_bands=bands,
                transform=str(body.get("transform", "abs_imag")),
            )
        )
    return RunConfig(
        levels=levels,
        n_bands=n_bands,
        k_min=k_min,
        k_max=k_max,
        seed=seed,
        edge_trim=edge_trim,
    )


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except AllWindowsFailed as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)
        except MrCostsError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _write_matrix_atomic(matrix: SnapshotMatrix, path: Path, fmt: str = "f64bin") -> None:
    tmp = path.with_name(path.name + ".tmp")
    save_matrix(matrix, tmp, fmt)
    os.replace(tmp, path)


def _write_text_atomic(text: str, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _save_model_atomic(model: MrCostsModel, out: Path, config_echo: str | None) -> None:
    tmp = out.with_name(out.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    save_model(model, tmp, config_echo=config_echo)
    if out.exists():
        if not (out / MANIFEST_NAME).exists() and any(out.iterdir()):
            raise ConfigError(
                f"{out} exists, is not empty, and is not a model archive; refusing to replace it"
            )
        shutil.rmtree(out)
    os.replace(tmp, out)


def _echo_table(header: list[str], rows: list[list]) -> None:
    click.echo("\t".join(header))
    for row in rows:
        click.echo("\t".join(_cell(v) for v in row))


def _cell(value) -> str:
    if isinstance(value, float):
        return "%.10g" % value
    return str(value)


@click.group()
def main() -> None:
    """Multi-resolution coherent spatiotemporal scale separation."""


@main.command("synth")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@_guard
def cmd_synth(config_path, out_dir, seed):
    """Generate a synthetic fixture: data plus per-component truth fields."""
    sections = textconfig.read_file(config_path)
    components, params = components_from_config(sections)
    if seed is not None:
        params["seed"] = seed
    data, truths = generate(components, **params)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_matrix_atomic(data, out / "data.f64bin")
    total = np.zeros_like(data.values)
    for truth in truths:
        total += truth
    _write_matrix_atomic(SnapshotMatrix(total, data.times), out / "truth.f64bin")
    for i, truth in enumerate(truths):
        _write_matrix_atomic(SnapshotMatrix(truth, data.times), out / f"truth_comp{i}.f64bin")
    click.echo(f"wrote data.f64bin and {len(truths) + 1} truth files to {out}")


def _load_input(input_path, fmt) -> SnapshotMatrix:
    return load_matrix(input_path, fmt)


@main.command("fit")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", default="f64bin", type=click.Choice(["csv", "f64bin"]))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--k-min", type=int, default=None)
@click.option("--k-max", type=int, default=None)
@_guard
def cmd_fit(input_path, fmt, config_path, out_dir, seed, k_min, k_max):
    """Fit all levels, run the global separation, and save the archive."""
    raw_config = Path(config_path).read_text(encoding="utf-8")
    run = parse_run_config(textconfig.parse(raw_config))
    if seed is not None:
        run.seed = seed
    if k_min is not None:
        run.k_min = k_min
    if k_max is not None:
        run.k_max = k_max
    data = _load_input(input_path, fmt)
    model = fit(data, run.levels, seed=run.seed)
    model = global_separation(
        model, run.n_bands, seed=run.seed, k_range=(run.k_min, run.k_max)
    )
    _save_model_atomic(model, Path(out_dir), config_echo=raw_config)

    _echo_table(
        ["level", "window_length", "n_windows", "n_failed", "median_residual", "n_bands", "silhouette"],
        [
            [
                lv.level,
                lv.config.window_length,
                lv.n_windows,
                lv.n_failed,
                lv.median_residual(),
                lv.n_bands,
                lv.silhouette,
            ]
            for lv in model.levels
        ],
    )
    click.echo("")
    _echo_table(
        ["band", "centroid_freq", "centroid_period", "n_modes"],
        [
            [row["band"], row["centroid_freq"], row["centroid_period"], row["n_modes"]]
            for row in band_table(model)
        ],
    )


def _parse_bands(raw: str, n_bands: int) -> list[int] | None:
    if raw == "all":
        return None
    try:
        indices = [int(tok) for tok in raw.split(",") if tok.strip() != ""]
    except ValueError:
        raise ConfigError(f"--bands must be 'all' or comma-separated integers, got {raw!r}")
    if not indices:
        raise ConfigError("--bands selected nothing")
    return indices


def _parse_rows(raw: str | None, n_space: int) -> slice:
    if raw is None:
        return slice(0, n_space)
    try:
        lo, hi = raw.split(":")
        rows = slice(int(lo), int(hi))
    except ValueError:
        raise ConfigError(f"--rows must look like START:STOP, got {raw!r}")
    if not 0 <= rows.start < rows.stop <= n_space:
        raise ConfigError(f"--rows {raw!r} outside [0, {n_space})")
    return rows


@main.command("reconstruct")
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True))
@click.option("--bands", default="all", help="'all' or comma-separated band indices.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--truth", "truth_path", type=click.Path(exists=True), default=None)
@click.option("--truth-format", default="f64bin", type=click.Choice(["csv", "f64bin"]))
@click.option("--edge-trim", type=int, default=None, help="Interior margin in snapshots; defaults to half the largest window.")
@click.option("--rows", default=None, help="Row range START:STOP for the spatial means export.")
@click.option("--means-csv", "means_csv", type=click.Path(), default=None)
@_guard
def cmd_reconstruct(model_dir, bands, out_dir, truth_path, truth_format, edge_trim, rows, means_csv):
    """Export band reconstructions, the full field, and error reports."""
    model = load_model(model_dir)
    if not model.separated:
        raise ConfigError(f"{model_dir} holds a model without a global separation")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    indices = _parse_bands(bands, model.n_global_bands)

    full = reconstruct_full(model)
    _write_matrix_atomic(SnapshotMatrix(full, model.times), out / "full.f64bin")
    written = ["full.f64bin"]
    band_fields: dict[int, np.ndarray] = {}
    if indices is None:
        for p in range(model.n_global_bands):
            band_fields[p] = reconstruct_global_band(model, p)
            name = f"band{p}.f64bin"
            _write_matrix_atomic(SnapshotMatrix(band_fields[p], model.times), out / name)
            written.append(name)
    else:
        agg = aggregate_bands(model, indices)
        name = "aggregate_" + "_".join(str(p) for p in sorted(set(indices))) + ".f64bin"
        _write_matrix_atomic(SnapshotMatrix(agg, model.times), out / name)
        written.append(name)
        for p in sorted(set(indices)):
            band_fields[p] = reconstruct_global_band(model, p)

    if means_csv is not None:
        row_slice = _parse_rows(rows, full.shape[0])
        lines = ["time,band,value"]
        for p in sorted(band_fields):
            series = band_fields[p][row_slice, :].mean(axis=0)
            for t, v in zip(model.times, series):
                lines.append("%.17g,%d,%.17g" % (t, p, v))
        _write_text_atomic("\n".join(lines) + "\n", Path(means_csv))
        written.append(str(means_csv))

    if truth_path is not None:
        truth = load_matrix(truth_path, truth_format)
        trim = edge_trim
        if trim is None:
            trim = max(lv.config.window_length for lv in model.levels) // 2
        _echo_table(
            ["error_full_pct", "error_interior_pct", "edge_trim"],
            [[relative_error(full, truth.values, 0), relative_error(full, truth.values, trim), trim]],
        )
    click.echo("wrote " + ", ".join(written) + f" to {out}")


@main.command("bands")
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True))
@_guard
def cmd_bands(model_dir):
    """Print the global band table."""
    model = load_model(model_dir)
    if not model.separated:
        raise ConfigError(f"{model_dir} holds a model without a global separation")
    _echo_table(
        ["band", "centroid_freq", "centroid_period", "n_modes", "silhouette"],
        [
            [row["band"], row["centroid_freq"], row["centroid_period"], row["n_modes"], row["silhouette"]]
            for row in band_table(model)
        ],
    )


@main.command("sweep")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", default="f64bin", type=click.Choice(["csv", "f64bin"]))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--k-min", type=int, default=None)
@click.option("--k-max", type=int, default=None)
@_guard
def cmd_sweep(input_path, fmt, config_path, seed, k_min, k_max):
    """Silhouette-versus-K table for the global separation."""
    run = parse_run_config(textconfig.read_file(config_path))
    if seed is not None:
        run.seed = seed
    if k_min is not None:
        run.k_min = k_min
    if k_max is not None:
        run.k_max = k_max
    if run.k_min < 2:
        raise ConfigError(f"k_min must be >= 2, got {run.k_min}")
    data = _load_input(input_path, fmt)
    model = fit(data, run.levels, seed=run.seed)
    features = interpolate_omega_global(model)
    sweep = sweep_clusters(features, run.k_min, run.k_max, seed=run.seed)
    rows = [
        [k, score, "*" if k == sweep.best_k else ""]
        for k, score in sweep.scores
    ]
    _echo_table(["k", "silhouette", "selected"], rows)
    if sweep.low_confidence:
        click.echo("# low confidence: best silhouette below 0.25", err=True)


if __name__ == "__main__":
    main()
