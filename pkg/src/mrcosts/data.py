"""Core data records and the on-disk matrix formats.

A :class:`SnapshotMatrix` holds a real field sampled on a uniform time grid,
flattened to a single space axis (multi-variable data is stacked along that
axis). Two file formats are supported:

* ``csv``: header row ``t,<label>,...`` then one row per snapshot, written
  with 17 significant digits.
* ``f64bin``: little-endian binary, magic ``MRCO``, ``u32`` format version,
  ``u64`` n_space, ``u64`` n_time, the time vector as float64, then one
  contiguous block of n_space float64 values per snapshot.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import IoError, NonFiniteValue, NonUniformTimeGrid, ParseError, ShapeMismatch

MATRIX_MAGIC = b"MRCO"
MATRIX_FORMAT_VERSION = 1

#: maximum allowed relative deviation of any time step from the mean step
TIME_GRID_RTOL = 1e-9


def _first_nonfinite(values: np.ndarray) -> tuple[int, int] | None:
    bad = ~np.isfinite(values)
    if not bad.any():
        return None
    flat = int(np.argmax(bad))
    return flat // values.shape[1], flat % values.shape[1]


@dataclass(frozen=True)
class SnapshotMatrix:
    """Real matrix of shape (n_space, n_time) on a strictly uniform time grid.

    Immutable after construction; safe to share across threads.
    """

    values: np.ndarray
    times: np.ndarray
    space_labels: list[str] | None = None

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        times = np.ascontiguousarray(np.asarray(self.times, dtype=np.float64))
        if values.ndim != 2:
            raise ShapeMismatch(f"values must be 2-D, got shape {values.shape}")
        n_space, n_time = values.shape
        if n_space < 1 or n_time < 2:
            raise ShapeMismatch(f"need n_space >= 1 and n_time >= 2, got {values.shape}")
        if times.shape != (n_time,):
            raise ShapeMismatch(f"times has shape {times.shape}, expected ({n_time},)")
        if not np.isfinite(times).all():
            idx = int(np.argmax(~np.isfinite(times)))
            raise NonFiniteValue(f"time value at snapshot {idx} is not finite")
        loc = _first_nonfinite(values)
        if loc is not None:
            raise NonFiniteValue(f"value at space row {loc[0]}, snapshot {loc[1]} is not finite")
        steps = np.diff(times)
        if (steps <= 0).any():
            idx = int(np.argmax(steps <= 0))
            raise NonUniformTimeGrid(f"times not strictly increasing at snapshot {idx + 1}")
        dt = (times[-1] - times[0]) / (n_time - 1)
        dev = np.abs(steps - dt)
        if (dev > TIME_GRID_RTOL * abs(dt)).any():
            idx = int(np.argmax(dev > TIME_GRID_RTOL * abs(dt)))
            raise NonUniformTimeGrid(
                f"time step before snapshot {idx + 1} deviates from uniform spacing"
            )
        if self.space_labels is not None and len(self.space_labels) != n_space:
            raise ShapeMismatch(
                f"{len(self.space_labels)} space labels for {n_space} space rows"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "times", times)

    @property
    def n_space(self) -> int:
        return self.values.shape[0]

    @property
    def n_time(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        return float((self.times[-1] - self.times[0]) / (self.n_time - 1))


@dataclass(frozen=True)
class WindowSpec:
    """Placement of one fit window: level, ordinal index, and snapshot range."""

    start_index: int
    length: int
    level: int = 0
    window_index: int = 0

    def __post_init__(self):
        if self.length < 2:
            raise ShapeMismatch(f"window length must be >= 2, got {self.length}")
        if self.start_index < 0:
            raise ShapeMismatch(f"window start must be >= 0, got {self.start_index}")

    @property
    def stop_index(self) -> int:
        return self.start_index + self.length


@dataclass(frozen=True)
class WindowFit:
    """One window's fitted exponential model.

    ``omega`` are continuous-time eigenvalues (1/time), ``phi`` the unit-norm
    spatial modes (n_space x n_modes), ``amplitudes`` the per-mode scales and
    ``background`` the per-space-point time mean removed before fitting.
    ``residual_rel`` is the Frobenius-relative misfit on the demeaned window.
    Fits normally carry exactly ``rank`` modes; a zero-variance window yields
    a background-only fit with zero modes.
    """

    spec: WindowSpec
    omega: np.ndarray
    phi: np.ndarray
    amplitudes: np.ndarray
    background: np.ndarray
    residual_rel: float
    converged: bool = True

    @property
    def n_modes(self) -> int:
        return self.omega.shape[0]


def _write_bytes(path, payload: bytes) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _matrix_to_csv(matrix: SnapshotMatrix) -> str:
    labels = matrix.space_labels or [f"s{i}" for i in range(matrix.n_space)]
    lines = ["t," + ",".join(labels)]
    for j in range(matrix.n_time):
        row = ["%.17g" % matrix.times[j]]
        row.extend("%.17g" % v for v in matrix.values[:, j])
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _matrix_from_csv(text: str) -> SnapshotMatrix:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty CSV file")
    labels: list[str] | None = None
    first_fields = lines[0].split(",")
    try:
        float(first_fields[0])
        data_lines = lines
    except ValueError:
        labels = [f.strip() for f in first_fields[1:]]
        data_lines = lines[1:]
    if not data_lines:
        raise ParseError("CSV has a header but no data rows")
    times = []
    rows = []
    width = None
    for lineno, line in enumerate(data_lines, start=1):
        fields = line.split(",")
        if width is None:
            width = len(fields)
            if width < 2:
                raise ParseError(f"row {lineno}: need a time column and at least one space column")
        elif len(fields) != width:
            raise ParseError(f"row {lineno}: expected {width} columns, found {len(fields)}")
        parsed = []
        for col, raw in enumerate(fields):
            try:
                parsed.append(float(raw))
            except ValueError:
                raise ParseError(f"row {lineno}, column {col}: cannot parse {raw.strip()!r}")
        times.append(parsed[0])
        rows.append(parsed[1:])
    values = np.asarray(rows, dtype=np.float64).T
    return SnapshotMatrix(values=values, times=np.asarray(times), space_labels=labels)


def _matrix_to_f64bin(matrix: SnapshotMatrix) -> bytes:
    header = MATRIX_MAGIC + struct.pack(
        "<IQQ", MATRIX_FORMAT_VERSION, matrix.n_space, matrix.n_time
    )
    times = matrix.times.astype("<f8").tobytes()
    # one contiguous block per snapshot for fast windowed slicing
    blocks = np.asfortranarray(matrix.values).astype("<f8").tobytes(order="F")
    return header + times + blocks


def _matrix_from_f64bin(payload: bytes) -> SnapshotMatrix:
    head = 4 + struct.calcsize("<IQQ")
    if len(payload) < head:
        raise ParseError("f64bin file shorter than its header")
    if payload[:4] != MATRIX_MAGIC:
        raise ParseError(f"bad magic {payload[:4]!r}, expected {MATRIX_MAGIC!r}")
    version, n_space, n_time = struct.unpack_from("<IQQ", payload, 4)
    if version != MATRIX_FORMAT_VERSION:
        raise ParseError(f"unsupported f64bin format version {version}")
    expected = head + 8 * n_time + 8 * n_space * n_time
    if len(payload) != expected:
        raise ParseError(f"f64bin payload is {len(payload)} bytes, expected {expected}")
    times = np.frombuffer(payload, dtype="<f8", count=n_time, offset=head)
    values = np.frombuffer(payload, dtype="<f8", count=n_space * n_time, offset=head + 8 * n_time)
    values = values.reshape((n_space, n_time), order="F")
    return SnapshotMatrix(values=values.copy(), times=times.copy())


def save_matrix(matrix: SnapshotMatrix, path, format: str = "f64bin") -> None:
    """Write ``matrix`` to ``path``. ``format`` is ``csv`` or ``f64bin``."""
    if format == "csv":
        _write_bytes(path, _matrix_to_csv(matrix).encode("utf-8"))
    elif format == "f64bin":
        _write_bytes(path, _matrix_to_f64bin(matrix))
    else:
        raise ParseError(f"unknown matrix format {format!r}")


def load_matrix(path, format: str = "f64bin") -> SnapshotMatrix:
    """Read a :class:`SnapshotMatrix` from ``path``. ``format`` is ``csv`` or ``f64bin``."""
    payload = _read_bytes(path)
    if format == "csv":
        try:
            text = payload.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"{path} is not valid UTF-8: {exc}") from exc
        return _matrix_from_csv(text)
    if format == "f64bin":
        return _matrix_from_f64bin(payload)
    raise ParseError(f"unknown matrix format {format!r}")
