"""Per-frame particle snapshots and the diagnostics CSV.

Text snapshots start with ``#`` header lines (format version, frame, time,
count, dx, column names) followed by fixed-width records::

    x y z vx vy vz J material_id

with floats written to 17 significant digits so a read gives back the exact
doubles.  The binary twin stores the same header values and the same record
fields in the same order, little-endian.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import OutputError
from .sim import Diagnostics

SNAPSHOT_VERSION = 1
DIAGNOSTICS_VERSION = 1
BINARY_MAGIC = b"CKMPMSNP"

RECORD_DTYPE = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("vx", "<f8"), ("vy", "<f8"),
                         ("vz", "<f8"), ("J", "<f8"), ("material_id", "<i8")])
_HEADER_DTYPE = np.dtype([("magic", "S8"), ("version", "<i8"), ("frame", "<i8"), ("time", "<f8"),
                          ("count", "<i8"), ("dx", "<f8")])


@dataclass
class Snapshot:
    frame: int
    time: float
    dx: float
    x: np.ndarray
    v: np.ndarray
    J: np.ndarray
    material_id: np.ndarray

    @property
    def count(self):
        return len(self.x)


def snapshot_of(particles, frame, time, dx):
    p = particles
    return Snapshot(int(frame), float(time), float(dx), p.x.copy(), p.v.copy(), p.J.copy(),
                    p.mat.copy())


def _records(snap):
    rec = np.empty(snap.count, RECORD_DTYPE)
    for i, name in enumerate(("x", "y", "z")):
        rec[name] = snap.x[:, i]
    for i, name in enumerate(("vx", "vy", "vz")):
        rec[name] = snap.v[:, i]
    rec["J"] = snap.J
    rec["material_id"] = snap.material_id
    return rec


def write_snapshot(path, snap, binary=False):
    path = Path(path)
    try:
        if binary:
            head = np.array([(BINARY_MAGIC, SNAPSHOT_VERSION, snap.frame, snap.time, snap.count,
                              snap.dx)], _HEADER_DTYPE)
            with open(path, "wb") as fh:
                fh.write(head.tobytes())
                fh.write(_records(snap).tobytes())
            return path
        data = np.column_stack([snap.x, snap.v, snap.J, snap.material_id])
        with open(path, "w") as fh:
            fh.write(f"# ckmpm snapshot v{SNAPSHOT_VERSION}\n")
            fh.write(f"# frame {snap.frame}\n")
            fh.write(f"# time {snap.time!r}\n")
            fh.write(f"# count {snap.count}\n")
            fh.write(f"# dx {snap.dx!r}\n")
            fh.write("# x y z vx vy vz J material_id\n")
            np.savetxt(fh, data, fmt=["%24.16e"] * 7 + ["%6d"])
    except OSError as exc:
        raise OutputError(f"cannot write snapshot {path}: {exc}") from exc
    return path


def read_snapshot(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OutputError(f"cannot read snapshot {path}: {exc}") from exc
    if raw.startswith(BINARY_MAGIC):
        body = raw[_HEADER_DTYPE.itemsize:]
        if len(raw) < _HEADER_DTYPE.itemsize or len(body) % RECORD_DTYPE.itemsize:
            raise OutputError(f"truncated snapshot {path}")
        head = np.frombuffer(raw[:_HEADER_DTYPE.itemsize], _HEADER_DTYPE)[0]
        rec = np.frombuffer(body, RECORD_DTYPE)
        if len(rec) != head["count"]:
            raise OutputError(f"truncated snapshot {path}")
        return Snapshot(int(head["frame"]), float(head["time"]), float(head["dx"]),
                        np.column_stack([rec["x"], rec["y"], rec["z"]]),
                        np.column_stack([rec["vx"], rec["vy"], rec["vz"]]),
                        rec["J"].copy(), rec["material_id"].copy())
    meta = {}
    lines = raw.decode().splitlines()
    for line in lines[:6]:
        parts = line[1:].split()
        if len(parts) == 2 and parts[0] in ("frame", "time", "count", "dx"):
            meta[parts[0]] = parts[1]
    if set(meta) != {"frame", "time", "count", "dx"}:
        raise OutputError(f"malformed snapshot header in {path}")
    count = int(meta["count"])
    body = np.loadtxt(lines[6:], ndmin=2) if count else np.zeros((0, 8))
    if len(body) != count:
        raise OutputError(f"snapshot {path} has {len(body)} records, header says {count}")
    return Snapshot(int(meta["frame"]), float(meta["time"]), float(meta["dx"]), body[:, 0:3].copy(),
                    body[:, 3:6].copy(), body[:, 6].copy(), body[:, 7].astype(np.int64))


class DiagnosticsWriter:
    """Appends one CSV row per substep; values use 17 significant digits."""

    def __init__(self, path):
        self.path = Path(path)
        try:
            self._fh = open(self.path, "w", newline="")
        except OSError as exc:
            raise OutputError(f"cannot write diagnostics {path}: {exc}") from exc
        self._fh.write(f"# ckmpm diagnostics v{DIAGNOSTICS_VERSION}\n")
        self._csv = csv.writer(self._fh)
        self._csv.writerow(Diagnostics.CSV_COLUMNS)

    def write(self, d: Diagnostics):
        row = d.csv_row()
        self._csv.writerow([str(row[0])] + [f"{float(v):.17g}" for v in row[1:]])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_diagnostics(path):
    """Columns of a diagnostics CSV as a dict of arrays."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    except OSError as exc:
        raise OutputError(f"cannot read diagnostics {path}: {exc}") from exc
    head, body = rows[0], rows[1:]
    data = np.array(body, dtype=float).reshape(len(body), len(head))
    out = {name: data[:, i] for i, name in enumerate(head)}
    out["step"] = out["step"].astype(np.int64)
    return out
