"""
Field snapshot container and run checkpoints.

Binary layout (documented here, exactly):

    bytes 0..3    magic b"PNPF"
    bytes 4..7    format version, u32 little-endian (currently 1)
    bytes 8..15   dim, f64 little-endian
    bytes 16..23  points per axis N, f64 little-endian
    bytes 24..31  box length L, f64 little-endian
    bytes 32..63  reserved, zero-filled (header is 64 bytes total)
    then, per field, N^dim f64 little-endian values in row-major (C)
    order over the axes, in the order listed by the JSON sidecar.

The sidecar lives at <path>.json and names the fields:

    {"format": "pnpf-field-snapshot", "version": 1,
     "fields": [...], "dim": d, "n": N, "length": L}

A checkpoint is a snapshot of the primitive fields plus a metadata JSON
(time, step count, stepper config, physical parameters).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dynamics import StepperConfig
from .fields import PhysParams, State
from .grid import GridSpec, ScalarField

MAGIC = b"PNPF"
VERSION = 1
HEADER_SIZE = 64


class SnapshotFormatError(ValueError):
    """Malformed snapshot container or sidecar."""


def _pack_header(grid: GridSpec) -> bytes:
    head = MAGIC + struct.pack("<I", VERSION)
    head += struct.pack("<ddd", float(grid.dim), float(grid.n), float(grid.length))
    return head.ljust(HEADER_SIZE, b"\x00")


def write_snapshot(path, grid: GridSpec, fields: dict) -> None:
    """Write named scalar fields (ScalarField or raw arrays) plus the JSON
    sidecar at <path>.json."""
    path = Path(path)
    names = list(fields)
    with open(path, "wb") as fh:
        fh.write(_pack_header(grid))
        for name in names:
            f = fields[name]
            vals = f.values if isinstance(f, ScalarField) else np.asarray(f)
            if vals.shape != grid.shape:
                raise SnapshotFormatError(f"field {name!r} shape {vals.shape} != grid")
            fh.write(np.ascontiguousarray(vals, dtype="<f8").tobytes())
    sidecar = {
        "format": "pnpf-field-snapshot",
        "version": VERSION,
        "fields": names,
        "dim": grid.dim,
        "n": grid.n,
        "length": grid.length,
    }
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def read_snapshot(path) -> tuple[GridSpec, dict]:
    """Read a snapshot; returns (grid, {name: array})."""
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise SnapshotFormatError(f"missing sidecar {sidecar_path}")
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    with open(path, "rb") as fh:
        head = fh.read(HEADER_SIZE)
        if len(head) < HEADER_SIZE or head[:4] != MAGIC:
            raise SnapshotFormatError("bad magic or truncated header")
        (version,) = struct.unpack("<I", head[4:8])
        if version != VERSION:
            raise SnapshotFormatError(f"unsupported snapshot version {version}")
        dim_f, n_f, length = struct.unpack("<ddd", head[8:32])
        dim, n = int(dim_f), int(n_f)
        if dim != sidecar["dim"] or n != sidecar["n"]:
            raise SnapshotFormatError("sidecar and header disagree")
        grid = GridSpec(dim=dim, n=n, length=length)
        count = n**dim
        out = {}
        for name in sidecar["fields"]:
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise SnapshotFormatError(f"truncated data for field {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8").reshape(grid.shape).copy()
    return grid, out


def write_checkpoint(
    prefix, state: State, t: float, step: int, cfg: StepperConfig, params: PhysParams
) -> None:
    """Snapshot the primitive fields at <prefix>.snap (+ sidecar) and the
    run metadata at <prefix>.meta.json."""
    prefix = Path(prefix)
    write_snapshot(
        prefix.with_suffix(".snap"),
        state.grid,
        {"n": state.n, "p": state.p, "theta": state.theta, "phi": state.phi},
    )
    meta = {
        "t": t,
        "step": step,
        "stepper": asdict(cfg),
        "params": asdict(params),
    }
    with open(prefix.with_suffix(".meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_checkpoint(prefix) -> tuple[State, dict]:
    prefix = Path(prefix)
    grid, fields = read_snapshot(prefix.with_suffix(".snap"))
    with open(prefix.with_suffix(".meta.json")) as fh:
        meta = json.load(fh)
    state = State(
        ScalarField(grid, fields["n"]),
        ScalarField(grid, fields["p"]),
        ScalarField(grid, fields["theta"]),
        ScalarField(grid, fields["phi"]),
    )
    return state, meta
