"""Ensemble files: CSV and a compact binary format.

CSV: header ``path_id,t,x1,...,xd`` and one row per path.

Binary (all little-endian)::

    magic    8 bytes  b"GCBENS\\x00\\x01"
    version  uint32   (currently 1)
    dim      uint32
    n_paths  uint64
    time     float64
    dt       float64
    seed     uint64
    payload  n_paths * dim float64, row-major
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .engine import Ensemble

MAGIC = b"GCBENS\x00\x01"
VERSION = 1
_HEADER = struct.Struct("<8sIIQddQ")


class EnsembleFormatError(ValueError):
    pass


def write_csv(ens: Ensemble, path) -> None:
    d = ens.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "t"] + [f"x{i + 1}" for i in range(d)])
        ids = ens.paths if ens.paths is not None else np.arange(ens.n_paths)
        for pid, row in zip(ids, ens.states):
            w.writerow([int(pid), repr(float(ens.time))] + [repr(float(v)) for v in row])


def read_csv(path) -> Ensemble:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if not header or header[:2] != ["path_id", "t"]:
            raise EnsembleFormatError(f"{path}: not an ensemble CSV")
        rows = [row for row in r if row]
    d = len(header) - 2
    if not rows:
        return Ensemble(np.empty((0, d)), 0.0, 0, 0.0, 0)
    data = np.array([[float(v) for v in row] for row in rows])
    ids = data[:, 0].astype(np.uint64)
    return Ensemble(data[:, 2:], float(data[0, 1]), 0, 0.0, len(rows), paths=ids)


def write_binary(ens: Ensemble, path) -> None:
    states = np.ascontiguousarray(ens.states, dtype="<f8")
    head = _HEADER.pack(MAGIC, VERSION, ens.dim, ens.n_paths, float(ens.time), float(ens.dt),
                        int(ens.seed) & 0xFFFFFFFFFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(states.tobytes())


def read_binary(path) -> Ensemble:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise EnsembleFormatError(f"{path}: truncated header")
    magic, version, dim, n, t, dt, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise EnsembleFormatError(f"{path}: bad magic")
    if version != VERSION:
        raise EnsembleFormatError(f"{path}: unsupported version {version}")
    payload = raw[_HEADER.size:]
    if len(payload) != 8 * dim * n:
        raise EnsembleFormatError(f"{path}: payload size mismatch")
    states = np.frombuffer(payload, dtype="<f8").reshape(n, dim).astype(float)
    return Ensemble(states, t, seed, dt, n)


def write_ensemble(ens: Ensemble, path) -> None:
    if str(path).endswith(".csv"):
        write_csv(ens, path)
    else:
        write_binary(ens, path)


def read_ensemble(path) -> Ensemble:
    with open(path, "rb") as fh:
        start = fh.read(len(MAGIC))
    if start == MAGIC:
        return read_binary(path)
    return read_csv(path)
