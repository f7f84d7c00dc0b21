"""Serialization of sample batches.

Primary format: a small columnar binary container (magic, JSON header,
raw little-endian float64 columns) whose bytes are a pure function of
the content, so reproducible runs re-create identical files. A CSV
fallback with a commented header carries the same metadata for tools
that want plain text.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .batch import LevyBatch, num_pairs

BATCH_MAGIC = b"LVBATCH1"


class BatchFormatError(ValueError):
    """Raised for unreadable or truncated batch files."""


def _header(batch: LevyBatch) -> dict:
    return {
        "format": "levy-batch",
        "version": 1,
        "d": batch.d,
        "dt": batch.dt,
        "n": batch.n,
        "kind": batch.meta.get("kind", "unknown"),
        "seed": batch.meta.get("seed"),
        "depth": batch.meta.get("depth"),
    }


def save_batch(batch: LevyBatch, path) -> None:
    header = json.dumps(_header(batch), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BATCH_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(batch.w, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(batch.a, dtype="<f8").tobytes())


def load_batch(path) -> LevyBatch:
    with open(path, "rb") as fh:
        magic = fh.read(len(BATCH_MAGIC))
        if magic != BATCH_MAGIC:
            raise BatchFormatError(f"bad magic {magic!r} in {path}")
        raw = fh.read(4)
        if len(raw) < 4:
            raise BatchFormatError(f"truncated header in {path}")
        (hlen,) = struct.unpack("<I", raw)
        hraw = fh.read(hlen)
        if len(hraw) < hlen:
            raise BatchFormatError(f"truncated header in {path}")
        header = json.loads(hraw.decode("utf-8"))
        d, n = header["d"], header["n"]
        a_cols = num_pairs(d)
        w_blob = fh.read(8 * n * d)
        a_blob = fh.read(8 * n * a_cols)
        if len(w_blob) < 8 * n * d or len(a_blob) < 8 * n * a_cols:
            raise BatchFormatError(f"truncated data in {path}")
    w = np.frombuffer(w_blob, dtype="<f8").reshape(n, d).copy()
    a = np.frombuffer(a_blob, dtype="<f8").reshape(n, a_cols).copy()
    meta = {"kind": header.get("kind")}
    if header.get("seed") is not None:
        meta["seed"] = header["seed"]
    if header.get("depth") is not None:
        meta["depth"] = header["depth"]
    return LevyBatch(d, header["dt"], w, a, meta)


def save_batch_csv(batch: LevyBatch, path) -> None:
    header = json.dumps(_header(batch), sort_keys=True)
    cols = [f"w{i}" for i in range(batch.d)] + [f"a{i}" for i in range(batch.n_pairs)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        fh.write(",".join(cols) + "\n")
        data = np.concatenate([batch.w, batch.a], axis=1)
        for row in data:
            fh.write(",".join(repr(v) for v in row) + "\n")


def load_batch_csv(path) -> LevyBatch:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise BatchFormatError(f"missing metadata line in {path}")
        header = json.loads(first[2:])
        fh.readline()  # column names
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    d = header["d"]
    return LevyBatch(d, header["dt"], data[:, :d], data[:, d:],
                     {"kind": header.get("kind")})
