"""Disk cache for expensive reproducible artifacts.

Reference batches at depth 10-12 take minutes to build on one core, and
the trained generator takes longer; both are pure functions of their
parameters and a seed, so they are materialized once under a cache
directory (default ``.levyarea-cache`` in the working directory,
override with the LEVYAREA_CACHE environment variable) and memoized by a
parameter-keyed filename.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .batch import LevyBatch
from .batchio import load_batch, save_batch
from .rng import RngStream, gauss
from .samplers import reference_area


def cache_dir() -> Path:
    root = os.environ.get("LEVYAREA_CACHE", ".levyarea-cache")
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def reference_batch(d: int, log2_n: int, depth: int, seed: int,
                    dt: float = 1.0, log=None) -> LevyBatch:
    """Unconditional reference batch, built once and reloaded thereafter."""
    name = f"ref_d{d}_n{log2_n}_K{depth}_seed{seed}_dt{dt:g}.lvb"
    path = cache_dir() / name
    if path.exists():
        return load_batch(path)
    if log is not None:
        log(f"building reference batch {name} (one-time)")
    n = 1 << log2_n
    stream = RngStream(seed)
    w = gauss(stream.child(0), n, dt, d)
    a = reference_area(stream.child(1), w, dt, depth)
    batch = LevyBatch(d, dt, w, a, {"kind": "reference", "seed": seed, "depth": depth})
    save_batch(batch, path)
    return batch


def conditioned_reference_areas(w: np.ndarray, log2_n: int, depth: int, seed: int,
                                tag: str, dt: float = 1.0, log=None):
    """Reference areas plus combined bridge h at one pinned increment."""
    from .samplers import reference_area_with_h

    d = len(w)
    name = f"refcond_{tag}_d{d}_n{log2_n}_K{depth}_seed{seed}.npz"
    path = cache_dir() / name
    if path.exists():
        data = np.load(path)
        return data["a"], data["h"]
    if log is not None:
        log(f"building conditioned reference {name} (one-time)")
    n = 1 << log2_n
    w_rows = np.tile(np.asarray(w, dtype=np.float64), (n, 1))
    a, h = reference_area_with_h(RngStream(seed), w_rows, dt, depth)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, a=a, h=h)
    os.replace(tmp, path)
    return a, h


def cached_json(name: str, builder, log=None) -> dict:
    """Memoize a JSON-serializable dict under the cache directory."""
    path = cache_dir() / f"{name}.json"
    if path.exists():
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    if log is not None:
        log(f"computing {name} (one-time)")
    value = builder()
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(value, fh, sort_keys=True, indent=1)
    os.replace(tmp, path)
    return value


def trained_model(cfg, eval_reference: LevyBatch, log=None):
    """Train once per (config, seed); reload the checkpoint afterwards."""
    import hashlib
    from dataclasses import asdict

    from . import pairnet
    from .train import TrainReport, train

    key_doc = json.dumps(asdict(cfg), sort_keys=True, default=str)
    key = hashlib.sha256(key_doc.encode()).hexdigest()[:16]
    model_path = cache_dir() / f"model_{key}.ckpt"
    report_path = cache_dir() / f"model_{key}_report.json"
    if model_path.exists() and report_path.exists():
        with open(report_path, "r", encoding="utf-8") as fh:
            report_doc = json.load(fh)
        return pairnet.load(model_path), report_doc
    if log is not None:
        log(f"training generator model_{key} (one-time)")
    model, report = train(cfg, eval_reference=eval_reference, log=log)
    pairnet.save(model, model_path)
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, sort_keys=True, indent=1)
    return model, report.to_json()
