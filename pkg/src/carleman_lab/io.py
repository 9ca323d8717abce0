"""Deterministic CSV tables, JSON metadata sidecars and a provenance check."""
from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from . import __version__

HASH_COLUMN = "config_hash"


def fmt(v):
    """Shortest round-trip text for numbers; identical input gives identical bytes."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path, header, rows, config_hash):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow([HASH_COLUMN] + list(header))
        for r in rows:
            w.writerow([config_hash] + [fmt(v) for v in r])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        return o if math.isfinite(o) else str(o)
    return o


def write_metadata(path, config_hash, command, derived, wall_time=None, extra=None):
    meta = {"config_hash": config_hash, "tool_version": __version__, "command": command,
            "wall_time_s": wall_time, "derived": _jsonable(derived)}
    if extra:
        meta.update(_jsonable(extra))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def verify_provenance(out_dir, config_hash):
    """List of (file, problem) for every output whose recorded hash differs from `config_hash`."""
    problems = []
    out_dir = Path(out_dir)
    files = sorted(p for p in out_dir.iterdir() if p.suffix in (".csv", ".json"))
    if not files:
        problems.append((str(out_dir), "no outputs found"))
    for p in files:
        if p.suffix == ".csv":
            header, rows = read_csv(p)
            if not header or header[0] != HASH_COLUMN:
                problems.append((p.name, "missing config_hash column"))
                continue
            bad = {r[0] for r in rows if r and r[0] != config_hash}
            if bad:
                problems.append((p.name, f"rows carry hash {sorted(bad)[0][:12]}..."))
        else:
            with open(p) as fh:
                meta = json.load(fh)
            if meta.get("config_hash") != config_hash:
                problems.append((p.name, f"metadata hash {str(meta.get('config_hash'))[:12]}..."))
    return problems


def snapshot_writer(path, disc, stride, data):
    """Observer writing every `stride`-th step of a run to a flat binary file."""
    from .solver import write_snapshot

    fh = open(path, "wb")

    def obs(n, t, u):
        if n % stride == 0:
            g = data.g_values(t, disc.snap_points)
            write_snapshot(fh, disc.grid, t, disc.to_grid(u, g))

    obs.close = fh.close
    return obs


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
