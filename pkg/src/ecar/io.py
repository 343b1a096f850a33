"""File formats: region CSV, edge lists, JSON and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "RegionData",
    "read_region_csv",
    "read_edge_list",
    "write_csv",
    "write_json",
    "to_jsonable",
    "git_blob_hash",
    "write_manifest",
]


@dataclass(frozen=True, eq=False)
class RegionData:
    y: np.ndarray
    x: np.ndarray
    offset: np.ndarray | None
    covariates: np.ndarray | None
    sites: np.ndarray | None

    @property
    def n(self) -> int:
        return self.y.size


def _float_column(rows, name, path):
    try:
        return np.array([float(r[name]) for r in rows])
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: column {name!r} has a non-numeric entry") from exc


def read_region_csv(path) -> RegionData:
    """Columns y, x, optional offset, optional c1..cp and optional site coordinates s1, s2 (alias sx, sy)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        rows = [{k.strip(): v for k, v in r.items()} for r in reader]
    for need in ("y", "x"):
        if need not in header:
            raise ValueError(f"{path}: missing column {need!r}")
    if not rows:
        raise ValueError(f"{path}: no data rows")
    y = _float_column(rows, "y", path)
    x = _float_column(rows, "x", path)
    offset = _float_column(rows, "offset", path) if "offset" in header else None
    ccols = sorted((h for h in header if h[:1] == "c" and h[1:].isdigit()), key=lambda h: int(h[1:]))
    cov = np.column_stack([_float_column(rows, c, path) for c in ccols]) if ccols else None
    sites = None
    for a, b in (("s1", "s2"), ("sx", "sy")):
        if a in header and b in header:
            sites = np.column_stack([_float_column(rows, a, path), _float_column(rows, b, path)])
            break
    return RegionData(y, x, offset, cov, sites)


def read_edge_list(path) -> list[tuple[int, int]]:
    """Whitespace- or comma-separated 1-based region pairs; a non-numeric first line is a header."""
    path = Path(path)
    edges = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two region ids")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            if not edges and lineno == 1:
                continue
            raise ValueError(f"{path}:{lineno}: region ids must be integers") from None
        edges.append((i, j))
    if not edges:
        raise ValueError(f"{path}: no edges")
    return edges


def write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")


def git_blob_hash(path) -> str:
    """Same digest ``git hash-object`` reports for the file."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(outdir, config: dict, seeds: dict, inputs=(), outputs=()) -> Path:
    from . import __version__

    outdir = Path(outdir)
    manifest = {
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): git_blob_hash(p) for p in inputs},
        "outputs": {Path(p).name: git_blob_hash(p) for p in outputs},
        "versions": {"ecar": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    path = outdir / "manifest.json"
    write_json(path, manifest)
    return path
