"""File formats: density-matrix JSON, full-precision CSV, run manifests."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .hilbert import HilbertDims

FORMAT_TAG = "d2d-density-matrix/1"


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Comma separated, header row, LF line ends, 17 significant digits."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")
    return path


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    """Header and numeric body of a CSV written by :func:`write_csv`."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    body = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=float)
    return header, body


def write_density(path: Path, rho: np.ndarray, dims: HilbertDims | None, kind: str) -> Path:
    """Dense ρ row-major, every complex entry as ``[re, im]``.

    ``kind`` is ``'composite'`` (spin ⊗ photon) or ``'photon'``.
    """
    rho = np.asarray(rho, dtype=complex)
    doc = {
        "format": FORMAT_TAG,
        "kind": kind,
        "shape": list(rho.shape),
        "n_spins": dims.n_spins if dims is not None else None,
        "fock_cutoff": dims.fock_cutoff if dims is not None else rho.shape[0],
        "data": [[[float(z.real), float(z.imag)] for z in row] for row in rho],
    }
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    return path


def read_density(path: Path) -> tuple[np.ndarray, HilbertDims | None, str]:
    """Inverse of :func:`write_density`; raises ConfigError on malformed files."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        arr = np.asarray(doc["data"], dtype=float)
        if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"data must be a square matrix of [re, im] pairs, got shape {arr.shape}")
        rho = arr[..., 0] + 1j * arr[..., 1]
        kind = doc.get("kind", "photon")
        dims = None
        if kind == "composite":
            dims = HilbertDims(int(doc["n_spins"]), int(doc["fock_cutoff"]))
            if dims.total_dim != rho.shape[0]:
                raise ValueError(f"shape {rho.shape} does not match n_spins/fock_cutoff")
        elif kind != "photon":
            raise ValueError(f"unknown kind {kind!r}")
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed density-matrix file {path}: {exc}") from exc
    if not np.all(np.isfinite(rho)):
        raise ConfigError(f"density-matrix file {path} contains non-finite entries")
    return rho, dims, kind


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else str(v)
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


def write_manifest(path: Path, manifest: dict) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
