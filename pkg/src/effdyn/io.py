"""Artifact serialization.

Every writer goes through ``atomic_write`` (temp file in the target directory,
then rename), and JSON is emitted with sorted keys and shortest-repr floats so
that serialize -> parse -> serialize is byte-identical.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .effective import CVAssignment, EffectiveModel
from .errors import ConfigurationError
from .operators import Grid, TransitionModel
from .spectral import SpectralResult
from .tpt import TPTResult

MODEL_FORMAT = "effdyn-transition-model/1"


def atomic_write(path, data: bytes | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # JSON has no inf/nan; keep them readable and round-trippable
        return v if math.isfinite(v) else str(v)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write(path, dumps(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def csv_text(rows: list[dict], columns=None) -> str:
    if columns is None:
        columns = list(rows[0]) if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, rows: list[dict], columns=None) -> Path:
    return atomic_write(path, csv_text(rows, columns))


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# -- transition models -------------------------------------------------------


def model_header(model: TransitionModel, matrix_file: str) -> dict:
    return {
        "format": MODEL_FORMAT,
        "n": model.n,
        "lag": float(model.lag),
        "source": model.source,
        "grid": model.grid.to_dict() if model.grid is not None else None,
        "states": None if model.states is None else [int(s) for s in model.states],
        "mu": [float(v) for v in model.mu],
        "matrix_file": matrix_file,
        "dtype": "<f8",
        "order": "row-major",
    }


def write_model(model: TransitionModel, stem, extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.json`` (header) and ``<stem>.bin`` (P as little-endian float64)."""
    stem = Path(stem)
    bin_path = stem.with_suffix(".bin")
    header = model_header(model, bin_path.name)
    if extra:
        header.update(extra)
    atomic_write(bin_path, np.ascontiguousarray(model.P, dtype="<f8").tobytes())
    return write_json(stem.with_suffix(".json"), header), bin_path


def read_model(header_path) -> TransitionModel:
    header_path = Path(header_path)
    h = read_json(header_path)
    if h.get("format") != MODEL_FORMAT:
        raise ConfigurationError(f"{header_path} is not a transition-model header")
    n = int(h["n"])
    raw = (header_path.parent / h["matrix_file"]).read_bytes()
    if len(raw) != 8 * n * n:
        raise ConfigurationError(f"matrix file holds {len(raw)} bytes, expected {8 * n * n}")
    P = np.frombuffer(raw, dtype="<f8").reshape(n, n).astype(np.float64)
    grid = Grid.from_dict(h["grid"]) if h.get("grid") else None
    return TransitionModel(P, np.array(h["mu"]), lag=h["lag"], source=h["source"], grid=grid, states=h["states"])


def write_mu_csv(model: TransitionModel, path) -> Path:
    states = model.states if model.states is not None else np.arange(model.n)
    return write_csv(path, [{"state": int(s), "mu": float(m)} for s, m in zip(states, model.mu)])


# -- results -----------------------------------------------------------------


def spectral_dict(res: SpectralResult) -> dict:
    return {
        "lag": float(res.lag),
        "eigenvalues": [float(v) for v in res.eigenvalues],
        "timescales": [float(v) for v in res.timescales()],
        "eigenvectors": [[float(v) for v in res.eigenvectors[:, i]] for i in range(res.eigenvalues.size)],
    }


def write_spectrum(res: SpectralResult, stem) -> None:
    stem = Path(stem)
    write_csv(stem.with_suffix(".csv"), res.rows(), ["index", "eigenvalue", "timescale"])
    write_json(stem.with_suffix(".json"), spectral_dict(res))


def write_tpt(res: TPTResult, stem) -> None:
    stem = Path(stem)
    write_json(stem.with_suffix(".json"), res.to_dict())
    write_csv(stem.with_suffix(".csv"), [{"state": i, "q": float(v)} for i, v in enumerate(res.q)])


def write_cv(cv: CVAssignment, path) -> Path:
    return write_json(path, cv.to_dict())


def read_cv(path) -> CVAssignment:
    return CVAssignment.from_dict(read_json(path))


def write_effective(eff: EffectiveModel, stem) -> tuple[Path, Path]:
    """Effective model in the transition-model format plus a ``conditionals`` block."""
    block = {
        "conditionals": [
            {"bin": z, "states": [int(s) for s in fiber], "mu_z": [float(v) for v in eff.cond[fiber]]}
            for z, fiber in enumerate(eff.cv.fibers)
        ],
        "cv": eff.cv.to_dict(),
    }
    return write_model(eff.model, stem, extra=block)


def read_effective(header_path) -> tuple[TransitionModel, CVAssignment, np.ndarray]:
    h = read_json(header_path)
    reduced = read_model(header_path)
    cv = CVAssignment.from_dict(h["cv"])
    cond = np.zeros(cv.n)
    for block in h["conditionals"]:
        cond[block["states"]] = block["mu_z"]
    return reduced, cv, cond


def scan_summary(result, objective: str, family: dict) -> dict:
    return {
        "objective": objective,
        "family": family,
        "argmin": result.argmin,
        "argmin_index": result.argmin_index,
        "min_value": float(result.values[result.argmin_index]),
        "n_points": int(result.params.size),
    }


def write_scan(result, stem, objective: str, family: dict) -> None:
    stem = Path(stem)
    rows = result.rows()
    m = result.lambdas.shape[1] if result.lambdas.ndim == 2 else 0
    cols = ["param", "objective"] + [f"lambda_{j}" for j in range(1, m + 1)] + ["k_full", "k_eff", "gap"]
    write_csv(stem.with_suffix(".csv"), rows, cols)
    write_json(stem.with_suffix(".json"), scan_summary(result, objective, family))
