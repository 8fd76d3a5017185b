"""CSV and JSON persistence.

Every table starts with a ``# schema: <name> v<version>`` comment line,
followed by a header row.  Floats are written with 17 significant digits so
a write/read round trip is lossless.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .datagen import EnsembleParams, SyntheticInstance
from .penalty import ParameterError
from .solver import RegressionProblem

SCHEMA_VERSION = 1


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    if v is None:
        return ""
    return str(v)


def write_table(path, schema: str, columns: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {schema} v{SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            if len(r) != len(columns):
                raise ValueError(f"row has {len(r)} fields, header has {len(columns)}")
            w.writerow([fmt(v) for v in r])
    return path


def _parse(s: str):
    if s == "":
        return None
    try:
        v = int(s)
        return v
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_table(path):
    """Returns (schema, columns, rows); numeric fields parsed, blanks as None."""
    path = Path(path)
    schema = None
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for ln in lines:
        if ln.startswith("#"):
            if ln.startswith("# schema:"):
                schema = ln.split(":", 1)[1].strip()
            continue
        body.append(ln)
    reader = csv.reader(body)
    columns = next(reader)
    rows = [[_parse(v) for v in r] for r in reader]
    return schema, columns, rows


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else None
    return o


# ---------------------------------------------------------------------------
# matrices and instances
# ---------------------------------------------------------------------------

def write_matrix(path, X, name: str) -> Path:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"schema: matrix v{SCHEMA_VERSION}\nname: {name}\nrows: {X.shape[0]}\ncols: {X.shape[1]}"
    np.savetxt(path, X, fmt="%.17g", delimiter=",", header=header, comments="# ")
    return path


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    dims = {}
    with open(path) as fh:
        for ln in fh:
            if not ln.startswith("#"):
                break
            key, _, val = ln[1:].partition(":")
            dims[key.strip()] = val.strip()
    X = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if "rows" in dims and X.shape != (int(dims["rows"]), int(dims["cols"])):
        raise ParameterError(f"{path}: header says {dims['rows']}x{dims['cols']}, data is {X.shape}")
    return X


def write_instance(directory, inst: SyntheticInstance) -> Path:
    d = Path(directory)
    p = inst.problem
    write_matrix(d / "A.csv", p.A, "A")
    write_matrix(d / "y.csv", p.y[:, None], "y")
    if p.x0 is not None:
        write_matrix(d / "x0.csv", p.x0[:, None], "x0")
    e = inst.ensemble
    write_json(d / "meta.json", {
        "schema": f"instance v{SCHEMA_VERSION}",
        "seed": inst.seed, "M": p.M, "N": p.N,
        "ensemble": {"alpha": e.alpha, "rho0": e.rho0, "sigma_D2": e.sigma_D2,
                     "sigma_x2": e.sigma_x2},
        "prng": "numpy Philox",
    })
    return d


def read_instance(directory):
    """(problem, meta dict or None) from a directory written by ``write_instance``."""
    d = Path(directory)
    A = read_matrix(d / "A.csv")
    y = read_matrix(d / "y.csv").reshape(-1)
    x0 = read_matrix(d / "x0.csv").reshape(-1) if (d / "x0.csv").exists() else None
    meta = read_json(d / "meta.json") if (d / "meta.json").exists() else None
    return RegressionProblem(y, A, x0), meta


def ensemble_from_meta(meta) -> EnsembleParams | None:
    if not meta or "ensemble" not in meta:
        return None
    return EnsembleParams(**meta["ensemble"])


def read_design_csv(path, response: str | int = 0) -> tuple[RegressionProblem, list[str]]:
    """User data: one column is the response, the rest are predictors.

    A header row is detected when its first field does not parse as a float.
    ``response`` is a column name or index.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(ln for ln in fh if not ln.startswith("#")) if r]
    if not rows:
        raise ParameterError(f"{path} is empty")
    try:
        float(rows[0][0])
        names = [f"c{j}" for j in range(len(rows[0]))]
    except ValueError:
        names, rows = [s.strip() for s in rows[0]], rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in rows])
    except ValueError as e:
        raise ParameterError(f"{path}: non-numeric or ragged data ({e})") from None
    if isinstance(response, str) and not response.lstrip("-").isdigit():
        if response not in names:
            raise ParameterError(f"response column {response!r} not in {path}")
        j = names.index(response)
    else:
        j = int(response) % data.shape[1]
    y = data[:, j]
    A = np.delete(data, j, axis=1)
    return RegressionProblem(y, A), [n for k, n in enumerate(names) if k != j]
