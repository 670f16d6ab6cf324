"""Dataset manifests, CSV readers/writers and atomic file output.

File formats
------------
manifest (JSON)::

    {"grid_size": 100,
     "studies": [{"label": "t", "role": "target",
                  "covariates": "t_x.csv", "responses": "t_q.csv",
                  "response_kind": "quantile_grid", "support": [0, 1]}, ...]}

Relative paths resolve against the manifest's directory. ``support`` is
optional. ``grid_size`` is only needed when no study supplies quantile
grids.

covariates CSV: a header row, then one numeric row per unit. An optional
leading ``unit_id`` column gives the keys used by sample files; without it
units are numbered ``0..n-1`` in file order.

quantile-grid CSV: a header row, then one row of ``M`` values per unit.
Column ``j`` is the quantile at ``(j + 0.5) / M``; data on other
probability levels must be resampled first.

samples CSV (long format): header ``unit_id,value`` and one observation
per line.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, InvalidArgument
from .study import Study
from .wasserstein import make_grid

QUANTILE_KIND = "quantile_grid"
SAMPLES_KIND = "samples"
MONOTONE_TOL = 1e-9


@dataclass(frozen=True)
class StudyDescriptor:
    label: str
    role: str
    covariates_path: Path
    responses_path: Path
    response_kind: str = QUANTILE_KIND
    lo: float = -math.inf
    hi: float = math.inf


@dataclass(frozen=True)
class DatasetManifest:
    studies: tuple
    grid_size: int | None = None
    path: Path | None = None

    @property
    def target(self) -> StudyDescriptor:
        return next(s for s in self.studies if s.role == "target")

    @property
    def sources(self) -> list:
        return [s for s in self.studies if s.role == "source"]


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError("manifest not found", path) from None
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(raw, dict) or not isinstance(raw.get("studies"), list):
        raise DataError("manifest must be an object with a 'studies' list", path)
    base = path.parent
    studies = []
    for i, entry in enumerate(raw["studies"]):
        try:
            kind = entry.get("response_kind", QUANTILE_KIND)
            if kind not in (QUANTILE_KIND, SAMPLES_KIND):
                raise DataError(f"study {i}: unknown response_kind {kind!r}", path)
            role = entry["role"]
            if role not in ("target", "source"):
                raise DataError(f"study {i}: role must be 'target' or 'source'", path)
            lo, hi = -math.inf, math.inf
            if entry.get("support") is not None:
                lo, hi = (float(v) for v in entry["support"])
                if not lo <= hi:
                    raise DataError(f"study {i}: support must satisfy lo <= hi", path)
            studies.append(StudyDescriptor(
                label=str(entry.get("label", f"study{i}")), role=role,
                covariates_path=base / entry["covariates"],
                responses_path=base / entry["responses"],
                response_kind=kind, lo=lo, hi=hi))
        except KeyError as exc:
            raise DataError(f"study {i}: missing field {exc.args[0]!r}", path) from None
        except (TypeError, ValueError) as exc:
            raise DataError(f"study {i}: {exc}", path) from None
    n_target = sum(s.role == "target" for s in studies)
    if n_target != 1:
        raise DataError(f"manifest must list exactly one target study, found {n_target}", path)
    grid_size = raw.get("grid_size")
    if grid_size is not None and (not isinstance(grid_size, int) or grid_size < 2):
        raise DataError("grid_size must be an integer >= 2", path)
    return DatasetManifest(tuple(studies), grid_size, path)


def _rows(path: Path):
    """Yield ``(line_number, cells)`` for every nonblank CSV row."""
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise DataError("file not found", path) from None
    with fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            if row and any(c.strip() for c in row):
                yield i, [c.strip() for c in row]


def _floats(cells, path, line) -> list[float]:
    try:
        vals = [float(c) for c in cells]
    except ValueError:
        raise DataError(f"non-numeric value in row {cells!r}", path, line) from None
    if not all(math.isfinite(v) for v in vals):
        raise DataError("non-finite value", path, line)
    return vals


def read_covariates(path) -> tuple[np.ndarray, list[str], list[str] | None]:
    """Return ``(X, column_names, unit_ids)``; ``unit_ids`` is None without a key column."""
    path = Path(path)
    rows = list(_rows(path))
    if not rows:
        raise DataError("empty covariate file", path)
    header = rows[0][1]
    keyed = header[0] == "unit_id"
    names = header[1:] if keyed else header
    if not names:
        raise DataError("no covariate columns", path, rows[0][0])
    X, ids = [], []
    for line, cells in rows[1:]:
        if len(cells) != len(header):
            raise DataError(f"expected {len(header)} columns, found {len(cells)}", path, line)
        if keyed:
            ids.append(cells[0])
            cells = cells[1:]
        X.append(_floats(cells, path, line))
    if not X:
        raise DataError("no data rows", path)
    if keyed and len(set(ids)) != len(ids):
        raise DataError("duplicate unit_id values", path)
    return np.array(X), names, ids if keyed else None


def read_quantile_grid(path) -> np.ndarray:
    """Read an ``(n, M)`` quantile matrix, rejecting non-monotone rows.

    Violations up to ``1e-9`` are treated as rounding noise and removed by a
    running maximum.
    """
    path = Path(path)
    rows = list(_rows(path))
    if len(rows) < 2:
        raise DataError("quantile file needs a header and at least one row", path)
    M = len(rows[0][1])
    Q = []
    for line, cells in rows[1:]:
        if len(cells) != M:
            raise DataError(f"ragged row: expected {M} values, found {len(cells)}", path, line)
        q = np.array(_floats(cells, path, line))
        drops = np.diff(q)
        if np.any(drops < -MONOTONE_TOL):
            j = int(np.flatnonzero(drops < -MONOTONE_TOL)[0])
            raise DataError(
                f"quantile row {line - 1} is not monotone: column {j} = {q[j]!r} "
                f"> column {j + 1} = {q[j + 1]!r}", path, line)
        Q.append(np.maximum.accumulate(q))
    if M < 2:
        raise DataError("quantile grids need at least 2 columns", path)
    return np.array(Q)


def read_samples(path, unit_ids: Sequence[str]) -> list[np.ndarray]:
    path = Path(path)
    rows = list(_rows(path))
    if not rows or [c.lower() for c in rows[0][1]] != ["unit_id", "value"]:
        raise DataError("samples file must start with the header 'unit_id,value'", path)
    known = {u: i for i, u in enumerate(unit_ids)}
    bucket = defaultdict(list)
    for line, cells in rows[1:]:
        if len(cells) != 2:
            raise DataError(f"expected 2 columns, found {len(cells)}", path, line)
        if cells[0] not in known:
            raise DataError(f"unknown unit_id {cells[0]!r}", path, line)
        bucket[known[cells[0]]].extend(_floats(cells[1:], path, line))
    missing = [u for u, i in known.items() if not bucket[i]]
    if missing:
        raise DataError(f"no observations for unit(s) {missing[:5]}", path)
    return [np.array(bucket[i]) for i in range(len(unit_ids))]


def load_dataset(manifest_path) -> tuple[Study, list[Study]]:
    """Load the target and source studies described by a manifest.

    Sample-mode studies come back with their raw samples; the transfer
    functions convert them to empirical quantile functions on demand.
    """
    manifest = read_manifest(manifest_path)
    loaded = []
    grid = make_grid(manifest.grid_size) if manifest.grid_size else None
    for d in manifest.studies:
        X, _, ids = read_covariates(d.covariates_path)
        if d.response_kind == QUANTILE_KIND:
            Q = read_quantile_grid(d.responses_path)
            if Q.shape[0] != X.shape[0]:
                raise DataError(
                    f"{Q.shape[0]} response rows for {X.shape[0]} covariate rows in {d.covariates_path}",
                    d.responses_path)
            if grid is None:
                grid = make_grid(Q.shape[1])
            if Q.shape[1] != grid.M:
                raise DataError(f"grid has {Q.shape[1]} columns, expected {grid.M}", d.responses_path)
            try:
                study = Study(X, quantiles=Q, grid=grid, label=d.label, role=d.role, lo=d.lo, hi=d.hi)
            except InvalidArgument as exc:
                raise DataError(str(exc), d.responses_path) from None
        else:
            ids = ids if ids is not None else [str(i) for i in range(X.shape[0])]
            samples = read_samples(d.responses_path, ids)
            study = Study(X, samples=tuple(samples), label=d.label, role=d.role, lo=d.lo, hi=d.hi)
        loaded.append(study)
    ps = {s.p for s in loaded}
    if len(ps) > 1:
        raise DataError(f"studies disagree on the number of covariates: {sorted(ps)}", manifest.path)
    target = next(s for s in loaded if s.role == "target")
    return target, [s for s in loaded if s.role == "source"]


# ---------------------------------------------------------------------------
# writers


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    return repr(float(v))


def csv_text(header: Sequence[str], rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(c if isinstance(c, str) else _fmt(c) for c in row))
    return "\n".join(lines) + "\n"


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def grid_header(M: int) -> list[str]:
    return [f"q{j}" for j in range(M)]


def write_dataset(target: Study, sources: Sequence[Study], directory) -> Path:
    """Serialize studies to CSV files plus a manifest; returns the manifest path."""
    directory = Path(directory)
    entries = []
    grid_size = None
    for i, s in enumerate([target, *sources]):
        stem = f"study{i}"
        names = [f"x{j}" for j in range(s.p)]
        entry = {"label": s.label, "role": s.role, "covariates": f"{stem}_covariates.csv"}
        if math.isfinite(s.lo) or math.isfinite(s.hi):
            entry["support"] = [s.lo, s.hi]
        if s.sample_mode:
            ids = [str(k) for k in range(s.n)]
            atomic_write_text(directory / entry["covariates"],
                              csv_text(["unit_id", *names], ([u, *x] for u, x in zip(ids, s.covariates))))
            rows = ((u, v) for u, ys in zip(ids, s.samples) for v in ys)
            entry.update(responses=f"{stem}_samples.csv", response_kind=SAMPLES_KIND)
            atomic_write_text(directory / entry["responses"], csv_text(["unit_id", "value"], rows))
        else:
            grid_size = s.grid.M
            atomic_write_text(directory / entry["covariates"], csv_text(names, s.covariates))
            entry.update(responses=f"{stem}_quantiles.csv", response_kind=QUANTILE_KIND)
            atomic_write_text(directory / entry["responses"], csv_text(grid_header(s.grid.M), s.quantiles))
        entries.append(entry)
    manifest = {"studies": entries}
    if grid_size is not None:
        manifest["grid_size"] = grid_size
    path = directory / "manifest.json"
    atomic_write_text(path, json_text(manifest))
    return path
