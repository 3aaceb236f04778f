"""CSV point files and JSON density/model documents."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .densities import Domain, GaussianMixture
from .quadrature import DEFAULT_RESOLUTION


class CsvFormatError(ValueError):
    pass


def write_points_csv(path, points, errors=None) -> None:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if errors is None:
            w.writerow(["x", "y"])
            w.writerows([repr(float(x)), repr(float(y))] for x, y in pts)
        else:
            w.writerow(["x", "y", "error"])
            w.writerows([repr(float(x)), repr(float(y)), repr(float(e))]
                        for (x, y), e in zip(pts, np.asarray(errors, dtype=float)))


def read_points_csv(path):
    """Read ``x,y[,error]`` rows; returns ``(points, errors_or_None)``.

    :raises CsvFormatError: naming the offending line for malformed rows.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["x", "y"]:
        raise CsvFormatError(f"{path}: line 1: expected header starting with 'x,y', got {','.join(header)}")
    has_err = "error" in header
    cols = [header.index("x"), header.index("y")] + ([header.index("error")] if has_err else [])
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise CsvFormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values.append([float(row[c]) for c in cols])
        except ValueError:
            raise CsvFormatError(f"{path}: line {lineno}: non-numeric value in {','.join(row)}") from None
    arr = np.array(values, dtype=float).reshape(-1, len(cols))
    return arr[:, :2], (arr[:, 2] if has_err else None)


def load_json(path):
    return json.loads(Path(path).read_text())


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_density(doc: dict, resolution: int = DEFAULT_RESOLUTION):
    """A sampling density from JSON: a mixture document or ``{"type": "uniform", "domain": ...}``.

    Returns ``(pdf_callable, domain)``.
    """
    if doc.get("type") == "uniform":
        dom = Domain.from_dict(doc["domain"]) if "domain" in doc else Domain()
        return dom.pdf, dom
    g = GaussianMixture.from_dict(doc, resolution)
    return g.pdf, g.domain
