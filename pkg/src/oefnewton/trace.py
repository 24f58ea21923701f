"""Per-iteration solver records and CSV serialization."""

from __future__ import annotations

import csv
import io
import os
import tempfile

import numpy as np


class SolverTrace:
    """Rows of per-iteration data plus the iterates.

    Certificate columns start with ``cert_`` and hold True, False or None
    (None = not checked).  Columns ending in ``_diag`` are diagnostics computed
    out-of-band with exact derivatives or objective values.
    """

    def __init__(self, solver, problem_name=""):
        self.solver = solver
        self.problem_name = problem_name
        self.rows = []
        self.iterates = []
        self.status = "running"
        self.x_out = None
        self.objective_evals = 0
        self.info = {}

    def add(self, **row):
        row = {"k": len(self.rows), **row}
        if self.rows:
            prev = self.rows[-1]
            for key, val in row.items():
                if key.startswith("n_") and key in prev and val < prev[key]:
                    raise AssertionError(f"counter {key} decreased")
        self.rows.append(row)
        return row

    @property
    def iterations(self):
        """Number of completed steps (rows that moved the iterate)."""
        return self.info.get("iterations", len(self.rows))

    def column(self, name):
        return [r.get(name) for r in self.rows]

    def certificate_columns(self):
        cols = []
        for r in self.rows:
            for key in r:
                if key.startswith("cert_") and key not in cols:
                    cols.append(key)
        return cols

    def first_failure(self):
        """(k, column) of the first failed certificate, or None."""
        for r in self.rows:
            for key, val in r.items():
                if key.startswith("cert_") and val is False:
                    return r["k"], key
        return None

    def certificate_counts(self):
        counts = {}
        for col in self.certificate_columns():
            vals = [r.get(col) for r in self.rows if r.get(col) is not None]
            counts[col] = {"checked": len(vals), "passed": int(sum(bool(v) for v in vals))}
        return counts

    def all_passed(self):
        return self.first_failure() is None

    def to_csv(self):
        cols = []
        for r in self.rows:
            for key in r:
                if key not in cols:
                    cols.append(key)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_fmt(r.get(c)) for c in cols])
        return buf.getvalue()

    def write_csv(self, path):
        atomic_write(path, self.to_csv())


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def fitted_order(errors, floor=1e-13, pairs=3):
    """Slope of log e_{k+1} against log e_k over the last ``pairs`` usable pairs.

    Returns None when fewer than ``pairs`` pairs have e_k > floor and e_{k+1} > 0.
    """
    usable = [(a, b) for a, b in zip(errors[:-1], errors[1:]) if a > floor and b > 0]
    if len(usable) < pairs:
        return None
    usable = usable[-pairs:]
    lx = np.log([a for a, _ in usable])
    ly = np.log([b for _, b in usable])
    slope, _ = np.polyfit(lx, ly, 1)
    return float(slope)
