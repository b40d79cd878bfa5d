"""CSV ingestion and emission for count panels and loss samples.

counts: ``bank_id,year,count,exposure`` (``cell_id`` accepted for
``bank_id``; ``exposure`` optional, default 1). losses:
``cell_id,year,amount``. Floats are written with 12 significant digits
so emit -> ingest -> emit is byte-stable.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .empirical_bayes import BankSeries, CountPanel
from .errors import ValidationError

COUNT_COLUMNS = ("bank_id", "year", "count", "exposure")
LOSS_COLUMNS = ("cell_id", "year", "amount")


def fmt(x) -> str:
    """12-significant-digit text for a number; integral values print without a point."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.12g" % x


@dataclass
class LossSample:
    cell_id: str
    years: np.ndarray
    amounts: np.ndarray
    n_below_threshold: int = 0


def _reader(path):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        fh.close()
        raise ValidationError(f"{path}: missing header row")
    return fh, reader, [h.strip() for h in header]


def _number(text, path, line, column, integer=False):
    try:
        v = float(text)
    except ValueError:
        raise ValidationError(f"{path}:{line}: {column} {text!r} is not a number") from None
    if not math.isfinite(v):
        raise ValidationError(f"{path}:{line}: {column} must be finite")
    if integer and v != math.floor(v):
        raise ValidationError(f"{path}:{line}: {column} {text!r} is not an integer")
    return v


def _year(text, path, line):
    v = _number(text, path, line, "year")
    return int(v) if v == math.floor(v) else v


def ingest_counts(path, prescaled: bool = False) -> CountPanel:
    """Read a count panel; banks keep first-seen order, records sorted by year.

    With ``prescaled`` the ``count`` column holds standardised frequencies
    (non-negative reals) instead of whole counts.
    """
    fh, reader, header = _reader(path)
    with fh:
        if "bank_id" not in header and "cell_id" in header:
            header = ["bank_id" if h == "cell_id" else h for h in header]
        for col in ("bank_id", "year", "count"):
            if col not in header:
                raise ValidationError(f"{path}: missing column {col!r}")
        idx = {c: header.index(c) for c in COUNT_COLUMNS if c in header}
        records = []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            count = _number(row[idx["count"]], path, line, "count", integer=not prescaled)
            if count < 0:
                raise ValidationError(f"{path}:{line}: count must be non-negative, got {count:g}")
            exposure = 1.0
            if "exposure" in idx:
                exposure = _number(row[idx["exposure"]], path, line, "exposure")
                if exposure <= 0:
                    raise ValidationError(f"{path}:{line}: exposure must be positive")
            records.append((row[idx["bank_id"]].strip(), _year(row[idx["year"]], path, line),
                            count, exposure))
    if not records:
        warnings.warn(f"{path}: no count records", stacklevel=2)
        return CountPanel([], prescaled)
    return CountPanel.from_records(records, prescaled)


def ingest_losses(path, threshold: Optional[float] = None) -> Dict[str, LossSample]:
    """Read losses per cell, in file order within each cell.

    With a Pareto ``threshold`` L, losses below L are dropped and counted in
    ``n_below_threshold``.
    """
    fh, reader, header = _reader(path)
    with fh:
        for col in LOSS_COLUMNS:
            if col not in header:
                raise ValidationError(f"{path}: missing column {col!r}")
        idx = {c: header.index(c) for c in LOSS_COLUMNS}
        cells: Dict[str, list] = {}
        below: Dict[str, int] = {}
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            amount = _number(row[idx["amount"]], path, line, "amount")
            if amount <= 0:
                raise ValidationError(f"{path}:{line}: amount must be positive, got {amount:g}")
            cid = row[idx["cell_id"]].strip()
            cells.setdefault(cid, [])
            below.setdefault(cid, 0)
            if threshold is not None and amount < threshold:
                below[cid] += 1
                continue
            cells[cid].append((_year(row[idx["year"]], path, line), amount))
    if not cells:
        warnings.warn(f"{path}: no loss records", stacklevel=2)
    out = {}
    for cid, rows in cells.items():
        years = np.array([r[0] for r in rows])
        amounts = np.array([r[1] for r in rows], dtype=float)
        out[cid] = LossSample(cid, years, amounts, below[cid])
    return out


def emit_counts(panel: CountPanel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COUNT_COLUMNS)
        for bank in panel.banks:
            for y, c, v in zip(bank.years, bank.counts, bank.exposures):
                w.writerow([bank.bank_id, fmt(y), fmt(c), fmt(v)])


def emit_losses(samples: Dict[str, LossSample], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for s in samples.values():
            for y, a in zip(s.years, s.amounts):
                w.writerow([s.cell_id, fmt(y), fmt(a)])


def write_table(path, header: List[str], rows) -> None:
    """CSV with a header row and numbers formatted by :func:`fmt`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
