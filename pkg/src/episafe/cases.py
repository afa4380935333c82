"""Recorded case data: ingestion, validation and under-reporting correction.

Confirmed-case counts are cumulative and measured with delay; during
high-positivity periods they also under-count actual infections.  The
scaling here inflates the cumulative series by (positivity / reference)
raised to a damping exponent (cube root by default, to scale less
aggressively), with the reference chosen as the series minimum so the
best-surveilled period is left untouched.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "CaseRecord",
    "CaseDataError",
    "ScaledCase",
    "ScaledSeries",
    "ingest_cases",
    "scale_cases",
    "day_offsets",
]

_COLUMNS = ("date", "cumulative_confirmed", "positivity_rate", "mobility_index")


class CaseDataError(ValueError):
    def __init__(self, message: str, origin: str = "", line: int | None = None):
        where = origin if line is None else f"{origin}:{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line


@dataclass(frozen=True)
class CaseRecord:
    """One day of surveillance data.

    cumulative_confirmed counts everyone confirmed infected up to the date
    (actively infected plus recovered); positivity_rate is positives per
    total tests in (0, 1]; mobility_index is a dimensionless activity
    fraction.  The optional fields are None when the source lacks them.
    """

    date: dt.date
    cumulative_confirmed: float
    positivity_rate: float | None = None
    mobility_index: float | None = None

    def __post_init__(self) -> None:
        if self.cumulative_confirmed < 0.0:
            raise ValueError("cumulative_confirmed must be non-negative")
        if self.positivity_rate is not None and not (0.0 < self.positivity_rate <= 1.0):
            raise ValueError("positivity_rate must lie in (0, 1]")


def ingest_cases(path: str | Path) -> list[CaseRecord]:
    """Read and validate a case-data CSV.

    Expected header: date,cumulative_confirmed[,positivity_rate]
    [,mobility_index].  Dates must be ISO-8601 and strictly increasing;
    cumulative counts must be non-decreasing.  Offending rows are reported
    by line number.
    """
    path = Path(path)
    origin = str(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CaseDataError(f"cannot read case data: {exc}", origin) from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise CaseDataError("empty file", origin)
    header = tuple(h.strip() for h in rows[0])
    if header not in {_COLUMNS[:k] for k in (2, 3, 4)}:
        raise CaseDataError(
            f"unexpected header {','.join(header)!r}; expected "
            "date,cumulative_confirmed[,positivity_rate][,mobility_index]",
            origin,
            1,
        )
    records: list[CaseRecord] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise CaseDataError(
                f"expected {len(header)} fields, got {len(row)}", origin, lineno
            )
        cells = dict(zip(header, (cell.strip() for cell in row)))
        try:
            date = dt.date.fromisoformat(cells["date"])
        except ValueError:
            raise CaseDataError(
                f"bad date {cells['date']!r} (need ISO-8601)", origin, lineno
            ) from None
        try:
            cumulative = float(cells["cumulative_confirmed"])
            positivity = (
                float(cells["positivity_rate"])
                if cells.get("positivity_rate") not in (None, "")
                else None
            )
            mobility = (
                float(cells["mobility_index"])
                if cells.get("mobility_index") not in (None, "")
                else None
            )
        except ValueError as exc:
            raise CaseDataError(f"bad numeric field: {exc}", origin, lineno) from None
        try:
            record = CaseRecord(date, cumulative, positivity, mobility)
        except ValueError as exc:
            raise CaseDataError(str(exc), origin, lineno) from exc
        if records:
            if record.date <= records[-1].date:
                raise CaseDataError(
                    f"dates must be strictly increasing "
                    f"({record.date} after {records[-1].date})",
                    origin,
                    lineno,
                )
            if record.cumulative_confirmed < records[-1].cumulative_confirmed:
                raise CaseDataError(
                    f"cumulative count decreases "
                    f"({record.cumulative_confirmed:g} after "
                    f"{records[-1].cumulative_confirmed:g})",
                    origin,
                    lineno,
                )
        records.append(record)
    if not records:
        raise CaseDataError("no data rows", origin)
    return records


@dataclass(frozen=True)
class ScaledCase:
    date: dt.date
    cumulative_confirmed: float
    positivity_rate: float
    scaled_confirmed: float


@dataclass(frozen=True)
class ScaledSeries:
    """Under-reporting-corrected series plus the correction metadata."""

    records: tuple[ScaledCase, ...]
    exponent: float
    reference_positivity: float

    def metadata(self) -> dict:
        return {
            "formula": "scaled = cumulative * (positivity / reference) ** exponent",
            "exponent": self.exponent,
            "reference_positivity": self.reference_positivity,
            "reference_rule": "series minimum (best-surveilled period unchanged)",
        }


def scale_cases(records: list[CaseRecord], exponent: float = 1.0 / 3.0) -> ScaledSeries:
    """Inflate cumulative counts where test positivity was high.

    Every record needs a positivity_rate.  The reference is the series
    minimum, so scaling only inflates under-reported periods and the
    best-surveilled day keeps its raw count.
    """
    if not records:
        raise CaseDataError("no records to scale")
    for k, r in enumerate(records):
        if r.positivity_rate is None:
            raise CaseDataError(
                f"record {k} ({r.date}) has no positivity_rate; scaling needs it"
            )
    reference = min(r.positivity_rate for r in records)
    scaled = tuple(
        ScaledCase(
            date=r.date,
            cumulative_confirmed=r.cumulative_confirmed,
            positivity_rate=r.positivity_rate,
            scaled_confirmed=r.cumulative_confirmed
            * (r.positivity_rate / reference) ** exponent,
        )
        for r in records
    )
    return ScaledSeries(scaled, exponent, reference)


def day_offsets(records: list[CaseRecord], origin: dt.date | None = None) -> np.ndarray:
    """Dates as float day offsets from origin (default: first record)."""
    if not records:
        return np.empty(0)
    base = origin if origin is not None else records[0].date
    return np.array([float((r.date - base).days) for r in records])
