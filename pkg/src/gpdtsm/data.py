"""CSV ingestion, training-window standardization and an access-audited panel view."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass

import numpy as np

from .errors import DataError

ALLOWED_MATURITIES = (1, 3, 6, 12, 24, 36, 48, 60, 84, 120)


@dataclass
class PanelData:
    dates: list  # ISO strings
    yields: np.ndarray  # monthly decimals, (T+1, J)
    maturities: np.ndarray
    macros: np.ndarray | None  # raw, (T+1,)
    macro_name: str | None = None

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    def index_of(self, date: str) -> int:
        """Index of the last date on or before ``date``."""
        d = _parse_date(date, "config", 0)
        idx = [i for i, s in enumerate(self.dates) if dt.date.fromisoformat(s) <= d]
        if not idx:
            raise DataError(f"date {date} precedes the panel start {self.dates[0]}")
        return idx[-1]


def _parse_date(text, source, row):
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise DataError(f"{source} row {row}: {text!r} is not an ISO date") from None


def _next_month(d: dt.date) -> tuple:
    return (d.year + (d.month == 12), d.month % 12 + 1)


def _read(path, source):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {source} file {path}: {exc}") from None
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise DataError(f"{source} file {path} has no data rows")
    return rows


def _check_dates(dates, source):
    for i in range(1, len(dates)):
        if (dates[i].year, dates[i].month) != _next_month(dates[i - 1]):
            raise DataError(f"{source} row {i + 1}: date {dates[i].isoformat()} does not follow "
                            f"{dates[i - 1].isoformat()} by one month")


def _numeric(text, source, row, col):
    try:
        x = float(text)
    except ValueError:
        raise DataError(f"{source} row {row}, column {col!r}: {text!r} is not numeric") from None
    if not np.isfinite(x):
        raise DataError(f"{source} row {row}, column {col!r}: non-finite value")
    return x


def read_yields(path, maturities=None):
    """Parse ``date,m1,m3,...``; returns ``(dates, annualized yields, maturities)``."""
    rows = _read(path, "yields")
    head = [h.strip() for h in rows[0]]
    if head[0] != "date":
        raise DataError(f"yields header must start with 'date', got {head[0]!r}")
    mats = []
    for h in head[1:]:
        if not (h.startswith("m") and h[1:].isdigit()) or int(h[1:]) not in ALLOWED_MATURITIES:
            raise DataError(f"yields header column {h!r} is not one of "
                            f"{['m%d' % m for m in ALLOWED_MATURITIES]}")
        mats.append(int(h[1:]))
    if mats != sorted(set(mats)):
        raise DataError("yields maturities must be strictly increasing")
    dates, Y = [], []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(head):
            raise DataError(f"yields row {i}: expected {len(head)} cells, got {len(r)}")
        dates.append(_parse_date(r[0], "yields", i))
        Y.append([_numeric(c, "yields", i, head[k + 1]) for k, c in enumerate(r[1:])])
    _check_dates(dates, "yields")
    Y = np.array(Y)
    if maturities is not None:
        want = [int(m) for m in maturities]
        absent = [m for m in want if m not in mats]
        if absent:
            raise DataError(f"configured maturities {absent} are not in the yields file")
        cols = [mats.index(m) for m in want]
        Y, mats = Y[:, cols], want
    return dates, Y, np.array(mats)


def read_macro(path, name=None):
    rows = _read(path, "macros")
    head = [h.strip() for h in rows[0]]
    if len(head) != 2 or head[0] != "date":
        raise DataError(f"macros header must be 'date,<macro_name>', got {','.join(head)!r}")
    if name is not None and head[1] != name:
        raise DataError(f"macros column is {head[1]!r}, config names {name!r}")
    dates, x = [], []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != 2:
            raise DataError(f"macros row {i}: expected 2 cells, got {len(r)}")
        dates.append(_parse_date(r[0], "macros", i))
        x.append(_numeric(r[1], "macros", i, head[1]))
    _check_dates(dates, "macros")
    return dates, np.array(x), head[1]


def load_panel(yields_csv, macros_csv=None, maturities=None, macro_name=None) -> PanelData:
    """Validated panel in model units (monthly decimal yields, raw macro).

    The macro file must cover exactly the yields dates.
    """
    dates, Y, mats = read_yields(yields_csv, maturities)
    macros, name = None, None
    if macros_csv is not None:
        mdates, x, name = read_macro(macros_csv, macro_name)
        if mdates != dates:
            for i, (a, b) in enumerate(zip(dates, mdates), start=2):
                if a != b:
                    raise DataError(f"row {i}: yields date {a.isoformat()} vs macros date {b.isoformat()}")
            raise DataError(f"yields have {len(dates)} dates, macros {len(mdates)}")
        macros = x
    return PanelData([d.isoformat() for d in dates], Y / 12.0, mats, macros, name)


@dataclass
class StandardizationMeta:
    mean: float
    sd: float
    applied: bool

    @classmethod
    def fit(cls, macro_train, apply: bool) -> StandardizationMeta:
        x = np.asarray(macro_train, dtype=float)
        sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
        if apply and sd == 0.0:
            raise DataError("macro is constant over the training window; cannot standardize")
        return cls(float(np.mean(x)), sd, apply)

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x - self.mean) / self.sd if self.applied else x


class AuditedPanel:
    """Read access to a panel that logs any look at data dated after the forecast origin.

    The driver moves :attr:`origin` forward as dates are revealed; reads of
    rows beyond it are served (so a bug does not crash the run) but recorded
    in :attr:`violations`.
    """

    def __init__(self, panel: PanelData, origin: int):
        self._panel = panel
        self.origin = int(origin)
        self.violations: list = []

    def _check(self, upto: int, what: str):
        if upto > self.origin:
            self.violations.append((what, int(upto), self.origin))

    def reveal(self, t: int) -> None:
        self.origin = max(self.origin, int(t))

    @property
    def maturities(self) -> np.ndarray:
        return self._panel.maturities

    @property
    def dates(self) -> list:
        return self._panel.dates[: self.origin + 1]

    def yields(self, upto: int) -> np.ndarray:
        self._check(upto, "yields")
        return self._panel.yields[: upto + 1]

    def macros(self, upto: int) -> np.ndarray | None:
        self._check(upto, "macros")
        m = self._panel.macros
        return None if m is None else m[: upto + 1]
