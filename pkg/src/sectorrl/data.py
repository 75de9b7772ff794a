"""Sector-level market data: file ingestion, validation, and synthetic panels.

A panel holds aligned daily close prices and capital-share fractions for S
sectors over T days. Input files are UTF-8 delimited text with a header row
and columns ``date`` (ISO-8601), ``sector_id``, ``close``, ``cap_share``.
Sectors missing a day inside the common date range are forward-filled (never
interpolated, to avoid lookahead) and the fills are flagged in a load report
written to standard error.
"""
from __future__ import annotations

import csv
import sys
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

from .seeding import make_rng

#: longest indicator window (50) plus the observation sequence length (10)
MIN_HISTORY_DAYS = 60

#: fraction of total capitalization carried by classified sectors in synthetic
#: panels; the remainder models unclassified firms so daily sums stay below 1
CLASSIFIED_TOTAL = 0.97

#: share assigned to the leading sector in the deterministic-leader regime
LEADER_SHARE = 0.5

#: price-ratio lookback defining the leader; mirrored by the momentum-5 feature
LEADER_LAG = 5

CAP_SUM_TOLERANCE = 1e-6

DEFAULT_TRAIN_START = date(2007, 4, 23)
DEFAULT_TRAIN_END = date(2019, 12, 31)
DEFAULT_TEST_START = date(2020, 1, 1)
DEFAULT_TEST_END = date(2025, 6, 13)


class DataError(ValueError):
    pass


class ParseError(DataError):
    pass


class DuplicateKeyError(DataError):
    pass


class ValidationError(DataError):
    pass


class InsufficientHistoryError(DataError):
    pass


@dataclass
class SectorPanel:
    """Aligned per-sector price and capital-share series.

    ``close`` and ``cap_share`` are (S, T) float arrays; column t belongs to
    ``dates[t]``. Read-only after construction.
    """

    dates: list[date]
    sector_ids: list[str]
    close: np.ndarray
    cap_share: np.ndarray

    @property
    def n_sectors(self) -> int:
        return len(self.sector_ids)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def index_of(self, day: date) -> int:
        """Index of the first date >= day."""
        lo, hi = 0, len(self.dates)
        while lo < hi:
            mid = (lo + hi) // 2
            if self.dates[mid] < day:
                lo = mid + 1
            else:
                hi = mid
        if lo == len(self.dates):
            raise ValidationError(f"date {day} is after the panel's last day {self.dates[-1]}")
        return lo

    def last_index_at_or_before(self, day: date) -> int:
        idx = 0
        for i, d in enumerate(self.dates):
            if d <= day:
                idx = i
            else:
                break
        if self.dates[0] > day:
            raise ValidationError(f"date {day} is before the panel's first day {self.dates[0]}")
        return idx

    def validate(self) -> None:
        s, t = self.close.shape
        if s != len(self.sector_ids) or t != len(self.dates) or self.cap_share.shape != (s, t):
            raise ValidationError(
                f"misaligned panel: {s} x {t} close, {self.cap_share.shape} cap_share, "
                f"{len(self.sector_ids)} sectors, {len(self.dates)} dates"
            )
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValidationError("dates are not strictly increasing")
        if not np.isfinite(self.close).all() or (self.close <= 0).any():
            raise ValidationError("close prices must be finite and positive")
        if not np.isfinite(self.cap_share).all() or (self.cap_share < 0).any() or (self.cap_share > 1).any():
            raise ValidationError("cap_share values must lie in [0, 1]")
        day_sums = self.cap_share.sum(axis=0)
        worst = float(day_sums.max(initial=0.0))
        if worst > 1.0 + CAP_SUM_TOLERANCE:
            raise ValidationError(f"cap_share columns must sum to <= 1 + {CAP_SUM_TOLERANCE}, got {worst}")
        if t < MIN_HISTORY_DAYS:
            raise InsufficientHistoryError(
                f"panel has {t} common dates, need at least {MIN_HISTORY_DAYS} "
                "(longest indicator window plus sequence length)"
            )


@dataclass
class SplitSpec:
    """Temporal train/test split over a panel's date axis."""

    train_start: date = DEFAULT_TRAIN_START
    train_end: date = DEFAULT_TRAIN_END
    test_start: date = DEFAULT_TEST_START
    test_end: date = DEFAULT_TEST_END

    def __post_init__(self):
        if self.train_end < self.train_start or self.test_end < self.test_start:
            raise ValidationError("split ranges must be non-empty")
        if self.train_end >= self.test_start:
            raise ValidationError(
                f"train_end {self.train_end} must precede test_start {self.test_start}"
            )

    def train_indices(self, panel: SectorPanel) -> tuple[int, int]:
        return self._range(panel, self.train_start, self.train_end, "train")

    def test_indices(self, panel: SectorPanel) -> tuple[int, int]:
        return self._range(panel, self.test_start, self.test_end, "test")

    def _range(self, panel, start, end, name) -> tuple[int, int]:
        lo = panel.index_of(start)
        hi = panel.last_index_at_or_before(end)
        if hi < lo:
            raise ValidationError(f"{name} range [{start}, {end}] contains no panel dates")
        return lo, hi


@dataclass
class LoadReport:
    path: str
    n_rows: int = 0
    n_sectors: int = 0
    n_days: int = 0
    dropped_out_of_range: int = 0
    fills: dict[str, int] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"load-report path={self.path}",
            f"load-report rows={self.n_rows} sectors={self.n_sectors} days={self.n_days}",
            f"load-report dropped_out_of_range={self.dropped_out_of_range}",
        ]
        for sector in sorted(self.fills):
            lines.append(f"load-report forward-filled sector={sector} days={self.fills[sector]}")
        return "\n".join(lines)


DEFAULT_SCHEMA = {"date": "date", "sector_id": "sector_id", "close": "close", "cap_share": "cap_share"}


def load_panel(path, schema: dict | None = None, report_stream=None) -> SectorPanel:
    """Read a delimited-text file into a validated, date-aligned panel.

    ``schema`` maps the canonical column names to the file's column names.
    The load report goes to ``report_stream`` (defaults to standard error;
    pass a falsy stream to silence it).
    """
    cols = dict(DEFAULT_SCHEMA)
    cols.update(schema or {})
    report = LoadReport(path=str(path))
    per_sector: dict[str, dict[date, tuple[float, float]]] = {}

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file, expected a header row")
        missing = [cols[k] for k in DEFAULT_SCHEMA if cols[k] not in reader.fieldnames]
        if missing:
            raise ParseError(f"{path}: header is missing columns {missing}")
        for row in reader:
            line = reader.line_num
            try:
                day = date.fromisoformat((row[cols["date"]] or "").strip())
                sector = (row[cols["sector_id"]] or "").strip()
                close = float(row[cols["close"]])
                cap = float(row[cols["cap_share"]])
            except (TypeError, ValueError, KeyError) as err:
                raise ParseError(f"{path}:{line}: malformed row ({err})") from None
            if not sector:
                raise ParseError(f"{path}:{line}: empty sector_id")
            if not np.isfinite(close) or close <= 0:
                raise ValidationError(f"{path}:{line}: non-positive close {close} for {sector}")
            series = per_sector.setdefault(sector, {})
            if day in series:
                raise DuplicateKeyError(f"{path}:{line}: duplicate (date, sector) = ({day}, {sector})")
            series[day] = (close, cap)
            report.n_rows += 1

    if not per_sector:
        raise ParseError(f"{path}: no data rows")

    sector_ids = sorted(per_sector)
    start = max(min(series) for series in per_sector.values())
    end = min(max(series) for series in per_sector.values())
    if start > end:
        raise ValidationError(f"{path}: sector date ranges do not overlap")
    axis = sorted({d for series in per_sector.values() for d in series if start <= d <= end})
    report.dropped_out_of_range = sum(
        1 for series in per_sector.values() for d in series if d < start or d > end
    )

    s, t = len(sector_ids), len(axis)
    close = np.empty((s, t))
    cap = np.empty((s, t))
    for si, sector in enumerate(sector_ids):
        series = per_sector[sector]
        # seed the forward fill with the sector's last value before the range
        prior = [d for d in series if d < start]
        last = series[max(prior)] if prior else None
        fills = 0
        for ti, day in enumerate(axis):
            if day in series:
                last = series[day]
            else:
                fills += 1
            close[si, ti], cap[si, ti] = last
        if fills:
            report.fills[sector] = fills

    panel = SectorPanel(dates=axis, sector_ids=sector_ids, close=close, cap_share=cap)
    panel.validate()
    report.n_sectors, report.n_days = s, t
    stream = sys.stderr if report_stream is None else report_stream
    if stream:
        print(report.to_text(), file=stream)
    return panel


def write_panel(panel: SectorPanel, path) -> None:
    """Write a panel back to delimited text (round-trips through load_panel)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "sector_id", "close", "cap_share"])
        for ti, day in enumerate(panel.dates):
            for si, sector in enumerate(panel.sector_ids):
                writer.writerow([day.isoformat(), sector,
                                 repr(float(panel.close[si, ti])),
                                 repr(float(panel.cap_share[si, ti]))])


# ---------------------------------------------------------------------------
# synthetic panels


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for a synthetic panel; generation is deterministic per seed."""

    n_sectors: int = 3
    n_days: int = 100
    seed: int = 0
    regime: str = "gbm"  # "gbm" | "deterministic-leader"
    start_date: date = date(2010, 1, 1)

    def __post_init__(self):
        if self.n_sectors < 2 or self.n_days < MIN_HISTORY_DAYS:
            raise ValidationError(
                f"synthetic panel needs >= 2 sectors and >= {MIN_HISTORY_DAYS} days, "
                f"got {self.n_sectors} x {self.n_days}"
            )
        if self.regime not in ("gbm", "deterministic-leader"):
            raise ValidationError(f"unknown regime '{self.regime}'")


def leader_rule(close: np.ndarray, t: int) -> int:
    """The documented deterministic-leader rule.

    The leader announced for day t+1 is the sector with the highest gross
    price ratio close[:, t] / close[:, t - min(5, t)] at day t; ties break to
    the lowest sector index, and day 0 (no history) defaults to sector 0.
    """
    lag = min(LEADER_LAG, t)
    if lag == 0:
        return 0
    return int(np.argmax(close[:, t] / close[:, t - lag]))


def deterministic_leader(panel: SectorPanel, t: int) -> int:
    """Leader of day t+1 computed from the panel at day t."""
    return leader_rule(panel.close, t)


def synth_panel(spec: SynthSpec) -> SectorPanel:
    """Generate a synthetic panel; bit-identical for identical specs.

    ``gbm`` draws geometric-random-walk prices with slowly mixing cap shares.
    ``deterministic-leader`` rotates a price boost through the sectors and
    sets each day's cap shares as a fixed function of the previous day's
    prices (see :func:`leader_rule`), so the next top-1 sector is always
    computable from observable features.
    """
    s, t = spec.n_sectors, spec.n_days
    rng = make_rng(spec.seed, "synth", spec.regime, s, t)
    dates = [spec.start_date + timedelta(days=i) for i in range(t)]

    if spec.regime == "gbm":
        p0 = rng.uniform(20.0, 200.0, size=s)
        drift = rng.normal(2e-4, 2e-4, size=s)
        vol = rng.uniform(0.005, 0.02, size=s)
        steps = drift[:, None] + vol[:, None] * rng.normal(size=(s, t - 1))
        log_close = np.concatenate([np.zeros((s, 1)), np.cumsum(steps, axis=1)], axis=1)
        close = p0[:, None] * np.exp(log_close)
        shares = np.empty((s, t))
        w = rng.dirichlet(5.0 * np.ones(s))
        for ti in range(t):
            if ti:
                w = w * np.exp(0.03 * rng.normal(size=s))
                w = w / w.sum()
            shares[:, ti] = CLASSIFIED_TOTAL * w
    else:
        phase_len = 7
        growth = np.full((s, t - 1), -0.002)
        for ti in range(t - 1):
            growth[(ti // phase_len) % s, ti] = 0.02
        noise = 0.0005 * rng.normal(size=(s, t - 1))
        steps = np.log1p(growth) + noise
        log_close = np.concatenate([np.zeros((s, 1)), np.cumsum(steps, axis=1)], axis=1)
        close = 100.0 * np.exp(log_close)
        shares = np.empty((s, t))
        rest = (CLASSIFIED_TOTAL - LEADER_SHARE) / (s - 1)
        for ti in range(t):
            leader = leader_rule(close, ti - 1) if ti else 0
            shares[:, ti] = rest
            shares[leader, ti] = LEADER_SHARE

    panel = SectorPanel(dates=dates, sector_ids=[f"SEC{i:02d}" for i in range(s)],
                        close=close, cap_share=shares)
    panel.validate()
    return panel
