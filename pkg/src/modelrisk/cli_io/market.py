"""Option-chain slices: CSV ingestion, quote filtering and CSV export."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field, replace
from itertools import groupby
from pathlib import Path

import numpy as np

from ..entropy_dual import PriceBands
from ..errors import EmptyDataset, NoArbitrageViolation, ParseError
from ..measure import DEFAULT_GRID_SIZE, DEFAULT_GRID_WIDTH, PayoffMatrix, ReturnGrid
from ..models import BsParams, SliceContext, bs_delta, bs_implied_vol

log = logging.getLogger(__name__)

COLUMNS = ("date", "expiry", "spot", "rate", "strike", "bid", "ask", "volume")
DAYS_PER_YEAR = 365.0


@dataclass(frozen=True)
class Quote:
    strike: float
    bid: float
    ask: float
    volume: int

    def __post_init__(self):
        if not (math.isfinite(self.strike) and self.strike > 0):
            raise ValueError(f"strike must be positive, got {self.strike}")
        if not (math.isfinite(self.bid) and self.bid >= 0):
            raise ValueError(f"bid must be nonnegative, got {self.bid}")
        if not (math.isfinite(self.ask) and self.ask > 0):
            raise ValueError(f"ask must be positive, got {self.ask}")
        if self.bid > self.ask:
            raise ValueError(f"bid {self.bid} exceeds ask {self.ask}")
        if self.volume < 0:
            raise ValueError(f"volume must be nonnegative, got {self.volume}")

    @property
    def mid(self):
        return 0.5 * (self.bid + self.ask)


@dataclass(frozen=True)
class MarketSlice:
    """Quotes of one expiry observed on one date."""

    date: dt.date
    expiry: dt.date
    spot: float
    rate: float
    quotes: tuple = ()
    _atm: list = field(default_factory=list, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.expiry > self.date:
            raise ValueError(f"expiry {self.expiry} is not after {self.date}")
        if not (math.isfinite(self.spot) and self.spot > 0):
            raise ValueError(f"spot must be positive, got {self.spot}")
        if not math.isfinite(self.rate):
            raise ValueError("rate must be finite")
        object.__setattr__(self, "quotes", tuple(self.quotes))

    @property
    def tau(self):
        """ACT/365 year fraction to expiry."""
        return (self.expiry - self.date).days / DAYS_PER_YEAR

    @property
    def discount(self):
        return math.exp(-self.rate * self.tau)

    @property
    def is_empty(self):
        return not self.quotes

    def context(self):
        return SliceContext(spot=self.spot, discount=self.discount, tau=self.tau, rate=self.rate)

    @property
    def strikes(self):
        return np.array([q.strike for q in self.quotes])

    @property
    def bids(self):
        return np.array([q.bid for q in self.quotes])

    @property
    def asks(self):
        return np.array([q.ask for q in self.quotes])

    @property
    def mids(self):
        return np.array([q.mid for q in self.quotes])

    def with_quotes(self, quotes):
        return replace(self, quotes=tuple(quotes))

    def atm_vol(self):
        """Implied volatility of the mid of the quote closest to the forward."""
        if self._atm:
            return self._atm[0]
        if self.is_empty:
            raise NoArbitrageViolation("slice has no quotes")
        ctx = self.context()
        order = np.argsort(np.abs(np.log(self.strikes / ctx.forward)), kind="stable")
        for i in order:
            q = self.quotes[i]
            try:
                vol = bs_implied_vol(ctx, q.strike, q.mid)
            except NoArbitrageViolation:
                continue
            self._atm.append(vol)
            return vol
        raise NoArbitrageViolation("no quote in the slice has an implied volatility")

    def grid(self, size=DEFAULT_GRID_SIZE, width=DEFAULT_GRID_WIDTH):
        return ReturnGrid.for_volatility(self.atm_vol(), self.tau, size=size, width=width)

    def payoffs(self, grid):
        return PayoffMatrix.calls(grid, self.spot, self.discount, self.strikes)

    def bands(self, grid):
        return PriceBands(self.bids, self.asks, self.payoffs(grid))


@dataclass(frozen=True)
class FilterConfig:
    min_delta: float = 0.025
    max_delta: float = 0.975
    drop_zero_volume: bool = True


def filter_quotes(slice_, config=FilterConfig()):
    """Drop untraded quotes, mids outside static arbitrage bounds and deltas outside the band."""
    ctx = slice_.context()
    kept = []
    for q in slice_.quotes:
        if config.drop_zero_volume and q.volume == 0:
            continue
        lower = max(ctx.spot - ctx.discount * q.strike, 0.0)
        # Mids on a bound have delta 0 or 1 and would fail the band anyway.
        if not lower < q.mid < ctx.spot:
            continue
        try:
            vol = bs_implied_vol(ctx, q.strike, q.mid)
        except NoArbitrageViolation:
            continue
        delta = bs_delta(BsParams(vol), ctx, q.strike)
        if config.min_delta <= delta <= config.max_delta:
            kept.append(q)
    out = slice_.with_quotes(kept)
    if out.is_empty:
        log.warning("slice %s/%s is empty after filtering", slice_.date, slice_.expiry)
    return out


def _parse_date(text):
    return dt.date.fromisoformat(text.strip())


def _parse_row(row):
    """Convert the text fields; ValueError here means the row is malformed."""
    vol_text = row["volume"].strip()
    volume = float(vol_text)
    if volume != int(volume):
        raise ValueError(f"volume {vol_text!r} is not an integer")
    return (
        _parse_date(row["date"]),
        _parse_date(row["expiry"]),
        float(row["spot"]),
        float(row["rate"]),
        float(row["strike"]),
        float(row["bid"]),
        float(row["ask"]),
        int(volume),
    )


def ingest(path, rejected=None):
    """Read a quote CSV into slices grouped by (date, expiry), sorted.

    Rows that cannot be parsed raise ParseError; rows that parse but break an
    invariant (bid above ask, expiry not after date, spot or rate inconsistent
    within a slice, ...) are skipped with a line-numbered warning and, when
    ``rejected`` is a list, appended to it as ``(line, reason)``.
    """
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc}") from exc
    rows = []
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != list(COLUMNS):
            raise ParseError(f"{path}: header must be {','.join(COLUMNS)}")
        for row in reader:
            line = reader.line_num
            if None in row or any(v is None for v in row.values()):
                raise ParseError(f"{path}:{line}: expected {len(COLUMNS)} fields")
            try:
                date, expiry, spot, rate, strike, bid, ask, volume = _parse_row(row)
            except (ValueError, OverflowError) as exc:
                raise ParseError(f"{path}:{line}: {exc}") from exc
            try:
                if not expiry > date:
                    raise ValueError(f"expiry {expiry} is not after {date}")
                if not (math.isfinite(spot) and spot > 0 and math.isfinite(rate)):
                    raise ValueError("spot must be positive and rate finite")
                quote = Quote(strike, bid, ask, volume)
            except ValueError as exc:
                _reject(rejected, line, str(exc))
                continue
            rows.append((line, date, expiry, spot, rate, quote))

    slices = []
    rows.sort(key=lambda r: (r[1], r[2], r[0]))
    for (date, expiry), group in groupby(rows, key=lambda r: (r[1], r[2])):
        group = list(group)
        spot, rate = group[0][3], group[0][4]
        quotes = []
        for line, _, _, s, r, quote in group:
            if s != spot or r != rate:
                _reject(rejected, line, "spot or rate differs from the rest of its slice")
                continue
            quotes.append(quote)
        slices.append(MarketSlice(date, expiry, spot, rate, tuple(quotes)))
    if not slices:
        raise EmptyDataset(f"{path} contains no usable quotes")
    return slices


def _reject(rejected, line, reason):
    log.warning("line %d rejected: %s", line, reason)
    if rejected is not None:
        rejected.append((line, reason))


def write_market_csv(slices, path):
    """Inverse of ingest; floats are written with repr so the round trip is exact."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for s in slices:
            for q in s.quotes:
                w.writerow(
                    [
                        s.date.isoformat(),
                        s.expiry.isoformat(),
                        repr(float(s.spot)),
                        repr(float(s.rate)),
                        repr(float(q.strike)),
                        repr(float(q.bid)),
                        repr(float(q.ask)),
                        q.volume,
                    ]
                )
