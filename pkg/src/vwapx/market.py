"""Daily tape data: types, validation, file I/O, tick bucketing and volume statistics.

A trading day runs 09:00:00-15:20:00 (380 minutes) and is stored as 4560
five-second slots. Slots group into 19 twenty-minute intervals of 20
one-minute subintervals of 12 slots each.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

N_LEVELS = 5
N_INTERVALS = 19
MINUTES_PER_INTERVAL = 20
SLOTS_PER_MINUTE = 12
SLOTS_PER_INTERVAL = MINUTES_PER_INTERVAL * SLOTS_PER_MINUTE
N_MINUTES = N_INTERVALS * MINUTES_PER_INTERVAL
N_SLOTS = N_MINUTES * SLOTS_PER_MINUTE
SLOT_MS = 5_000
OPEN_MS = 9 * 3_600_000
CLOSE_MS = OPEN_MS + N_SLOTS * SLOT_MS
PREMARKET_START_MS = OPEN_MS - 30 * 60_000
HISTORY_DAYS = 60

TAPE_COLUMNS = (["timestamp_ms"]
                + [f"bp{i}" for i in range(1, 6)] + [f"bv{i}" for i in range(1, 6)]
                + [f"ap{i}" for i in range(1, 6)] + [f"av{i}" for i in range(1, 6)]
                + ["traded_volume", "traded_vwap"])
PREMARKET_COLUMNS = (["date"] + [f"pbv{i}" for i in range(1, 6)]
                     + [f"pav{i}" for i in range(1, 6)])


class TapeError(ValueError):
    """Raised for malformed or invariant-violating tape data."""


@dataclass(frozen=True)
class LobSnapshot:
    timestamp: int
    bid_prices: tuple
    ask_prices: tuple
    bid_volumes: tuple
    ask_volumes: tuple

    def __post_init__(self):
        _check_book(np.asarray(self.bid_prices, float), np.asarray(self.ask_prices, float),
                    np.asarray(self.bid_volumes), np.asarray(self.ask_volumes), where="snapshot")


@dataclass(frozen=True)
class Slot:
    lob: LobSnapshot
    traded_volume: int
    traded_vwap: float


@dataclass(frozen=True)
class VolumeStats:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"VolumeStats: mu must be positive, got {self.mu}")
        if not self.sigma >= 0:
            raise ValueError(f"VolumeStats: sigma must be nonnegative, got {self.sigma}")


def _check_book(bp, ap, bv, av, where):
    if np.any(np.diff(bp) >= 0):
        raise TapeError(f"{where}: bid prices not strictly descending")
    if np.any(np.diff(ap) <= 0):
        raise TapeError(f"{where}: ask prices not strictly ascending")
    if not ap[0] > bp[0]:
        raise TapeError(f"{where}: crossed book (ask {ap[0]} <= bid {bp[0]})")
    if np.any(bv < 0) or np.any(av < 0):
        raise TapeError(f"{where}: negative book volume")


@dataclass(frozen=True, eq=False)
class DayTape:
    """One trading day of 5-second slots, stored column-wise.

    Price arrays are (4560, 5) float64; volume arrays are int64. Arrays are
    made read-only on construction and validated against every invariant.
    """

    date: dt.date
    timestamps: np.ndarray
    bid_prices: np.ndarray
    bid_volumes: np.ndarray
    ask_prices: np.ndarray
    ask_volumes: np.ndarray
    traded_volume: np.ndarray
    traded_vwap: np.ndarray
    premarket: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        casts = {"timestamps": np.int64, "bid_prices": np.float64, "bid_volumes": np.int64,
                 "ask_prices": np.float64, "ask_volumes": np.int64,
                 "traded_volume": np.int64, "traded_vwap": np.float64,
                 "premarket": np.float64}
        for name, dtype in casts.items():
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        validate_tape(self)

    def __eq__(self, other):
        if not isinstance(other, DayTape):
            return NotImplemented
        return self.date == other.date and all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("timestamps", "bid_prices", "bid_volumes", "ask_prices",
                      "ask_volumes", "traded_volume", "traded_vwap", "premarket"))

    __hash__ = None

    def slot(self, i: int) -> Slot:
        lob = LobSnapshot(int(self.timestamps[i]), tuple(self.bid_prices[i]),
                          tuple(self.ask_prices[i]), tuple(self.bid_volumes[i]),
                          tuple(self.ask_volumes[i]))
        return Slot(lob, int(self.traded_volume[i]), float(self.traded_vwap[i]))

    @property
    def slots(self) -> list[Slot]:
        return [self.slot(i) for i in range(N_SLOTS)]

    @property
    def mid_prices(self) -> np.ndarray:
        return 0.5 * (self.bid_prices[:, 0] + self.ask_prices[:, 0])

    @property
    def total_volume(self) -> int:
        return int(self.traded_volume.sum())

    def public_features(self, i: int) -> np.ndarray:
        """The 20 public LOB values of slot ``i``: bid/ask prices, then bid/ask volumes."""
        return np.concatenate([self.bid_prices[i], self.ask_prices[i],
                               self.bid_volumes[i], self.ask_volumes[i]]).astype(np.float64)

    def minute_volumes(self) -> np.ndarray:
        """(19, 20) market volume per one-minute subinterval."""
        if "minute_volumes" not in self._cache:
            self._cache["minute_volumes"] = self.traded_volume.reshape(
                N_INTERVALS, MINUTES_PER_INTERVAL, SLOTS_PER_MINUTE).sum(axis=2)
        return self._cache["minute_volumes"]

    def minute_prices(self) -> np.ndarray:
        """(19, 20) market VWAP per subinterval.

        A subinterval with no volume falls back to the mean of its slots'
        traded_vwap.
        """
        if "minute_prices" not in self._cache:
            vol = self.traded_volume.reshape(N_MINUTES, SLOTS_PER_MINUTE).astype(np.float64)
            px = self.traded_vwap.reshape(N_MINUTES, SLOTS_PER_MINUTE)
            tot = vol.sum(axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                vw = (vol * px).sum(axis=1) / tot
            out = np.where(tot > 0, vw, px.mean(axis=1))
            self._cache["minute_prices"] = out.reshape(N_INTERVALS, MINUTES_PER_INTERVAL)
        return self._cache["minute_prices"]


def validate_tape(tape: DayTape) -> None:
    n = len(tape.timestamps)
    if n != N_SLOTS:
        raise TapeError(f"slot count {n} ≠ {N_SLOTS}")
    shapes = {"bid_prices": (N_SLOTS, N_LEVELS), "bid_volumes": (N_SLOTS, N_LEVELS),
              "ask_prices": (N_SLOTS, N_LEVELS), "ask_volumes": (N_SLOTS, N_LEVELS),
              "traded_volume": (N_SLOTS,), "traded_vwap": (N_SLOTS,), "premarket": (10,)}
    for name, shape in shapes.items():
        if getattr(tape, name).shape != shape:
            raise TapeError(f"{name} has shape {getattr(tape, name).shape}, expected {shape}")
    bad = np.nonzero(np.diff(tape.timestamps) <= 0)[0]
    if bad.size:
        raise TapeError(f"slot {bad[0] + 1}: non-monotone timestamp")
    checks = [
        (np.any(np.diff(tape.bid_prices, axis=1) >= 0, axis=1), "bid prices not strictly descending"),
        (np.any(np.diff(tape.ask_prices, axis=1) <= 0, axis=1), "ask prices not strictly ascending"),
        (tape.ask_prices[:, 0] <= tape.bid_prices[:, 0], "crossed book"),
        (np.any(tape.bid_volumes < 0, axis=1) | np.any(tape.ask_volumes < 0, axis=1),
         "negative book volume"),
        (tape.traded_volume < 0, "negative traded volume"),
        (~(tape.traded_vwap > 0), "traded_vwap must be positive"),
        (~np.all(np.isfinite(tape.bid_prices), axis=1) | ~np.all(np.isfinite(tape.ask_prices), axis=1),
         "non-finite price"),
    ]
    for mask, msg in checks:
        rows = np.nonzero(mask)[0]
        if rows.size:
            raise TapeError(f"slot {rows[0]}: {msg}")
    if np.any(tape.premarket < 0) or not np.all(np.isfinite(tape.premarket)):
        raise TapeError("premarket averages must be finite and nonnegative")


# ---------------------------------------------------------------- file format

def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name[:-4] + ".premarket.csv" if path.name.endswith(".csv")
                          else path.name + ".premarket.csv")


def write_tape(tape: DayTape, path) -> Path:
    """Write ``tape`` as CSV plus its premarket sidecar; returns the tape path.

    Prices use ``repr`` (shortest round-tripping decimal), so reading back is
    bit-exact.
    """
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TAPE_COLUMNS)
        for i in range(N_SLOTS):
            w.writerow([int(tape.timestamps[i])]
                       + [repr(float(x)) for x in tape.bid_prices[i]]
                       + [int(x) for x in tape.bid_volumes[i]]
                       + [repr(float(x)) for x in tape.ask_prices[i]]
                       + [int(x) for x in tape.ask_volumes[i]]
                       + [int(tape.traded_volume[i]), repr(float(tape.traded_vwap[i]))])
    with open(sidecar_path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREMARKET_COLUMNS)
        w.writerow([tape.date.isoformat()] + [repr(float(x)) for x in tape.premarket])
    return path


def _parse_row(row: list[str], line: int):
    if len(row) != len(TAPE_COLUMNS):
        raise TapeError(f"row {line}: expected {len(TAPE_COLUMNS)} fields, got {len(row)}")
    try:
        ts = int(row[0])
        bp = [float(x) for x in row[1:6]]
        bv = [int(x) for x in row[6:11]]
        ap = [float(x) for x in row[11:16]]
        av = [int(x) for x in row[16:21]]
        vol = int(row[21])
        vwap = float(row[22])
    except ValueError as exc:
        raise TapeError(f"row {line}: malformed field ({exc})") from None
    return ts, bp, bv, ap, av, vol, vwap


def ingest_tape(path) -> DayTape:
    """Read and validate a tape file and its premarket sidecar.

    Errors name the file line (the header is line 1).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    ts, bp, bv, ap, av, vol, vwap = [], [], [], [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TAPE_COLUMNS:
            raise TapeError("row 1: unexpected header")
        prev_ts = None
        for line, row in enumerate(reader, start=2):
            t, b, bvol, a, avol, v, p = _parse_row(row, line)
            if prev_ts is not None and t <= prev_ts:
                raise TapeError(f"row {line}: non-monotone timestamp {t} after {prev_ts}")
            try:
                _check_book(np.array(b), np.array(a), np.array(bvol), np.array(avol), f"row {line}")
            except TapeError as exc:
                if "crossed" in str(exc):
                    raise TapeError(f"row {line}: crossed book (ask {a[0]} <= bid {b[0]})") from None
                raise
            if v < 0 or not p > 0:
                raise TapeError(f"row {line}: invalid traded volume/vwap")
            prev_ts = t
            ts.append(t)
            bp.append(b)
            bv.append(bvol)
            ap.append(a)
            av.append(avol)
            vol.append(v)
            vwap.append(p)
    if len(ts) != N_SLOTS:
        raise TapeError(f"slot count {len(ts)} ≠ {N_SLOTS}")
    side = sidecar_path(path)
    with open(side, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) != 2 or rows[0] != PREMARKET_COLUMNS or len(rows[1]) != 11:
        raise TapeError(f"{side.name}: expected header plus one row of date and 10 averages")
    try:
        date = dt.date.fromisoformat(rows[1][0])
        premarket = [float(x) for x in rows[1][1:]]
    except ValueError as exc:
        raise TapeError(f"{side.name} row 2: malformed field ({exc})") from None
    return DayTape(date, np.array(ts), np.array(bp), np.array(bv), np.array(ap),
                   np.array(av), np.array(vol), np.array(vwap), np.array(premarket))


# ---------------------------------------------------------------- tick bucketing

@dataclass(frozen=True)
class Quote:
    """Raw top-5 LOB update."""
    timestamp: int
    bid_prices: tuple
    ask_prices: tuple
    bid_volumes: tuple
    ask_volumes: tuple


@dataclass(frozen=True)
class Trade:
    timestamp: int
    price: float
    volume: int


def bucketize(ticks: Iterable[Quote | Trade], date: dt.date) -> DayTape:
    """Collapse a time-sorted tick stream into 5-second slots.

    Each slot keeps the last quote seen up to the end of its window, the
    window's traded volume and its traded VWAP. Zero-trade windows carry the
    previous slot's traded_vwap; a zero-trade first window uses its mid price.
    Premarket averages come from quotes stamped 08:30:00-09:00:00.
    """
    ticks = list(ticks)
    if not ticks:
        raise TapeError("bucketize: empty tick stream")
    book = np.zeros((N_SLOTS, 4, N_LEVELS))
    vol = np.zeros(N_SLOTS, dtype=np.int64)
    notional = np.zeros(N_SLOTS)
    have_quote = np.zeros(N_SLOTS, dtype=bool)
    pre = []
    prev_ts = -1
    for tick in ticks:
        if tick.timestamp < prev_ts:
            raise TapeError(f"bucketize: ticks not time-sorted at {tick.timestamp}")
        prev_ts = tick.timestamp
        if isinstance(tick, Quote) and PREMARKET_START_MS <= tick.timestamp < OPEN_MS:
            pre.append(list(tick.bid_volumes) + list(tick.ask_volumes))
            continue
        if not OPEN_MS <= tick.timestamp < CLOSE_MS:
            continue
        s = (tick.timestamp - OPEN_MS) // SLOT_MS
        if isinstance(tick, Quote):
            book[s] = (tick.bid_prices, tick.ask_prices, tick.bid_volumes, tick.ask_volumes)
            have_quote[s] = True
        else:
            vol[s] += tick.volume
            notional[s] += tick.price * tick.volume
    if not have_quote[0]:
        raise TapeError("bucketize: first window has no LOB snapshot to start from")
    vwap = np.zeros(N_SLOTS)
    for s in range(N_SLOTS):
        if not have_quote[s]:
            book[s] = book[s - 1]
        if vol[s] > 0:
            vwap[s] = notional[s] / vol[s]
        elif s > 0:
            vwap[s] = vwap[s - 1]
        else:
            vwap[s] = 0.5 * (book[s, 0, 0] + book[s, 1, 0])
    premarket = np.mean(pre, axis=0) if pre else np.zeros(10)
    return DayTape(date, OPEN_MS + SLOT_MS * np.arange(N_SLOTS), book[:, 0], book[:, 2],
                   book[:, 1], book[:, 3], vol, vwap, premarket)


# ---------------------------------------------------------------- volume statistics

def interval_volumes(tape: DayTape) -> np.ndarray:
    return tape.traded_volume.reshape(N_INTERVALS, SLOTS_PER_INTERVAL).sum(axis=1)


def interval_ratios(tape: DayTape) -> np.ndarray:
    """Share of the day's traded volume in each of the 19 intervals."""
    iv = interval_volumes(tape)
    total = iv.sum()
    if total <= 0:
        raise ValueError(f"{tape.date}: zero day volume, ratios undefined")
    return iv / total


def historical_average_ushape(history: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Component-wise mean of per-day ratio vectors, renormalized to sum 1."""
    h = np.asarray(history, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ValueError("historical_average_ushape: need at least one day of ratios")
    m = h.mean(axis=0)
    return m / m.sum()


def volume_stats(history: Sequence[float]) -> VolumeStats:
    """Mean and population standard deviation of the previous 60 daily volumes."""
    h = np.asarray(history, dtype=np.float64)
    if h.shape != (HISTORY_DAYS,):
        raise ValueError(f"volume_stats: need exactly {HISTORY_DAYS} daily volumes, got {h.size}")
    if np.any(h <= 0):
        raise ValueError("volume_stats: daily volumes must be positive")
    return VolumeStats(float(h.mean()), float(h.std()))


def sample_total_order(stats: VolumeStats, rng: np.random.Generator) -> int:
    """Day total order O ~ N(2.5e-3 mu, 6.25e-6 sigma^2), rounded, at least 1 share."""
    draw = rng.normal(2.5e-3 * stats.mu, 2.5e-3 * stats.sigma)
    return max(1, int(np.floor(draw + 0.5)))


# ---------------------------------------------------------------- integer allocation

def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def largest_remainder(total: int, weights) -> np.ndarray:
    """Split integer ``total`` proportionally to ``weights`` into integers summing to it.

    Floors first, then hands the leftover units to the largest fractional
    parts; ties go to the lower index. All-zero weights split evenly.
    """
    w = np.asarray(weights, dtype=np.float64)
    if total < 0:
        raise ValueError(f"largest_remainder: negative total {total}")
    if np.any(w < 0):
        raise ValueError("largest_remainder: negative weight")
    s = w.sum()
    if s <= 0:
        w = np.ones_like(w)
        s = w.size
    exact = total * (w / s)
    base = np.floor(exact).astype(np.int64)
    short = int(total - base.sum())
    if short > 0:
        order = np.lexsort((np.arange(w.size), -(exact - base)))
        base[order[:short]] += 1
    return base
