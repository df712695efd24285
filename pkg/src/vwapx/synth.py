"""Synthetic KRX-like daily tapes with a known U-shaped intraday volume profile."""
from __future__ import annotations

import dataclasses
import datetime as dt
from dataclasses import dataclass

import numpy as np

from .market import (MINUTES_PER_INTERVAL, N_INTERVALS, N_LEVELS, N_MINUTES, N_SLOTS,
                     OPEN_MS, SLOT_MS, SLOTS_PER_MINUTE, DayTape, largest_remainder)


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the synthetic market.

    ``ushape_amplitude`` sets the quadratic interval profile
    ``1 + amplitude * x**2`` for ``x`` running from -1 at the open to +1 at the
    close. ``noise_scale`` is the standard deviation of the lognormal
    day-to-day perturbation of that profile (0 gives a stationary U-shape).
    """

    base_price: float = 80_000.0
    tick_size: float = 100.0
    daily_volume: float = 17_000_000.0
    ushape_amplitude: float = 2.0
    noise_scale: float = 0.15
    noise_persistence: float = 0.5
    volume_cv: float = 0.25
    daily_volatility: float = 0.02
    minute_noise: float = 0.4
    book_depth: float = 4.0
    start_date: str = "2021-01-04"

    def __post_init__(self):
        positive = ("base_price", "tick_size", "daily_volume", "book_depth")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"GeneratorConfig.{name} must be positive")
        for name in ("ushape_amplitude", "noise_scale", "volume_cv", "daily_volatility",
                     "minute_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"GeneratorConfig.{name} must be nonnegative")
        if not 0 <= self.noise_persistence < 1:
            raise ValueError("GeneratorConfig.noise_persistence must lie in [0, 1)")
        if self.base_price <= 20 * self.tick_size:
            raise ValueError("GeneratorConfig: base_price too close to zero for a 5-level book")
        dt.date.fromisoformat(self.start_date)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def ushape_profile(config: GeneratorConfig) -> np.ndarray:
    """The configured (noise-free) interval volume ratios."""
    x = np.linspace(-1.0, 1.0, N_INTERVALS)
    w = 1.0 + config.ushape_amplitude * x * x
    return w / w.sum()


def business_days(start: dt.date, n: int) -> list[dt.date]:
    out = []
    d = start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def _ar1(rng, n, sd, rho):
    # stationary AR(1) with marginal standard deviation ``sd``
    out = np.empty(n)
    out[0] = rng.normal(0.0, sd)
    innov = sd * np.sqrt(1.0 - rho * rho)
    for i in range(1, n):
        out[i] = rho * out[i - 1] + rng.normal(0.0, innov)
    return out


def draw_daily_volume(config: GeneratorConfig, rng: np.random.Generator) -> int:
    s = config.volume_cv
    return max(N_SLOTS, int(round(config.daily_volume * np.exp(rng.normal(-0.5 * s * s, s)))))


def synth_generate(config: GeneratorConfig, seed, date: dt.date | None = None
                   ) -> tuple[DayTape, np.ndarray]:
    """Generate one day; returns the tape and its realized interval ratios."""
    rng = np.random.default_rng(seed)
    date = date or dt.date.fromisoformat(config.start_date)
    day_volume = draw_daily_volume(config, rng)

    noise = _ar1(rng, N_INTERVALS, config.noise_scale, config.noise_persistence) \
        if config.noise_scale > 0 else np.zeros(N_INTERVALS)
    weights = ushape_profile(config) * np.exp(noise)
    iv = largest_remainder(day_volume, weights)
    ratios = iv / day_volume

    # minute intensities persist within the day; the book depth follows them,
    # so the public state carries information about upcoming volume
    log_m = _ar1(rng, N_MINUTES, config.minute_noise, 0.8) if config.minute_noise > 0 \
        else np.zeros(N_MINUTES)
    minute_int = np.exp(log_m).reshape(N_INTERVALS, MINUTES_PER_INTERVAL)
    volume = np.empty(N_SLOTS, dtype=np.int64)
    for l in range(N_INTERVALS):
        slot_w = np.repeat(minute_int[l], SLOTS_PER_MINUTE) * rng.uniform(0.5, 1.5, 240)
        volume[l * 240:(l + 1) * 240] = rng.multinomial(iv[l], slot_w / slot_w.sum())

    sigma_slot = config.base_price * config.daily_volatility / np.sqrt(N_SLOTS)
    mid = config.base_price + np.cumsum(rng.normal(0.0, sigma_slot, N_SLOTS))
    mid = np.maximum(mid, 10 * config.tick_size)
    tick = config.tick_size
    best_bid = np.floor(mid / tick) * tick
    best_bid = np.where(best_bid >= mid, best_bid - tick, best_bid)
    spread = tick * (1 + (rng.uniform(size=N_SLOTS) < 0.2))
    best_ask = best_bid + spread
    levels = np.arange(N_LEVELS) * tick
    bid_prices = best_bid[:, None] - levels
    ask_prices = best_ask[:, None] + levels

    slot_minute = np.arange(N_SLOTS) // SLOTS_PER_MINUTE
    intensity = minute_int.reshape(-1)[slot_minute]
    mean_slot_volume = day_volume / N_SLOTS
    depth_scale = config.book_depth * mean_slot_volume * intensity[:, None]
    level_shape = np.linspace(1.0, 1.6, N_LEVELS)
    bid_volumes = np.round(depth_scale * level_shape * rng.lognormal(0, 0.3, (N_SLOTS, N_LEVELS)))
    ask_volumes = np.round(depth_scale * level_shape * rng.lognormal(0, 0.3, (N_SLOTS, N_LEVELS)))

    raw = best_bid + rng.uniform(0.0, 1.0, N_SLOTS) * spread
    traded_vwap = np.empty(N_SLOTS)
    last = mid[0]
    for s in range(N_SLOTS):
        if volume[s] > 0:
            last = raw[s]
        traded_vwap[s] = last

    open_level = np.exp(noise[0]) * day_volume / config.daily_volume
    premarket = (config.book_depth * mean_slot_volume * open_level
                 * np.tile(level_shape, 2) * rng.lognormal(0, 0.1, 2 * N_LEVELS))

    tape = DayTape(date, OPEN_MS + SLOT_MS * np.arange(N_SLOTS), bid_prices,
                   bid_volumes.astype(np.int64), ask_prices, ask_volumes.astype(np.int64),
                   volume, traded_vwap, premarket)
    return tape, ratios


@dataclass
class SyntheticMarket:
    """A run of consecutive synthetic days plus a volume-only warm-up history.

    ``warmup_volumes`` holds daily totals for the business days preceding the
    first tape so that every tape has 60 prior volumes for its statistics.
    """

    tapes: list[DayTape]
    ratios: list[np.ndarray]
    warmup_dates: list[dt.date]
    warmup_volumes: list[int]


def synth_series(config: GeneratorConfig, n_days: int, seed: int, warmup: int = 60
                 ) -> SyntheticMarket:
    dates = business_days(dt.date.fromisoformat(config.start_date), warmup + n_days)
    warm_rng = np.random.default_rng([seed, 0xBEEF])
    warm_volumes = [draw_daily_volume(config, warm_rng) for _ in range(warmup)]
    tapes, ratios = [], []
    for i, date in enumerate(dates[warmup:]):
        tape, r = synth_generate(config, [seed, i], date)
        tapes.append(tape)
        ratios.append(r)
    return SyntheticMarket(tapes, ratios, dates[:warmup], warm_volumes)
