"""A tour of the synthetic market and the execution environment.

Generates a few days, prints the intraday volume profile, then runs one
interval episode by hand and the market-proportional oracle for a full day.

    python demos/01_synthetic_market.py
"""
import numpy as np

from vwapx.env import IntervalEpisode, day_vwap, market_targets
from vwapx.market import interval_ratios, sample_total_order
from vwapx.synth import GeneratorConfig, synth_series, ushape_profile
from vwapx.trainer import DayPlan, MarketData, run_oracle_day

gen = GeneratorConfig()
data = MarketData.from_synthetic(synth_series(gen, 5, seed=1))
tape = data.tapes[0]
print(f"{len(data)} days from {data.tapes[0].date} to {data.tapes[-1].date}")
print(f"day 0: {tape.total_volume:,} shares traded, opening mid {tape.mid_prices[0]:,.0f}")

print("\ninterval  configured  realized")
for l, (p, r) in enumerate(zip(ushape_profile(gen), interval_ratios(tape))):
    print(f"{l:8d}  {p:10.4f}  {r:8.4f}  {'#' * int(r * 400)}")

# one 20-minute interval: always propose the even split (action index 10 = 1.0x)
order = 2_000
ep = IntervalEpisode(tape, l=0, order=order)
ep.reset()
while not ep.done:
    ep.step(10)
cols = ep.to_columns()
print(f"\ninterval 0, order {order}: executed {cols['executed'].sum()} shares, "
      f"rewards {cols['reward'].astype(int).tolist()}")

# the oracle follows the market's own volume and tracks VWAP exactly
stats = data.stats(0)
rng = np.random.default_rng(0)
O = sample_total_order(stats, rng)
print(f"\nday order drawn from the prior 60 daily volumes "
      f"(mean {stats.mu:,.0f}, sd {stats.sigma:,.0f}): {O:,} shares")
res = run_oracle_day(DayPlan(tape, O, rng))
print(f"oracle day: MP {res.mp:,.2f} vs VWAP {day_vwap(tape, market_targets(tape, O)):,.2f}, "
      f"VAA {res.vaa * 1e4:.4f} bps")
