"""Per-interval execution MDP and day-level VWAP accounting.

An episode splits an order across consecutive cells of slots. The standard
episode is one 20-minute interval with 20 one-minute cells; the within-minute
baselines use one-minute episodes with 12 single-slot cells. At each step the
agent picks a multiplier ``a`` in {0, 0.1, ..., 2}; it proposes
``round(a * order / n_cells)`` shares, capped by what remains, and the last
step takes whatever is left.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import (MINUTES_PER_INTERVAL, N_INTERVALS, N_MINUTES, SLOTS_PER_INTERVAL,
                     SLOTS_PER_MINUTE, DayTape, interval_volumes, largest_remainder,
                     round_half_up)

N_ACTIONS = 21
ACTION_MULTIPLIERS = np.arange(N_ACTIONS) / 10.0
STATE_DIM = 22


def action_multiplier(index: int) -> float:
    if not 0 <= index < N_ACTIONS:
        raise ValueError(f"action index {index} outside 0..{N_ACTIONS - 1}")
    return index / 10.0


def action_index(multiplier: float) -> int:
    idx = round_half_up(multiplier * 10.0)
    if not 0 <= idx < N_ACTIONS or abs(idx / 10.0 - multiplier) > 1e-9:
        raise ValueError(f"{multiplier} is not an action multiplier")
    return idx


@dataclass(frozen=True)
class EnvState:
    """Public top-5 book (20 values) plus elapsed step and remaining shares."""

    public: np.ndarray
    elapsed: int
    remaining: int
    horizon: int = MINUTES_PER_INTERVAL

    def __post_init__(self):
        if self.remaining < 0:
            raise ValueError("EnvState: remaining volume must be nonnegative")
        if not 0 <= self.elapsed < self.horizon:
            raise ValueError(f"EnvState: elapsed {self.elapsed} outside 0..{self.horizon - 1}")


def restrict_order(t: int, proposed: int, remaining: int, horizon: int = MINUTES_PER_INTERVAL
                   ) -> int:
    """Cap a proposed order so the episode never over-executes, and force the
    final step to clear the remainder."""
    if remaining < 0:
        raise ValueError("restrict_order: remaining must be nonnegative")
    if t == horizon - 1:
        return remaining
    return min(max(proposed, 0), remaining)


def reward_fn(executed: int, target: int) -> int:
    """+1 within 1% of the target order, 0 within 5%, -1 otherwise.

    A zero target rewards +1 only for executing nothing.
    """
    if target == 0:
        return 1 if executed == 0 else -1
    m = abs(executed - target) / target
    if m < 0.01:
        return 1
    if m < 0.05:
        return 0
    return -1


def interval_targets(tape: DayTape, l: int, order: int) -> np.ndarray:
    """Market-proportional split of ``order`` over interval ``l``'s 20 subintervals."""
    if not 0 <= l < N_INTERVALS:
        raise ValueError(f"interval {l} outside 0..{N_INTERVALS - 1}")
    vols = tape.minute_volumes()[l]
    if vols.sum() <= 0:
        raise ValueError(f"interval {l} has zero market volume")
    return largest_remainder(order, vols)


def target_order(tape: DayTape, l: int, t: int, order: int) -> int:
    return int(interval_targets(tape, l, order)[t])


@dataclass(frozen=True)
class StepRecord:
    state: EnvState
    action: int
    reward: int
    executed: int
    price: float
    target: int


class Episode:
    """Sequential execution of ``order`` shares over ``n_cells`` cells.

    ``cell_prices`` are the fill prices of each cell and ``cell_volumes`` the
    market volumes used for the reward targets (an all-zero cell volume
    vector falls back to an even split).
    """

    def __init__(self, tape: DayTape, first_slot: int, n_cells: int, cell_slots: int,
                 order: int, cell_prices: np.ndarray, cell_volumes: np.ndarray,
                 side: str = "buy"):
        if order < 0:
            raise ValueError("episode order must be nonnegative")
        if side not in ("buy", "sell"):
            raise ValueError(f"side must be 'buy' or 'sell', got {side!r}")
        self.tape = tape
        self.first_slot = first_slot
        self.n_cells = n_cells
        self.cell_slots = cell_slots
        self.order = int(order)
        self.side = side
        self.prices = np.asarray(cell_prices, dtype=np.float64)
        self.targets = largest_remainder(self.order, cell_volumes)
        self.records: list[StepRecord] = []
        self.remaining = self.order
        self.t = 0

    @property
    def horizon(self) -> int:
        return self.n_cells

    @property
    def done(self) -> bool:
        return self.t >= self.n_cells

    def anchor_slot(self, t: int) -> int:
        """Slot whose book defines the state before cell ``t`` (the last one
        strictly before the cell; slot 0 at the open of the day)."""
        return max(self.first_slot + t * self.cell_slots - 1, 0)

    def state(self) -> EnvState:
        return EnvState(self.tape.public_features(self.anchor_slot(self.t)), self.t,
                        self.remaining, self.n_cells)

    def reset(self) -> EnvState:
        self.records = []
        self.remaining = self.order
        self.t = 0
        return self.state()

    def proposed(self, action: int) -> int:
        return round_half_up(action_multiplier(action) * self.order / self.n_cells)

    def step(self, action: int):
        """Execute one cell; returns (next state or None, reward, executed, price)."""
        if self.done:
            raise RuntimeError("step called on a finished episode")
        return self._execute(self.proposed(action), action)

    def step_shares(self, shares: int):
        """Like ``step`` but proposing a share count directly (rule-based
        strategies); the record's action is -1."""
        if self.done:
            raise RuntimeError("step called on a finished episode")
        return self._execute(int(shares), -1)

    def _execute(self, proposed: int, action: int):
        state = self.state()
        executed = restrict_order(self.t, proposed, self.remaining, self.n_cells)
        price = float(self.prices[self.t])
        target = int(self.targets[self.t])
        reward = reward_fn(executed, target)
        self.records.append(StepRecord(state, action, reward, executed, price, target))
        self.remaining -= executed
        self.t += 1
        return (None if self.done else self.state()), reward, executed, price

    def executed(self) -> np.ndarray:
        return np.array([r.executed for r in self.records], dtype=np.int64)

    def to_columns(self) -> dict[str, np.ndarray]:
        """Columnar layout: public (T, 20), elapsed, remaining, action, reward,
        executed, price, target (each length T)."""
        rs = self.records
        return {
            "public": np.array([r.state.public for r in rs]).reshape(len(rs), 20),
            "elapsed": np.array([r.state.elapsed for r in rs], dtype=np.int64),
            "remaining": np.array([r.state.remaining for r in rs], dtype=np.int64),
            "action": np.array([r.action for r in rs], dtype=np.int64),
            "reward": np.array([r.reward for r in rs], dtype=np.int64),
            "executed": np.array([r.executed for r in rs], dtype=np.int64),
            "price": np.array([r.price for r in rs]),
            "target": np.array([r.target for r in rs], dtype=np.int64),
        }


class IntervalEpisode(Episode):
    """Interval ``l``: 20 one-minute cells filled at the subinterval market VWAP
    (the cell's order is spread evenly over its 12 five-second steps)."""

    def __init__(self, tape: DayTape, l: int, order: int, side: str = "buy"):
        if not 0 <= l < N_INTERVALS:
            raise ValueError(f"interval {l} outside 0..{N_INTERVALS - 1}")
        self.interval = l
        super().__init__(tape, l * SLOTS_PER_INTERVAL, MINUTES_PER_INTERVAL, SLOTS_PER_MINUTE,
                         order, tape.minute_prices()[l], tape.minute_volumes()[l], side)


class MinuteEpisode(Episode):
    """Minute ``m`` (0..379): 12 five-second cells, each filled at its slot's
    traded VWAP."""

    def __init__(self, tape: DayTape, m: int, order: int, side: str = "buy"):
        if not 0 <= m < N_MINUTES:
            raise ValueError(f"minute {m} outside 0..{N_MINUTES - 1}")
        self.minute = m
        sl = slice(m * SLOTS_PER_MINUTE, (m + 1) * SLOTS_PER_MINUTE)
        super().__init__(tape, m * SLOTS_PER_MINUTE, SLOTS_PER_MINUTE, 1, order,
                         tape.traded_vwap[sl], tape.traded_volume[sl], side)


def reset_interval(tape: DayTape, l: int, order: int) -> EnvState:
    return IntervalEpisode(tape, l, order).reset()


# ---------------------------------------------------------------- day accounting

def market_targets(tape: DayTape, total_order: int) -> np.ndarray:
    """(19, 20) integer VWAP-tracking orders: ``total_order`` split over
    intervals by realized interval volume, then over subintervals by minute
    volume."""
    iv = largest_remainder(total_order, interval_volumes(tape))
    vols = tape.minute_volumes()
    return np.stack([largest_remainder(int(iv[l]), vols[l]) for l in range(N_INTERVALS)])


def day_vwap(tape: DayTape, targets: np.ndarray) -> float:
    """Target-weighted average of subinterval prices over the day."""
    targets = np.asarray(targets)
    total = targets.sum()
    if total <= 0:
        raise ValueError("day_vwap: total order must be positive")
    return float((targets.reshape(-1) / total) @ tape.minute_prices().reshape(-1))


def model_price(episodes, total_order: int | None = None) -> float:
    """Order-weighted average fill price over a day's completed episodes."""
    qty = np.concatenate([ep.executed() for ep in episodes]).astype(np.float64)
    px = np.concatenate([ep.prices[:len(ep.records)] for ep in episodes])
    if any(not ep.done for ep in episodes):
        raise RuntimeError("model_price: unfinished episode")
    return fill_price(qty, px, total_order)


def fill_price(quantities, prices, total_order: int | None = None) -> float:
    q = np.asarray(quantities, dtype=np.float64).reshape(-1)
    p = np.asarray(prices, dtype=np.float64).reshape(-1)
    total = q.sum()
    if total_order is not None and total != total_order:
        raise RuntimeError(f"executed {total:.0f} shares but the day order is {total_order}")
    if total <= 0:
        raise ValueError("fill_price: nothing executed")
    return float((q / total) @ p)


def vaa(mp: float, vwap: float) -> float:
    """Absolute relative deviation of the model price from the VWAP."""
    if not vwap > 0:
        raise ValueError("vaa: VWAP must be positive")
    return abs((mp - vwap) / vwap)
