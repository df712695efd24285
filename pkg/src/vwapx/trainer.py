"""Episode gathering and joint training of the allocator and the execution policy.

Modes:

``tul``     Transformer allocates the day over intervals, LSTM executes each interval.
``hul``     historical-average U-shape allocates, LSTM executes each interval.
``hu-ppo``  historical U-shape, each interval split evenly over its minutes,
            LSTM executes each minute over its 12 five-second steps.
``ppo``     the day split evenly over 380 minutes, LSTM executes each minute.
``naive``   minute orders as in ``ppo`` (or ``hu-ppo``) executed entirely in
            the first five-second step of the minute; nothing to train.
``oracle``  executes the market-proportional targets (evaluation reference).

Randomness is derived from (seed, iteration, day) so a run is reproducible
and can resume from any checkpoint.
"""
from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .env import (N_ACTIONS, IntervalEpisode, MinuteEpisode, day_vwap, fill_price,
                  market_targets, model_price, vaa)
from .market import (HISTORY_DAYS, MINUTES_PER_INTERVAL, N_INTERVALS, N_MINUTES,
                     SLOTS_PER_MINUTE, DayTape, VolumeStats, historical_average_ushape,
                     ingest_tape, interval_ratios, largest_remainder, sample_total_order,
                     volume_stats, write_tape)
from .policy import LSTMPolicy, normalize_state
from .transformer import UShapeTransformer, interval_unit_prices, tf_loss, tf_loss_parts

log = logging.getLogger("vwapx.train")

MODES = ("tul", "hul", "hu-ppo", "ppo", "naive", "oracle")
INTERVAL_MODES = ("tul", "hul")
MINUTE_MODES = ("hu-ppo", "ppo")
LEARNED_MODES = INTERVAL_MODES + MINUTE_MODES


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    """Training hyperparameters; ``None`` fields take their mode-dependent default."""

    mode: str = "tul"
    outer_iterations: int = 10_000
    inner_epochs: int = 10
    batch_size: int | None = None          # 10 trajectories (tul/hul), 20 (minute modes)
    clip_eps: float = 0.2
    gamma: float = 1.0
    c1: float = 0.5
    c2: float = 0.5
    c3: float = 1.0
    c4: float = 0.01
    days_per_iteration: int | None = None  # 12 (tul), 8 (hul)
    minute_trajectories: int = 200         # minute modes: episodes per iteration
    hidden: int | None = None              # 129 (tul), 128 otherwise
    policy_embed: int = 128
    history_days: int = 20
    tf_heads: int = 4
    tf_ffn: int = 128
    tf_epochs: int | None = None           # defaults to inner_epochs
    lstm_lr: tuple = (5e-5, 1e-5)
    tf_lr: tuple = (1e-3, 2e-4)
    max_grad_norm: float = 0.5
    naive_base: str = "equal"              # minute orders for naive: equal or ushape
    checkpoint_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.naive_base not in ("equal", "ushape"):
            raise ValueError("naive_base must be 'equal' or 'ushape'")
        self.lstm_lr = tuple(float(x) for x in self.lstm_lr)
        self.tf_lr = tuple(float(x) for x in self.tf_lr)
        if len(self.lstm_lr) != 2 or len(self.tf_lr) != 2:
            raise ValueError("learning rates are (start, end) pairs")
        for name in ("outer_iterations", "inner_epochs", "history_days", "minute_trajectories"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.clip_eps < 0 or self.max_grad_norm <= 0:
            raise ValueError("clip_eps must be >= 0 and max_grad_norm > 0")

    # effective values
    @property
    def H(self) -> int:
        return self.hidden if self.hidden is not None else (129 if self.mode == "tul" else 128)

    @property
    def minibatch(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 20 if self.mode in MINUTE_MODES else 10

    @property
    def n_days(self) -> int:
        if self.days_per_iteration is not None:
            return self.days_per_iteration
        return 12 if self.mode == "tul" else 8

    @property
    def n_tf_epochs(self) -> int:
        return self.inner_epochs if self.tf_epochs is None else self.tf_epochs

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lstm_lr"], d["tf_lr"] = list(self.lstm_lr), list(self.tf_lr)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- market data

@dataclass
class MarketData:
    """Chronological tapes plus the daily total volumes used for order statistics.

    ``daily_volumes`` must cover at least the 60 business days before each
    tape (a warm-up history for the first ones).
    """

    tapes: list[DayTape]
    daily_volumes: dict

    def __post_init__(self):
        self.tapes = sorted(self.tapes, key=lambda t: t.date)
        for t in self.tapes:
            self.daily_volumes.setdefault(t.date, t.total_volume)
        self._dates = sorted(self.daily_volumes)
        self.ratios = np.array([interval_ratios(t) for t in self.tapes]).reshape(-1, N_INTERVALS)

    def __len__(self):
        return len(self.tapes)

    def stats(self, i: int) -> VolumeStats:
        d = self.tapes[i].date
        prior = [x for x in self._dates if x < d][-HISTORY_DAYS:]
        if len(prior) < HISTORY_DAYS:
            raise ValueError(f"{d}: only {len(prior)} prior daily volumes, need {HISTORY_DAYS}")
        return volume_stats([self.daily_volumes[x] for x in prior])

    def subset(self, indices) -> "MarketData":
        return MarketData([self.tapes[i] for i in indices], dict(self.daily_volumes))

    def split(self, n_train: int, n_test: int | None = None):
        n_test = len(self) - n_train if n_test is None else n_test
        if n_train < 1 or n_test < 0 or n_train + n_test > len(self):
            raise ValueError(f"cannot split {len(self)} days into {n_train} + {n_test}")
        return (self.subset(range(n_train)), self.subset(range(n_train, n_train + n_test)))

    @classmethod
    def from_synthetic(cls, market) -> "MarketData":
        vols = dict(zip(market.warmup_dates, market.warmup_volumes))
        return cls(list(market.tapes), vols)

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for t in self.tapes:
            write_tape(t, directory / f"{t.date.isoformat()}.csv")
        with open(directory / "daily_volumes.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "volume"])
            for d in self._dates:
                w.writerow([d.isoformat(), int(self.daily_volumes[d])])

    @classmethod
    def load(cls, directory) -> "MarketData":
        directory = Path(directory)
        vols = {}
        vol_file = directory / "daily_volumes.csv"
        if vol_file.exists():
            with open(vol_file, newline="") as fh:
                rows = list(csv.reader(fh))[1:]
            vols = {dt.date.fromisoformat(r[0]): int(r[1]) for r in rows}
        paths = sorted(p for p in directory.glob("*.csv")
                       if not p.name.endswith(".premarket.csv") and p.name[:4].isdigit())
        if not paths:
            raise FileNotFoundError(f"no tape files in {directory}")
        return cls([ingest_tape(p) for p in paths], vols)


# ---------------------------------------------------------------- models

@dataclass
class Models:
    store: nn.ParamStore
    policy: LSTMPolicy | None
    transformer: UShapeTransformer | None
    train_ratios: np.ndarray  # per-day interval ratios of the training set

    @property
    def hist_ushape(self) -> np.ndarray:
        return historical_average_ushape(self.train_ratios)


def build_models(cfg: TrainConfig, train_ratios) -> Models:
    store = nn.ParamStore()
    rng = np.random.default_rng([cfg.seed, 1])
    policy = transformer = None
    if cfg.mode in LEARNED_MODES:
        policy = LSTMPolicy(store, cfg.H, rng, embed=cfg.policy_embed)
    if cfg.mode == "tul":
        transformer = UShapeTransformer(store, N_INTERVALS, cfg.history_days, cfg.H,
                                        cfg.tf_heads, cfg.tf_ffn, rng)
    ratios = np.asarray(train_ratios, dtype=np.float64).reshape(-1, N_INTERVALS)
    if cfg.mode == "tul" and len(ratios) <= cfg.history_days:
        raise ValueError(f"tul needs more than {cfg.history_days} training days "
                         f"for the encoder history, got {len(ratios)}")
    return Models(store, policy, transformer, ratios)


def save_models(path, models: Models, cfg: TrainConfig, iteration: int) -> None:
    arrays = dict(models.store.state_arrays())
    arrays["data/train_ratios"] = models.train_ratios
    meta = {"format": "vwapx-model", "config": cfg.to_dict(), "iteration": iteration,
            "adam_steps": models.store.steps}
    nn.save_checkpoint(path, arrays, meta)


def load_models(path) -> tuple[Models, TrainConfig, int]:
    arrays, meta = nn.load_checkpoint(path)
    if meta.get("format") != "vwapx-model":
        raise ValueError(f"{path} is not a model checkpoint")
    cfg = TrainConfig.from_dict(meta["config"])
    models = build_models(cfg, arrays["data/train_ratios"])
    models.store.load_state_arrays(arrays, meta["adam_steps"])
    return models, cfg, int(meta["iteration"])


# ---------------------------------------------------------------- allocation helpers

def cumulative_round(total: int, fractions) -> np.ndarray:
    """Integer split of ``total`` by rounding cumulative shares; entries are
    within one share of ``total * fraction`` and sum to ``total`` exactly."""
    f = np.asarray(fractions, dtype=np.float64)
    cum = np.floor(total * np.cumsum(f) + 0.5)
    cum = np.clip(cum, 0, total)
    cum[-1] = total
    return np.diff(np.concatenate([[0.0], np.maximum.accumulate(cum)])).astype(np.int64)


def minute_orders(mode: str, order: int, ushape, naive_base: str = "equal") -> np.ndarray:
    """(380,) minute orders of the minute-horizon strategies."""
    if mode == "ppo" or (mode == "naive" and naive_base == "equal"):
        return largest_remainder(order, np.ones(N_MINUTES))
    per_interval = cumulative_round(order, ushape)
    return np.concatenate([largest_remainder(int(o), np.ones(MINUTES_PER_INTERVAL))
                           for o in per_interval])


def sample_history(rng, n_train: int, exclude: int | None, n: int) -> np.ndarray:
    pool = np.array([i for i in range(n_train) if i != exclude])
    return rng.choice(pool, size=n, replace=False)


# ---------------------------------------------------------------- rollouts

@dataclass
class Rollout:
    """Time-major arrays (T, B) for B episodes run in lock-step."""

    x: np.ndarray
    prev_a: np.ndarray
    prev_r: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    executed: np.ndarray
    h_last: np.ndarray

    @property
    def size(self) -> int:
        return self.x.shape[1]

    def take(self, idx) -> "Rollout":
        return Rollout(*(getattr(self, f.name)[:, idx] if f.name != "h_last"
                         else self.h_last[idx] for f in dataclasses.fields(self)))

    @staticmethod
    def concat(parts: list["Rollout"]) -> "Rollout":
        return Rollout(*(np.concatenate([getattr(p, f.name) for p in parts],
                                        axis=0 if f.name == "h_last" else 1)
                         for f in dataclasses.fields(Rollout)))


def _draw(logp: np.ndarray, rngs, greedy: bool) -> np.ndarray:
    if greedy:
        return np.argmax(logp, axis=1)
    cdf = np.cumsum(np.exp(logp), axis=-1)
    u = np.array([r.random() for r in rngs]) * cdf[:, -1]
    return np.minimum((cdf <= u[:, None]).sum(axis=1), N_ACTIONS - 1)


def run_episodes(policy: LSTMPolicy, episodes, price_refs, rngs, greedy: bool = False
                 ) -> Rollout:
    """Step same-horizon episodes together through the policy.

    ``rngs`` holds one generator per episode (episodes of one day may share
    a generator); ``price_refs`` is each episode's day opening mid.
    """
    B = len(episodes)
    T = episodes[0].horizon
    orders = np.array([ep.order for ep in episodes], dtype=np.float64)
    refs = np.asarray(price_refs, dtype=np.float64)[:, None]
    h, c = policy.initial_state(B)
    pa, pr = np.zeros(B), np.zeros(B)
    out = {k: np.zeros((T, B)) for k in ("prev_a", "prev_r", "logp", "values")}
    x_all = np.zeros((T, B, 22))
    acts = np.zeros((T, B), dtype=np.int64)
    rew = np.zeros((T, B))
    exe = np.zeros((T, B), dtype=np.int64)
    for ep in episodes:
        ep.reset()
    for t in range(T):
        pub = np.array([ep.tape.public_features(ep.anchor_slot(t)) for ep in episodes])
        rem = np.array([ep.remaining for ep in episodes], dtype=np.float64)
        x = normalize_state(pub, t, rem, refs, orders, T)
        lp, v, h, c = policy.step(x, pa, pr, h, c)
        a = _draw(lp, rngs, greedy)
        x_all[t], out["prev_a"][t], out["prev_r"][t] = x, pa, pr
        out["logp"][t] = lp[np.arange(B), a]
        out["values"][t] = v
        acts[t] = a
        for b, ep in enumerate(episodes):
            _, r, q, _ = ep.step(int(a[b]))
            rew[t, b] = r
            exe[t, b] = q
        pa, pr = a / 10.0, rew[t].copy()
    return Rollout(x_all, out["prev_a"], out["prev_r"], acts, out["logp"], out["values"],
                   rew, exe, h)


@dataclass
class DayPlan:
    """Inputs for running one day: tape, total order, generator, and (for
    training) the day's index in the training set."""

    tape: DayTape
    order: int
    rng: np.random.Generator
    train_index: int | None = None


@dataclass
class DayResult:
    date: dt.date
    order: int
    u_pred: np.ndarray
    u_true: np.ndarray
    interval_orders: np.ndarray
    mp: float
    vwap: float

    @property
    def vaa(self) -> float:
        return vaa(self.mp, self.vwap)


@dataclass
class TFBatch:
    """What the allocator update needs from a gathered batch of days."""

    E_in: np.ndarray
    premarket: np.ndarray
    h_prev: np.ndarray
    u_true: np.ndarray
    unit_prices: np.ndarray
    vwap: np.ndarray


def _benchmark(tape: DayTape, order: int) -> float:
    return day_vwap(tape, market_targets(tape, order))


def run_interval_days(models: Models, cfg: TrainConfig, plans: list[DayPlan],
                      greedy: bool = False):
    """Dual-level execution of several days; returns (results, rollout, tf_batch).

    The rollout is ordered interval-major for ``tul`` (interval l of every
    day, then l + 1) and day-major for ``hul``.
    """
    D = len(plans)
    refs = np.array([p.tape.mid_prices[0] for p in plans])
    u_true = np.array([interval_ratios(p.tape) for p in plans])
    orders = np.array([p.order for p in plans])
    unit = np.zeros((D, N_INTERVALS))
    episodes = [[None] * N_INTERVALS for _ in range(D)]
    tf_batch = None
    if cfg.mode == "hul":
        u = np.tile(models.hist_ushape, (D, 1))
        alloc = np.array([cumulative_round(int(o), u[0]) for o in orders])
        eps = [IntervalEpisode(p.tape, l, int(alloc[d, l]))
               for d, p in enumerate(plans) for l in range(N_INTERVALS)]
        rollout = run_episodes(models.policy, eps, np.repeat(refs, N_INTERVALS),
                               [p.rng for p in plans for _ in range(N_INTERVALS)], greedy)
        for i, ep in enumerate(eps):
            episodes[i // N_INTERVALS][i % N_INTERVALS] = ep
    elif cfg.mode == "tul":
        tfm = models.transformer
        N = cfg.history_days
        n_train = len(models.train_ratios)
        hist = [sample_history(p.rng, n_train, p.train_index, N) for p in plans]
        E_in = np.array([models.train_ratios[h].T for h in hist])
        premarket = np.array([p.tape.premarket for p in plans])
        h_prev = np.zeros((D, N_INTERVALS - 1, cfg.H))
        alloc = np.zeros((D, N_INTERVALS), dtype=np.int64)
        u = np.zeros((D, N_INTERVALS))
        cum = np.zeros(D)
        parts = []
        with nn.no_grad():
            session = tfm.start(E_in, premarket)
            for l in range(N_INTERVALS):
                u[:, l] = session.step(None if l == 0 else h_prev[:, l - 1]).data
                cum += u[:, l]
                target = orders if l == N_INTERVALS - 1 else \
                    np.clip(np.floor(orders * cum + 0.5), 0, orders)
                alloc[:, l] = np.maximum(target - alloc[:, :l].sum(axis=1), 0)
                eps = [IntervalEpisode(p.tape, l, int(alloc[d, l])) for d, p in enumerate(plans)]
                ro = run_episodes(models.policy, eps, refs, [p.rng for p in plans], greedy)
                parts.append(ro)
                if l < N_INTERVALS - 1:
                    h_prev[:, l] = ro.h_last
                for d, ep in enumerate(eps):
                    episodes[d][l] = ep
        rollout = Rollout.concat(parts)
    else:
        raise ValueError(f"run_interval_days does not handle mode {cfg.mode!r}")

    results = []
    vwaps = np.zeros(D)
    for d, p in enumerate(plans):
        eps = episodes[d]
        unit[d] = [interval_unit_prices(np.array([r.action for r in ep.records]) / 10.0,
                                        ep.prices) for ep in eps]
        vwaps[d] = _benchmark(p.tape, p.order)
        results.append(DayResult(p.tape.date, p.order, u[d], u_true[d], alloc[d],
                                 model_price(eps, p.order), vwaps[d]))
    if cfg.mode == "tul":
        tf_batch = TFBatch(E_in, premarket, h_prev, u_true, unit, vwaps)
    return results, rollout, tf_batch


def run_minute_day(models: Models | None, cfg: TrainConfig, plan: DayPlan,
                   minutes=None, greedy: bool = False):
    """Minute-horizon strategies for one day; returns (result or None, rollout).

    With ``minutes`` given only those minute episodes are run (training) and
    no day result is produced.
    """
    tape = plan.tape
    hist = models.hist_ushape if models is not None and len(models.train_ratios) else None
    m_orders = minute_orders(cfg.mode, plan.order, hist, cfg.naive_base)
    u_true = interval_ratios(tape)
    u = m_orders.reshape(N_INTERVALS, MINUTES_PER_INTERVAL).sum(axis=1) / max(plan.order, 1)
    alloc = m_orders.reshape(N_INTERVALS, MINUTES_PER_INTERVAL).sum(axis=1)
    if cfg.mode == "naive":
        px = tape.traded_vwap[::SLOTS_PER_MINUTE]
        mp = fill_price(m_orders, px, plan.order)
        return DayResult(tape.date, plan.order, u, u_true, alloc, mp,
                         _benchmark(tape, plan.order)), None
    idx = range(N_MINUTES) if minutes is None else minutes
    eps = [MinuteEpisode(tape, int(m), int(m_orders[m])) for m in idx]
    ro = run_episodes(models.policy, eps, np.full(len(eps), tape.mid_prices[0]),
                      [plan.rng] * len(eps), greedy)
    if minutes is not None:
        return None, ro
    mp = model_price(eps, plan.order)
    return DayResult(tape.date, plan.order, u, u_true, alloc, mp,
                     _benchmark(tape, plan.order)), ro


def run_oracle_day(plan: DayPlan) -> DayResult:
    tape = plan.tape
    targets = market_targets(tape, plan.order)
    eps = []
    for l in range(N_INTERVALS):
        ep = IntervalEpisode(tape, l, int(targets[l].sum()))
        ep.reset()
        for t in range(MINUTES_PER_INTERVAL):
            ep.step_shares(targets[l, t])
        eps.append(ep)
    u_true = interval_ratios(tape)
    return DayResult(tape.date, plan.order, targets.sum(axis=1) / plan.order, u_true,
                     targets.sum(axis=1), model_price(eps, plan.order),
                     day_vwap(tape, targets))


# ---------------------------------------------------------------- losses

def compute_returns_advantages(rewards, values, gamma: float = 1.0):
    """Discounted reward-to-go along axis 0 and advantages ``V_targ - V``."""
    r = np.asarray(rewards, dtype=np.float64)
    v_targ = np.zeros_like(r)
    acc = np.zeros(r.shape[1:])
    for t in range(r.shape[0] - 1, -1, -1):
        acc = r[t] + gamma * acc
        v_targ[t] = acc
    return v_targ, v_targ - np.asarray(values, dtype=np.float64)


def clipped_surrogate(q, adv, eps: float):
    """Per-sample ``min(q A, clip(q, 1-eps, 1+eps) A)`` (numpy)."""
    q = np.asarray(q, dtype=np.float64)
    return np.minimum(q * adv, np.clip(q, 1 - eps, 1 + eps) * adv)


def ppo_loss(policy: LSTMPolicy, batch: Rollout, v_targ, adv, cfg: TrainConfig):
    """Returns (-J_PPO as a graph scalar, dict of the float components)."""
    if batch.size == 0:
        raise ValueError("ppo_loss: empty batch")
    logp, values, ent, _ = policy.evaluate_actions(batch.x, batch.prev_a, batch.prev_r,
                                                   batch.actions)
    q = nn.exp(logp - batch.logp)
    surr = nn.minimum(q * adv, nn.clip(q, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * adv)
    j_clip = surr.mean()
    j_vf = nn.square(values - v_targ).mean()
    s = ent.mean()
    j = j_clip - cfg.c3 * j_vf + cfg.c4 * s
    parts = {"j_clip": j_clip.item(), "j_vf": j_vf.item(), "entropy": s.item(),
             "j_ppo": j.item()}
    return -j, parts


def ppo_update(models: Models, rollout: Rollout, cfg: TrainConfig, lr: float, rng) -> dict:
    """Inner epochs of minibatch ascent on J_PPO over the gathered trajectories."""
    v_targ, adv = compute_returns_advantages(rollout.rewards, rollout.values, cfg.gamma)
    store = models.store
    n = rollout.size
    sums: dict[str, float] = {}
    count = 0
    for _ in range(cfg.inner_epochs):
        perm = rng.permutation(n)
        for s in range(0, n, cfg.minibatch):
            idx = np.sort(perm[s:s + cfg.minibatch])
            store.zero_grad("policy/")
            loss, parts = ppo_loss(models.policy, rollout.take(idx), v_targ[:, idx],
                                   adv[:, idx], cfg)
            if not math.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite PPO loss {loss.item()}")
            nn.backward(loss)
            store.clip_grad_norm(cfg.max_grad_norm, "policy/")
            nn.adam_step(store, lr, prefix="policy/")
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
    out = {k: v / count for k, v in sums.items()}
    out["updates"] = count
    return out


def tf_update(models: Models, batch: TFBatch, cfg: TrainConfig, lr: float) -> dict:
    store = models.store
    prefix = ("encoder/", "decoder/")
    parts = (0.0, 0.0)
    for _ in range(cfg.n_tf_epochs):
        store.zero_grad(prefix)
        u = models.transformer.forward(batch.E_in, batch.premarket, batch.h_prev).u_pred()
        loss = tf_loss(batch.u_true, u, batch.unit_prices, batch.vwap, cfg.c1, cfg.c2)
        if not math.isfinite(loss.item()):
            raise TrainingDiverged(f"non-finite allocator loss {loss.item()}")
        parts = tf_loss_parts(batch.u_true, u, batch.unit_prices, batch.vwap, cfg.c1, cfg.c2)
        nn.backward(loss)
        store.clip_grad_norm(cfg.max_grad_norm, prefix)
        nn.adam_step(store, lr, prefix=prefix)
    return {"j_tf": parts[0] + parts[1], "j_tf_ratio": parts[0], "j_tf_price": parts[1]}


# ---------------------------------------------------------------- training loop

LOG_COLUMNS = ["iteration", "mean_reward", "train_vaa_bps", "j_tf", "j_tf_ratio",
               "j_tf_price", "j_clip", "j_vf", "entropy", "j_ppo", "lr_lstm", "lr_tf",
               "inner_steps", "wall_time_s"]


def _plan_days(data: MarketData, cfg: TrainConfig, iteration: int) -> list[DayPlan]:
    rng = np.random.default_rng([cfg.seed, iteration])
    n = cfg.n_days if cfg.mode in INTERVAL_MODES else 1
    days = rng.integers(0, len(data), size=n)
    plans = []
    for k, i in enumerate(days):
        day_rng = np.random.default_rng([cfg.seed, iteration, k])
        order = sample_total_order(data.stats(int(i)), day_rng)
        plans.append(DayPlan(data.tapes[int(i)], order, day_rng, int(i)))
    return plans


def train_iteration(models: Models, data: MarketData, cfg: TrainConfig, iteration: int) -> dict:
    """One outer iteration: gather, update the allocator (tul), update the policy."""
    plans = _plan_days(data, cfg, iteration)
    lr_lstm = nn.linear_anneal(*cfg.lstm_lr, iteration, cfg.outer_iterations)
    lr_tf = nn.linear_anneal(*cfg.tf_lr, iteration, cfg.outer_iterations)
    row = {"iteration": iteration, "lr_lstm": lr_lstm,
           "lr_tf": lr_tf if cfg.mode == "tul" else 0.0}
    if cfg.mode in INTERVAL_MODES:
        results, rollout, tf_batch = run_interval_days(models, cfg, plans)
        row["train_vaa_bps"] = float(np.mean([r.vaa for r in results])) * 1e4
        if tf_batch is not None:
            row.update(tf_update(models, tf_batch, cfg, lr_tf))
    else:
        plan = plans[0]
        k = min(cfg.minute_trajectories, N_MINUTES)
        minutes = np.sort(plan.rng.choice(N_MINUTES, size=k, replace=False))
        _, rollout = run_minute_day(models, cfg, plan, minutes)
    row["mean_reward"] = float(rollout.rewards.sum(axis=0).mean())
    row.update(ppo_update(models, rollout, cfg, lr_lstm,
                          np.random.default_rng([cfg.seed, iteration, 0xA11])))
    return row


def train(cfg: TrainConfig, data: MarketData, out_dir, resume: bool = True) -> Models:
    """Run (or resume) training, writing checkpoints and a CSV log to ``out_dir``.

    Layout: ``model.ckpt`` (final), ``checkpoints/iter_<k>.ckpt`` (periodic),
    ``train_log.csv`` (one row per outer iteration).
    """
    out = Path(out_dir)
    ck_dir = out / "checkpoints"
    ck_dir.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.csv"
    start = 0
    models = None
    if resume:
        found = sorted(ck_dir.glob("iter_*.ckpt"))
        if found:
            models, saved_cfg, start = load_models(found[-1])
            if saved_cfg.to_dict() != cfg.to_dict():
                raise ValueError(f"{found[-1]} was written with a different configuration")
            log.info("resuming from %s at iteration %d", found[-1].name, start)
            _truncate_log(log_path, start)
    if models is None:
        models = build_models(cfg, data.ratios)
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(LOG_COLUMNS)
    if cfg.mode not in LEARNED_MODES:
        start = cfg.outer_iterations
    inner_steps = sum(models.store.steps.get(n, 0) for n in models.store.names("policy/in1/W"))
    t0 = time.perf_counter()
    for it in range(start, cfg.outer_iterations):
        row = train_iteration(models, data, cfg, it)
        inner_steps += row.pop("updates", 0)
        row["inner_steps"] = inner_steps
        row["wall_time_s"] = round(time.perf_counter() - t0, 3)
        with open(log_path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(
                [_fmt(row.get(c, "")) for c in LOG_COLUMNS])
        log.info("iter %d reward %.3f vaa %.2f bps", it, row["mean_reward"],
                 row.get("train_vaa_bps", float("nan")))
        if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save_models(ck_dir / f"iter_{it + 1:07d}.ckpt", models, cfg, it + 1)
    save_models(out / "model.ckpt", models, cfg, cfg.outer_iterations)
    return models


def _truncate_log(path: Path, start: int) -> None:
    """Drop log rows for iterations at or after ``start`` (written past the checkpoint)."""
    rows = []
    if path.exists():
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        w.writerows(r for r in rows if r and int(r[0]) < start)


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v
