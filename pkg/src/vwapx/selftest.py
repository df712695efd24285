"""Quick invariant suites run by ``vwapx selftest``.

Each suite returns (ok, detail). They are lighter versions of the property
tests in the test suite, meant as an installation sanity check.
"""
from __future__ import annotations

import time

import numpy as np

from . import nn
from .env import IntervalEpisode, reward_fn
from .market import N_INTERVALS
from .policy import LSTMPolicy
from .synth import GeneratorConfig, synth_series
from .trainer import (DayPlan, MarketData, TrainConfig, build_models, clipped_surrogate,
                      compute_returns_advantages, cumulative_round, run_interval_days,
                      run_oracle_day)
from .transformer import UShapeTransformer, tf_loss

GRAD_TOL = 1e-3


def _jitter(store, rng, scale):
    for _, t in store.items():
        t.data = t.data + scale * rng.normal(size=t.shape)


def suite_gradients() -> tuple[bool, str]:
    rng = np.random.default_rng(0)
    worst = {}
    a = nn.Tensor(rng.normal(size=(3, 4)))
    b = nn.Tensor(rng.uniform(1, 2, size=(4, 5)))
    w = rng.normal(size=(3, 5))
    ops = {
        "matmul+tanh": lambda: (nn.tanh(nn.matmul(a, b)) * w).sum(),
        "log_softmax": lambda: (nn.log_softmax(nn.matmul(a, b)) * w).sum(),
        "layer_norm": lambda: (nn.layer_norm(nn.matmul(a, b), np.ones(5), np.zeros(5)) * w).sum(),
        "div+log": lambda: (nn.log(b) / (nn.square(a).sum() + 1.0)).sum(),
    }
    for name, f in ops.items():
        worst[name] = max(nn.check_gradients(f, {"a": a, "b": b}).values())

    store = nn.ParamStore()
    pol = LSTMPolicy(store, 4, rng, embed=5)
    _jitter(store, rng, 0.3)
    T, B = 3, 2
    x = rng.normal(size=(T, B, 22))
    pa, pr = rng.uniform(0, 2, (T, B)), rng.integers(-1, 2, (T, B)).astype(float)
    acts = rng.integers(0, 21, (T, B))
    ww = rng.normal(size=(3, T, B))

    def lstm_loss():
        lp, v, ent, _ = pol.evaluate_actions(x, pa, pr, acts)
        return (lp * ww[0]).sum() + (v * ww[1]).sum() + (ent * ww[2]).sum()

    worst["lstm_policy_3_steps"] = max(nn.check_gradients(lstm_loss, dict(store.items())).values())

    store = nn.ParamStore()
    m = UShapeTransformer(store, L=4, N=3, hidden=4, heads=4, ffn=6, rng=rng)
    _jitter(store, rng, 0.2)
    E = rng.dirichlet(np.ones(4), size=(2, 3)).transpose(0, 2, 1)
    pm, hp = rng.uniform(1, 3, (2, 10)), rng.normal(size=(2, 3, 4))
    u_true = rng.dirichlet(np.ones(4), 2)
    prices = rng.uniform(99, 101, (2, 4))
    loss = lambda: tf_loss(u_true, m.forward(E, pm, hp).u_pred(), prices, [100.0, 100.2])
    worst["transformer_pipeline"] = max(nn.check_gradients(loss, dict(store.items())).values())
    bad = {k: v for k, v in worst.items() if not v < GRAD_TOL}
    return not bad, f"max relative error {max(worst.values()):.2e}" + (f"; failing {bad}" if bad else "")


def suite_structure(n: int = 100) -> tuple[bool, str]:
    rng = np.random.default_rng(1)
    worst = 0.0
    for k in range(n):
        store = nn.ParamStore()
        m = UShapeTransformer(store, 19, 20, 9, 4, 16, np.random.default_rng([1, k]))
        _jitter(store, rng, rng.uniform(0, 2))
        E = rng.dirichlet(np.ones(19), size=(1, 20)).transpose(0, 2, 1)
        with nn.no_grad():
            u = m.forward(E, rng.uniform(0, 5, (1, 10)), rng.normal(size=(1, 18, 9))).u_pred().data
        if u.min() < 0:
            return False, f"negative ratio {u.min()}"
        worst = max(worst, abs(u.sum() - 1.0))
    tape = synth_series(GeneratorConfig(), 1, seed=3).tapes[0]
    for k in range(n):
        order = int(rng.integers(0, 200_000))
        split = cumulative_round(order, rng.dirichlet(np.ones(N_INTERVALS)))
        if split.sum() != order or split.min() < 0:
            return False, f"interval split of {order} sums to {split.sum()}"
        ep = IntervalEpisode(tape, int(rng.integers(N_INTERVALS)), int(split.max()))
        ep.reset()
        while not ep.done:
            ep.step(int(rng.integers(21)))
        if ep.executed().sum() != ep.order:
            return False, f"interval executed {ep.executed().sum()} of {ep.order}"
    return bool(worst < 1e-9), f"max |sum u - 1| = {worst:.1e} over {n} models; {n} episodes exact"


def suite_oracle(n_days: int = 5) -> tuple[bool, str]:
    data = MarketData.from_synthetic(synth_series(GeneratorConfig(), n_days, seed=4))
    rng = np.random.default_rng(2)
    worst = 0.0
    for i, tape in enumerate(data.tapes):
        plan = DayPlan(tape, int(rng.integers(1_000, 2_000_000)), rng)
        worst = max(worst, run_oracle_day(plan).vaa * 1e4)
    grid_ok = True
    for o_star in range(1, 101):
        for o in range(0, 200, 2):
            m = abs(o - o_star) / o_star
            want = 1 if m < 0.01 else (0 if m < 0.05 else -1)
            grid_ok &= reward_fn(o, o_star) == want
    ok = bool(worst < 0.01 and grid_ok)
    return ok, f"oracle max VAA {worst:.2e} bps over {n_days} days; reward grid {'ok' if grid_ok else 'MISMATCH'}"


def suite_ppo() -> tuple[bool, str]:
    cases = [clipped_surrogate(1.5, 1.0, 0.2) == 1.2, clipped_surrogate(0.5, -1.0, 0.2) == -0.8,
             clipped_surrogate(1.0, 0.37, 0.2) == 0.37]
    rng = np.random.default_rng(3)
    r = rng.integers(-1, 2, size=(20, 50)).astype(float)
    v = rng.normal(size=r.shape)
    v_targ, adv = compute_returns_advantages(r, v, 1.0)
    brute = np.array([[r[t:, b].sum() for b in range(50)] for t in range(20)])
    ok = all(cases) and np.array_equal(v_targ, brute) and np.array_equal(adv, brute - v)
    return bool(ok), "clip cases and suffix-sum returns"


def suite_rollout() -> tuple[bool, str]:
    data = MarketData.from_synthetic(synth_series(GeneratorConfig(), 2, seed=5))
    cfg = TrainConfig(mode="hul", hidden=8, policy_embed=8)
    models = build_models(cfg, data.ratios)
    plans = [DayPlan(t, 100_000 + i, np.random.default_rng([5, i])) for i, t in enumerate(data.tapes)]
    res, ro, _ = run_interval_days(models, cfg, plans)
    if any(r.interval_orders.sum() != r.order for r in res):
        return False, "interval orders do not add up to the day order"
    lp, _, _, _ = models.policy.evaluate_actions(ro.x, ro.prev_a, ro.prev_r, ro.actions)
    same = bool(np.array_equal(lp.data, ro.logp))
    return same, f"{ro.size} trajectories; replayed log-probs {'bit-exact' if same else 'DIFFER'}"


SUITES = {"gradients": suite_gradients, "structure": suite_structure, "oracle": suite_oracle,
          "ppo-arithmetic": suite_ppo, "rollout-replay": suite_rollout}


def run_all(out=print) -> bool:
    all_ok = True
    for name, fn in SUITES.items():
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as e:  # a crash is a failure of that suite, keep going
            ok, detail = False, f"{type(e).__name__}: {e}"
        all_ok &= ok
        out(f"{'PASS' if ok else 'FAIL'}  {name:<15} {detail} ({time.perf_counter() - t0:.1f}s)")
    return all_ok
