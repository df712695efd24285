import numpy as np
import pytest

from vwapx import nn
from vwapx.nn import check_gradients
from vwapx.policy import (LSTMPolicy, entropy, normalize_state, policy_step, sample_action,
                          sample_actions)


def _policy(hidden=8, seed=0, embed=128):
    store = nn.ParamStore()
    return store, LSTMPolicy(store, hidden, np.random.default_rng(seed), embed=embed)


def _episode_batch(rng, T=20, B=6):
    x = rng.normal(size=(T, B, 22))
    a = rng.integers(0, 21, (T, B))
    prev_a = np.vstack([np.zeros((1, B)), a[:-1] / 10])
    prev_r = np.vstack([np.zeros((1, B)), rng.integers(-1, 2, (T - 1, B))]).astype(float)
    return x, prev_a, prev_r, a


def test_zero_params_give_uniform_policy_and_zero_value():
    store, pol = _policy(16)
    for _, t in store.items():
        t.data[...] = 0
    pi, v, (h, c) = policy_step(pol, np.ones(22), 0.0, 0.0, (np.zeros(16), np.zeros(16)))
    np.testing.assert_allclose(pi, np.full(21, 1 / 21), rtol=1e-15)
    assert v == 0
    assert entropy(pi) == pytest.approx(np.log(21), abs=1e-12)
    assert np.log(21) == pytest.approx(3.0445, abs=1e-4)


def test_policy_sums_to_one_and_is_deterministic():
    rng = np.random.default_rng(3)
    _, pol = _policy(12)
    _, pol2 = _policy(12)
    rec = (rng.normal(size=12), rng.normal(size=12))
    for _ in range(20):
        x = rng.normal(size=22) * 5
        pi, v, rec2 = policy_step(pol, x, 1.3, -1.0, rec)
        pi2, v2, _ = policy_step(pol2, x, 1.3, -1.0, rec)
        assert abs(pi.sum() - 1) < 1e-12
        assert np.array_equal(pi, pi2) and v == v2
        assert 0 <= entropy(pi) <= np.log(21) + 1e-12


def test_dimension_mismatch_raises():
    _, pol = _policy(8)
    with pytest.raises(ValueError):
        pol.step(np.zeros((2, 21)), np.zeros(2), np.zeros(2), *pol.initial_state(2))
    with pytest.raises(ValueError):
        pol.evaluate_actions(np.zeros((3, 2, 22)), np.zeros((3, 2)), np.zeros((2, 2)),
                             np.zeros((3, 2), dtype=int))


def test_sample_action_cases():
    rng = np.random.default_rng(0)
    onehot = np.zeros(21)
    onehot[20] = 1
    assert {sample_action(onehot, rng)[0] for _ in range(200)} == {20}
    pi = np.random.default_rng(1).dirichlet(np.ones(21))
    idx, lp = sample_action(pi, rng)
    assert lp == np.log(pi[idx])
    draws = sample_actions(np.full((100_000, 21), -np.log(21)), np.random.default_rng(2))
    freq = np.bincount(draws, minlength=21) / draws.size
    assert np.all(np.abs(freq - 1 / 21) < 0.01)


def test_replay_reproduces_gathered_log_probs_bitwise():
    rng = np.random.default_rng(4)
    _, pol = _policy(16)
    x, _, _, _ = _episode_batch(rng, 20, 7)
    B = 7
    h, c = pol.initial_state(B)
    pa, pr = np.zeros(B), np.zeros(B)
    acts, lps, vals, pas, prs = [], [], [], [], []
    for t in range(20):
        lp, v, h, c = pol.step(x[t], pa, pr, h, c)
        a = sample_actions(lp, rng)
        pas.append(pa)
        prs.append(pr)
        acts.append(a)
        lps.append(lp[np.arange(B), a])
        vals.append(v)
        pa, pr = a / 10, rng.integers(-1, 2, B).astype(float)
    args = (x, np.array(pas), np.array(prs), np.array(acts))
    lp, v, ent, h_last = pol.evaluate_actions(*args)
    assert np.array_equal(lp.data, np.array(lps))
    assert np.array_equal(v.data, np.array(vals))
    assert np.array_equal(h_last, h)
    assert np.all(np.exp(lp.data - np.array(lps)) == 1.0)
    # a sub-batch replays identically too
    sub = [a[:, 2:5] for a in args]
    assert np.array_equal(pol.evaluate_actions(*sub)[0].data, np.array(lps)[:, 2:5])
    assert np.all(ent.data >= 0) and np.all(ent.data <= np.log(21) + 1e-12)


def test_entropy_limit_of_one_hot():
    logits = np.zeros(21)
    logits[3] = 60.0
    pi = np.exp(logits - logits.max())
    assert entropy(pi / pi.sum()) < 1e-20


def test_bptt_gradient_on_three_step_interval():
    rng = np.random.default_rng(5)
    store, pol = _policy(5, embed=6)
    # zero biases put ReLU inputs exactly on the kink when a whole layer is dead
    for _, t in store.items():
        t.data += 0.3 * rng.normal(size=t.shape)
    x, pa, pr, a = _episode_batch(rng, 3, 2)
    w = rng.normal(size=(3, 3, 2))

    def loss():
        lp, v, ent, _ = pol.evaluate_actions(x, pa, pr, a)
        return (lp * w[0]).sum() + (v * w[1]).sum() + (ent * w[2]).sum()

    errs = check_gradients(loss, dict(store.items()))
    assert max(errs.values()) < 1e-3, errs


def test_normalize_state():
    pub = np.concatenate([np.full(5, 99.0), np.full(5, 101.0), np.full(10, 50.0)])
    out = normalize_state(pub, 5, 30, 100.0, 200, 20)
    np.testing.assert_allclose(out[:10], np.r_[np.full(5, .99), np.full(5, 1.01)])
    np.testing.assert_allclose(out[10:], np.r_[np.full(10, .25), .25, .15])
    assert np.all(np.isfinite(normalize_state(pub, 0, 0, 100.0, 0, 20)))
