"""Recurrent actor-critic for the within-interval execution decisions.

Two ReLU linear layers embed the normalized state; the embedding plus the
previous action multiplier and reward feed an LSTM cell whose hidden state
drives a 21-way policy head and a scalar value head.

Gathering steps the network one cell at a time for a batch of episodes;
``evaluate_actions`` replays whole sequences with the recurrence fused into
one graph node. Both paths do the same arithmetic on the same matrix shapes,
so replaying a gathered batch reproduces its log-probabilities bit for bit.
"""
from __future__ import annotations

import numpy as np

from . import nn
from .env import N_ACTIONS, STATE_DIM

EMBED_DIM = 128


def normalize_state(public, elapsed, remaining, price_ref: float, order, horizon: int
                    ) -> np.ndarray:
    """Map raw state features to the network input (..., 22).

    ``public`` is (..., 20) laid out as bid prices, ask prices, bid volumes,
    ask volumes. Prices are divided by ``price_ref`` (the day's first mid),
    volumes and remaining shares by the episode order, elapsed steps by the
    horizon.
    """
    public = np.asarray(public, dtype=np.float64)
    scale = np.maximum(np.asarray(order, dtype=np.float64), 1.0)[..., None]
    out = np.empty(public.shape[:-1] + (STATE_DIM,))
    out[..., :10] = public[..., :10] / price_ref
    out[..., 10:20] = public[..., 10:20] / scale
    out[..., 20] = np.asarray(elapsed, dtype=np.float64) / horizon
    out[..., 21] = np.asarray(remaining, dtype=np.float64) / scale[..., 0]
    return out


def _pad_rows(x: np.ndarray) -> np.ndarray:
    # single-row products take a different BLAS path; keep every batch >= 2 rows
    return np.concatenate([x, x], axis=-2) if x.shape[-2] == 1 else x


class LSTMPolicy:
    """Parameters live in ``store`` under ``prefix``."""

    def __init__(self, store: nn.ParamStore, hidden: int = 128, rng=None,
                 prefix: str = "policy/", embed: int = EMBED_DIM):
        rng = np.random.default_rng(0) if rng is None else rng
        self.store, self.hidden, self.prefix = store, hidden, prefix
        p = prefix
        self.in1 = nn.init_linear(store, p + "in1", STATE_DIM, embed, rng)
        self.in2 = nn.init_linear(store, p + "in2", embed, embed, rng)
        self.lstm = nn.init_lstm(store, p + "lstm", embed + 2, hidden, rng)
        self.pi = nn.init_linear(store, p + "pi", hidden, N_ACTIONS, rng)
        self.v = nn.init_linear(store, p + "v", hidden, 1, rng)

    def initial_state(self, batch: int) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros((batch, self.hidden)), np.zeros((batch, self.hidden))

    def _heads(self, h):
        # one product for both heads keeps the output width above one column
        W = nn.concat([self.pi["W"], self.v["W"]], axis=1)
        b = nn.concat([self.pi["b"], self.v["b"]], axis=0)
        out = nn.linear(h, W, b)
        logp = nn.log_softmax(nn.getitem(out, (Ellipsis, slice(0, N_ACTIONS))), axis=-1)
        return logp, nn.getitem(out, (Ellipsis, N_ACTIONS))

    def _gate_inputs(self, x, prev_a, prev_r):
        z = nn.relu(nn.linear(x, self.in1["W"], self.in1["b"]))
        z = nn.relu(nn.linear(z, self.in2["W"], self.in2["b"]))
        extra = np.stack([prev_a, prev_r], axis=-1)
        return nn.linear(nn.concat([z, extra], axis=-1), self.lstm["W_x"], self.lstm["b"])

    def step(self, x, prev_a, prev_r, h, c):
        """One batched step without gradients.

        ``x`` (B, 22), ``prev_a``/``prev_r`` (B,), ``h``/``c`` (B, H). Returns
        (log-probabilities (B, 21), values (B,), h', c').
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != STATE_DIM or h.shape[-1] != self.hidden:
            raise ValueError(f"policy step: state {x.shape} / hidden {h.shape} mismatch")
        B = x.shape[0]
        pad = B == 1
        if pad:
            x, h, c = _pad_rows(x), _pad_rows(h), _pad_rows(c)
            prev_a, prev_r = np.repeat(prev_a, 2), np.repeat(prev_r, 2)
        with nn.no_grad():
            xg = self._gate_inputs(x, np.asarray(prev_a, float), np.asarray(prev_r, float))
            h2, c2 = nn.lstm_recurrent(xg, h, c, self.lstm["W_h"])
            logp, v = self._heads(h2)
        return logp.data[:B], v.data[:B], h2.data[:B], c2.data[:B]

    def evaluate_actions(self, x, prev_a, prev_r, actions):
        """Replay whole episodes under the current parameters.

        Inputs are time-major: ``x`` (T, B, 22), the others (T, B). Returns
        graph tensors (log_prob of ``actions``, value, entropy), each (T, B),
        plus the final hidden state as an array (B, H).
        """
        x = np.asarray(x, dtype=np.float64)
        actions = np.asarray(actions)
        T, B = x.shape[:2]
        if x.shape[2] != STATE_DIM or np.shape(prev_a) != (T, B) or np.shape(prev_r) != (T, B) \
                or actions.shape != (T, B):
            raise ValueError("evaluate_actions: sequence shapes do not line up")
        pad = B == 1
        if pad:
            x, actions = _pad_rows(x), _pad_rows(actions[..., None])[..., 0]
            prev_a = np.repeat(prev_a, 2, axis=1)
            prev_r = np.repeat(prev_r, 2, axis=1)
        xg = self._gate_inputs(x, np.asarray(prev_a, float), np.asarray(prev_r, float))
        h0, c0 = self.initial_state(x.shape[1])
        hs = nn.lstm_sequence(xg, h0, c0, self.lstm["W_h"])
        logp_all, values = self._heads(hs)
        tt, bb = np.indices(actions.shape)
        logp = logp_all[tt, bb, actions]
        entropy = -(nn.exp(logp_all) * logp_all).sum(axis=-1)
        h_last = hs.data[-1]
        if pad:
            sl = (slice(None), slice(0, 1))
            return (nn.getitem(logp, sl), nn.getitem(values, sl), nn.getitem(entropy, sl),
                    h_last[:1])
        return logp, values, entropy, h_last


def policy_step(policy: LSTMPolicy, x, prev_action: float, prev_reward: float, rec):
    """Single-state convenience wrapper: returns (pi (21,), V, (h', c'))."""
    h, c = rec
    logp, v, h2, c2 = policy.step(np.asarray(x)[None], np.array([prev_action]),
                                  np.array([prev_reward]), h[None], c[None])
    return np.exp(logp[0]), float(v[0]), (h2[0], c2[0])


def sample_actions(logp: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Categorical draws, one per row of log-probabilities (B, 21)."""
    cdf = np.cumsum(np.exp(logp), axis=-1)
    u = rng.random(logp.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, N_ACTIONS - 1)


def sample_action(pi, rng: np.random.Generator) -> tuple[int, float]:
    """Draw one action index from ``pi``; returns (index, log pi[index])."""
    pi = np.asarray(pi, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logp = np.log(pi)
    idx = int(sample_actions(logp[None], rng)[0])
    return idx, float(logp[idx])


def entropy(pi) -> float:
    pi = np.asarray(pi, dtype=np.float64)
    nz = pi > 0
    return float(-(pi[nz] * np.log(pi[nz])).sum())
