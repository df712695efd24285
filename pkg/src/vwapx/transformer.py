"""Progressive interval-volume allocator: a one-layer encoder/decoder Transformer.

The encoder reads, for each of the L intervals, a vector of that interval's
volume ratio on N historical days, each through its own embedding. The
decoder predicts the ratios one interval at a time. Its input at step 0 is
an embedding of the premarket book volumes; at step j it is the previous
step's zero-padded ratio vector concatenated with the execution policy's
final hidden state from interval j-1, so the model dimension is L + H.

Step l outputs a distribution over the L - l intervals still to come; its
first entry is the fraction of the still-unallocated volume given to
interval l. The last step has a single entry equal to 1, so the ratios
always sum to one.
"""
from __future__ import annotations

import numpy as np

from . import nn
from .nn import Tensor


def normalize_premarket(premarket) -> np.ndarray:
    """Premarket volumes scaled to sum 1 (zeros stay zeros)."""
    p = np.asarray(premarket, dtype=np.float64)
    s = p.sum(axis=-1, keepdims=True)
    return np.divide(p, s, out=np.zeros_like(p), where=s > 0)


class UShapeTransformer:
    """Parameters live in ``store`` under ``encoder/`` and ``decoder/``."""

    def __init__(self, store: nn.ParamStore, L: int = 19, N: int = 20, hidden: int = 129,
                 heads: int = 4, ffn: int = 128, rng=None, premarket_dim: int = 10):
        rng = np.random.default_rng(0) if rng is None else rng
        d = L + hidden
        if d % heads:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        self.store, self.L, self.N, self.hidden, self.heads, self.d = store, L, N, hidden, heads, d
        bound = 1.0 / np.sqrt(N)
        self.embed_W = store.add("encoder/embed/W", rng.uniform(-bound, bound, (L, N, d)))
        self.embed_b = store.add("encoder/embed/b", np.zeros((L, d)))
        self.enc_attn = nn.init_attention(store, "encoder/attn", d, rng)
        self.enc_ln1 = nn.init_layer_norm(store, "encoder/ln1", d)
        self.enc_ffn = nn.init_pffn(store, "encoder/ffn", d, ffn, rng)
        self.enc_ln2 = nn.init_layer_norm(store, "encoder/ln2", d)
        self.pre = nn.init_linear(store, "decoder/premarket", premarket_dim, d, rng)
        self.dec_self = nn.init_attention(store, "decoder/self_attn", d, rng)
        self.dec_ln1 = nn.init_layer_norm(store, "decoder/ln1", d)
        self.dec_cross = nn.init_attention(store, "decoder/cross_attn", d, rng)
        self.dec_ln2 = nn.init_layer_norm(store, "decoder/ln2", d)
        self.dec_ffn = nn.init_pffn(store, "decoder/ffn", d, ffn, rng)
        self.dec_ln3 = nn.init_layer_norm(store, "decoder/ln3", d)
        self.out = [nn.init_linear(store, f"decoder/out/{l}", d, L - l, rng) for l in range(L)]
        self.pe = nn.positional_encoding(L, d)

    # ------------------------------------------------------------ encoder

    def encode(self, E_in) -> Tensor:
        """(..., L, N) historical ratios -> (..., L, d) encoder output."""
        E_in = np.asarray(E_in, dtype=np.float64)
        if E_in.shape[-2:] != (self.L, self.N):
            raise ValueError(f"encode: expected (..., {self.L}, {self.N}), got {E_in.shape}")
        x = nn.matmul(E_in[..., :, None, :], self.embed_W)
        x = nn.reshape(x, E_in.shape[:-1] + (self.d,)) + self.embed_b + self.pe
        ln = lambda t, p: nn.layer_norm(t, p["gain"], p["bias"])
        a = ln(x + nn.multi_head_attention(x, x, self.enc_attn, self.heads), self.enc_ln1)
        return ln(a + nn.pffn(a, self.enc_ffn), self.enc_ln2)

    def build_d0(self, premarket) -> Tensor:
        """Decoder input at step 0 from (already normalized) premarket volumes."""
        return nn.linear(np.asarray(premarket, dtype=np.float64), self.pre["W"], self.pre["b"])

    # ------------------------------------------------------------ decoder

    def start(self, E_in, premarket) -> "DecodeSession":
        """Begin progressive decoding for a batch of days.

        ``E_in`` is (B, L, N) and ``premarket`` (B, 10) raw volumes.
        """
        E_out = self.encode(E_in)
        return DecodeSession(self, E_out, self.build_d0(normalize_premarket(premarket)))

    def _decoder_block(self, x, k_self, v_self, k_cross, v_cross, mask=None):
        ln = lambda t, p: nn.layer_norm(t, p["gain"], p["bias"])
        a = ln(x + nn.attend(x, k_self, v_self, self.dec_self, self.heads, mask), self.dec_ln1)
        b = ln(a + nn.attend(a, k_cross, v_cross, self.dec_cross, self.heads), self.dec_ln2)
        return ln(b + nn.pffn(b, self.dec_ffn), self.dec_ln3)

    def decoder_full(self, D_in, E_out) -> Tensor:
        """Masked pass over a whole decoder input sequence (B, n, d); row j of
        the result equals what progressive decoding produced at step j."""
        n = D_in.shape[-2]
        x = D_in + self.pe[:n]
        k, v = nn.project_kv(x, self.dec_self, self.heads)
        kc, vc = nn.project_kv(E_out, self.dec_cross, self.heads)
        return self._decoder_block(x, k, v, kc, vc, nn.causal_mask(n))

    def head(self, l: int, y) -> Tensor:
        """Softmax over the L - l remaining intervals, zero-padded to width L."""
        p = nn.softmax(nn.linear(y, self.out[l]["W"], self.out[l]["b"]), axis=-1)
        if l == 0:
            return p
        return nn.concat([np.zeros(p.shape[:-1] + (l,)), p], axis=-1)

    def forward(self, E_in, premarket, h_prev) -> "DecodeSession":
        """All L steps with gradients; ``h_prev`` (B, L-1, H) holds the policy's
        final hidden state for intervals 0..L-2 (treated as constants)."""
        s = self.start(E_in, premarket)
        h_prev = np.asarray(h_prev, dtype=np.float64)
        for l in range(self.L):
            s.step(None if l == 0 else h_prev[:, l - 1])
        return s


class DecodeSession:
    """Progressive decoding state for a batch of days.

    Call ``step`` once per interval; for l >= 1 pass the policy's last hidden
    state from interval l - 1. Keys and values of earlier decoder inputs are
    cached, which is equivalent to causal masking in a full pass.
    """

    def __init__(self, model: UShapeTransformer, E_out: Tensor, d0: Tensor):
        self.model = model
        self.E_out = E_out
        self.kc, self.vc = nn.project_kv(E_out, model.dec_cross, model.heads)
        self.inputs: list[Tensor] = [d0]
        self.keys: list[Tensor] = []
        self.values: list[Tensor] = []
        self.d_out: list[Tensor] = []
        self.u: list[Tensor] = []
        self.remaining = None  # fraction of the day not yet allocated

    @property
    def l(self) -> int:
        return len(self.u)

    def step(self, h_prev=None) -> Tensor:
        m = self.model
        l = self.l
        if l >= m.L:
            raise RuntimeError("all intervals already decoded")
        if l > 0:
            if h_prev is None:
                raise ValueError(f"decode step {l} needs the previous interval's hidden state")
            h_prev = np.asarray(h_prev, dtype=np.float64)
            self.inputs.append(nn.concat([self.d_out[-1], h_prev], axis=-1))
        x = nn.reshape(self.inputs[-1], self.inputs[-1].shape[:-1] + (1, m.d)) + m.pe[l]
        k, v = nn.project_kv(x, m.dec_self, m.heads)
        self.keys.append(k)
        self.values.append(v)
        k_all = self.keys[0] if l == 0 else nn.concat(self.keys, axis=-2)
        v_all = self.values[0] if l == 0 else nn.concat(self.values, axis=-2)
        y = m._decoder_block(x, k_all, v_all, self.kc, self.vc)
        d = m.head(l, nn.reshape(y, y.shape[:-2] + (m.d,)))
        first = nn.getitem(d, (Ellipsis, l))
        if l == 0:
            u = first
            self.remaining = 1.0 - first
        else:
            u = self.remaining * first
            self.remaining = self.remaining * (1.0 - first)
        self.d_out.append(d)
        self.u.append(u)
        return u

    def u_pred(self) -> Tensor:
        return nn.stack(self.u, axis=-1)

    def decoder_inputs(self) -> Tensor:
        return nn.stack(self.inputs, axis=-2)


def interval_unit_prices(multipliers, prices) -> np.ndarray:
    """Average fill price per share of one interval for frozen action multipliers.

    Step t takes a fraction ``a_t / T`` of the interval order, capped by the
    fraction still open; the last step takes the rest. ``multipliers`` and
    ``prices`` are (..., T).
    """
    a = np.asarray(multipliers, dtype=np.float64)
    p = np.asarray(prices, dtype=np.float64)
    T = a.shape[-1]
    frac = np.empty_like(a)
    left = np.ones(a.shape[:-1])
    for t in range(T - 1):
        frac[..., t] = np.minimum(a[..., t] / T, left)
        left = left - frac[..., t]
    frac[..., T - 1] = left
    return (frac * p).sum(axis=-1)


def tf_loss(u_true, u_pred, unit_prices, vwap, c1: float = 0.5, c2: float = 0.5) -> Tensor:
    """Ratio-tracking loss plus the price term, averaged over days.

    ``u_pred`` is a (B, L) tensor; the model price is ``sum_l u_pred[l] *
    unit_prices[l]`` so its gradient reaches the ratios while the executed
    schedule within each interval stays fixed.
    """
    vwap = np.asarray(vwap, dtype=np.float64)
    if np.any(vwap <= 0):
        raise ValueError("tf_loss: VWAP must be positive")
    u_pred = nn.as_tensor(u_pred)
    L = u_pred.shape[-1]
    diff = u_pred - np.asarray(u_true, dtype=np.float64)
    ratio_term = (c1 / L) * nn.square(diff).sum(axis=-1)
    mp = (u_pred * np.asarray(unit_prices, dtype=np.float64)).sum(axis=-1)
    price_term = c2 * nn.tabs((mp - vwap) / vwap)
    return (ratio_term + price_term).mean()


def tf_loss_parts(u_true, u_pred, unit_prices, vwap, c1: float = 0.5, c2: float = 0.5):
    """The two terms of ``tf_loss`` as floats, for logging."""
    u = np.asarray(u_pred.data if isinstance(u_pred, Tensor) else u_pred)
    L = u.shape[-1]
    ratio = (c1 / L) * ((u - u_true) ** 2).sum(axis=-1)
    mp = (u * unit_prices).sum(axis=-1)
    return float(ratio.mean()), float((c2 * np.abs((mp - vwap) / vwap)).mean())
