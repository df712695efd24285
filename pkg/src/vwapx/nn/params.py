"""Named parameter registry, Adam, learning-rate schedule, checkpoint container."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

CHECKPOINT_MAGIC = b"VWAPX-CKPT"
CHECKPOINT_VERSION = 1


class ParamStore:
    """Flat mapping of parameter name -> Tensor with Adam moment buffers.

    Names are unique; model components use path-like prefixes
    (``policy/``, ``encoder/``, ``decoder/``) so optimizers and checkpoints
    can address a subset.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        self.steps[name] = 0
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def items(self, prefix: str = ""):
        return [(n, t) for n, t in self._params.items() if n.startswith(prefix)]

    def zero_grad(self, prefix: str = "") -> None:
        for _, t in self.items(prefix):
            t.grad = np.zeros_like(t.data)

    def grad_norm(self, prefix: str = "") -> float:
        return float(np.sqrt(sum(float((t.grad * t.grad).sum()) for _, t in self.items(prefix))))

    def clip_grad_norm(self, max_norm: float, prefix: str = "") -> float:
        norm = self.grad_norm(prefix)
        if norm > max_norm:
            scale = max_norm / (norm + 1e-12)
            for _, t in self.items(prefix):
                t.grad *= scale
        return norm

    def num_values(self, prefix: str = "") -> int:
        return sum(t.data.size for _, t in self.items(prefix))

    # ------------------------------------------------------------ (de)serialization

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, t in self._params.items():
            out[f"param/{name}"] = t.data
            out[f"adam_m/{name}"] = self._m[name]
            out[f"adam_v/{name}"] = self._v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], steps: dict[str, int]) -> None:
        for name, t in self._params.items():
            value = arrays[f"param/{name}"]
            if value.shape != t.shape:
                raise ValueError(f"checkpoint shape {value.shape} != {t.shape} for {name}")
            t.data = value.copy()
            t.grad = np.zeros_like(t.data)
            self._m[name] = arrays[f"adam_m/{name}"].copy()
            self._v[name] = arrays[f"adam_v/{name}"].copy()
            self.steps[name] = int(steps[name])


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, prefix: str = "") -> None:
    """One Adam update on every parameter under ``prefix`` using its accumulated grad."""
    if lr == 0.0:
        return
    for name, t in store.items(prefix):
        g = t.grad
        store.steps[name] += 1
        k = store.steps[name]
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        denom = np.sqrt(v / (1.0 - beta2 ** k))
        denom += eps
        step = m * (lr / (1.0 - beta1 ** k))
        step /= denom
        t.data = t.data - step


def linear_anneal(lr_start: float, lr_end: float, step: int, total: int) -> float:
    if total <= 0:
        raise ValueError("linear_anneal: total must be positive")
    return lr_start + (lr_end - lr_start) * min(step / total, 1.0)


# ---------------------------------------------------------------- checkpoint file
# Layout: magic, u32 version, u64 header length, JSON header, raw little-endian
# float64 payload. The header lists name/shape/offset per tensor plus free-form
# metadata. Written bytes depend only on the content, so equal states give
# byte-identical files.

def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blob = a.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<IQ", raw, pos)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += struct.calcsize("<IQ")
    header = json.loads(raw[pos:pos + hlen])
    base = pos + hlen
    arrays = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8", count=count,
                                          offset=start).reshape(e["shape"]).copy()
    return arrays, header["meta"]
