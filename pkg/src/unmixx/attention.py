"""F3A block: self-attention plus cross-source (reverse) attention over sub-bands or frames.

Feature tensors are plain arrays of shape (N, K, T): channels, sub-bands, frames.
The channel axis is split in two halves, one per singer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

FREQUENCY = "frequency"
TIME = "time"

_LN_EPS = 1e-5


@dataclass(frozen=True)
class AttentionConfig:
    heads: int = 4
    embed_per_head: int = 8
    axis: str = FREQUENCY
    residual: bool = True
    max_width: int = 4096  # cap on heads * embed_per_head

    def __post_init__(self):
        if self.heads < 1 or self.embed_per_head < 1:
            raise ValueError("heads and embed_per_head must be positive")
        if self.axis not in (FREQUENCY, TIME):
            raise ValueError(f"axis must be {FREQUENCY!r} or {TIME!r}")
        if self.heads * self.embed_per_head > self.max_width:
            raise ValueError("heads * embed_per_head exceeds the configured cap")


@dataclass(frozen=True)
class QKVProjections:
    """1x1 convolution weights. q, k, q_rev: (A*E, N); v, out: (N, N)."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    q_rev: np.ndarray
    out: np.ndarray
    q_bias: np.ndarray
    k_bias: np.ndarray
    v_bias: np.ndarray
    q_rev_bias: np.ndarray
    out_bias: np.ndarray

    @property
    def n_channels(self) -> int:
        return self.v.shape[1]

    @property
    def width(self) -> int:
        return self.q.shape[0]

    def check(self, n_channels: int, cfg: AttentionConfig) -> None:
        ae = cfg.heads * cfg.embed_per_head
        for name in ("q", "k", "q_rev"):
            if getattr(self, name).shape != (ae, n_channels):
                raise ValueError(f"{name} must be ({ae}, {n_channels}), got {getattr(self, name).shape}")
        for name in ("v", "out"):
            if getattr(self, name).shape != (n_channels, n_channels):
                raise ValueError(f"{name} must be ({n_channels}, {n_channels})")

    @classmethod
    def random(cls, n_channels: int, cfg: AttentionConfig, rng) -> "QKVProjections":
        ae = cfg.heads * cfg.embed_per_head
        s = 1.0 / np.sqrt(n_channels)
        return cls(
            q=rng.standard_normal((ae, n_channels)) * s,
            k=rng.standard_normal((ae, n_channels)) * s,
            v=rng.standard_normal((n_channels, n_channels)) * s,
            q_rev=rng.standard_normal((ae, n_channels)) * s,
            out=rng.standard_normal((n_channels, n_channels)) * s,
            q_bias=np.zeros(ae),
            k_bias=np.zeros(ae),
            v_bias=np.zeros(n_channels),
            q_rev_bias=np.zeros(ae),
            out_bias=np.zeros(n_channels),
        )

    @classmethod
    def zeros(cls, n_channels: int, cfg: AttentionConfig) -> "QKVProjections":
        ae = cfg.heads * cfg.embed_per_head
        return cls(
            *(np.zeros((ae, n_channels)) for _ in range(2)),
            np.zeros((n_channels, n_channels)),
            np.zeros((ae, n_channels)),
            np.zeros((n_channels, n_channels)),
            np.zeros(ae), np.zeros(ae), np.zeros(n_channels), np.zeros(ae), np.zeros(n_channels),
        )

    def arrays(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass(frozen=True)
class F3ABlock:
    proj: QKVProjections
    cfg: AttentionConfig = field(default_factory=AttentionConfig)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return f3a_forward(z, self.proj, self.cfg)


def check_features(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise ValueError(f"feature tensor must be N x K x T, got shape {z.shape}")
    if z.shape[0] % 2:
        raise ValueError(f"channel count must be even, got {z.shape[0]}")
    if not np.all(np.isfinite(z)):
        raise ValueError("feature tensor has non-finite entries")
    return z


def reverse_split_swap(z: np.ndarray) -> np.ndarray:
    """Swap the front and back channel halves."""
    z = np.asarray(z)
    n = z.shape[0]
    if n % 2:
        raise ValueError(f"channel count must be even, got {n}")
    h = n // 2
    return np.concatenate([z[h:], z[:h]], axis=0)


def conv1x1(z: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k, t = z.shape
    return (w @ z.reshape(n, k * t)).reshape(-1, k, t) + b[:, None, None]


def channel_layer_norm(z: np.ndarray) -> np.ndarray:
    mu = z.mean(axis=0, keepdims=True)
    var = z.var(axis=0, keepdims=True)
    return (z - mu) / np.sqrt(var + _LN_EPS)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(logits, axis=axis, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=axis, keepdims=True)


def _to_tokens(x: np.ndarray, heads: int, axis: str) -> np.ndarray:
    """(heads*D, K, T) -> (heads, L, D*other) with L the attended axis length."""
    hd, k, t = x.shape
    x = x.reshape(heads, hd // heads, k, t)
    if axis == FREQUENCY:
        return x.transpose(0, 2, 1, 3).reshape(heads, k, -1)
    return x.transpose(0, 3, 1, 2).reshape(heads, t, -1)


def _from_tokens(x: np.ndarray, d: int, k: int, t: int, axis: str) -> np.ndarray:
    heads = x.shape[0]
    if axis == FREQUENCY:
        return x.reshape(heads, k, d, t).transpose(0, 2, 1, 3).reshape(heads * d, k, t)
    return x.reshape(heads, t, d, k).transpose(0, 2, 3, 1).reshape(heads * d, k, t)


def attention_weights(q: np.ndarray, k: np.ndarray, cfg: AttentionConfig, negate: bool = False) -> np.ndarray:
    """Per-head attention matrices from projected (A*E, K, T) tensors.

    Frequency attention flattens (E, T) per sub-band and yields K x K
    matrices scaled by sqrt(E*T); time attention flattens (E, K) per frame
    and yields T x T matrices scaled by sqrt(E*K). ``negate`` flips the sign
    of the logits before the softmax. Returns shape (A, L, L).
    """
    _, n_k, n_t = q.shape
    other = n_t if cfg.axis == FREQUENCY else n_k
    scale = np.sqrt(cfg.embed_per_head * other)
    qt = _to_tokens(q, cfg.heads, cfg.axis)
    kt = _to_tokens(k, cfg.heads, cfg.axis)
    with np.errstate(over="ignore", invalid="ignore"):
        logits = np.matmul(qt, kt.transpose(0, 2, 1)) / scale
    if negate:
        logits = -logits
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite attention logits")
    return softmax(logits, axis=-1)


def apply_attention(weights: np.ndarray, v: np.ndarray, cfg: AttentionConfig) -> np.ndarray:
    n, n_k, n_t = v.shape
    vt = _to_tokens(v, cfg.heads, cfg.axis)
    o = np.matmul(weights, vt)
    return _from_tokens(o, n // cfg.heads, n_k, n_t, cfg.axis)


def cs_attention(q, k, v, q_rev, cfg: AttentionConfig) -> np.ndarray:
    """Average of self-attention and negated cross-source attention applied to ``v``."""
    a_self = attention_weights(q, k, cfg, negate=False)
    a_cs = attention_weights(q_rev, k, cfg, negate=True)
    return 0.5 * (apply_attention(a_self, v, cfg) + apply_attention(a_cs, v, cfg))


def f3a_forward(z: np.ndarray, proj: QKVProjections, cfg: AttentionConfig) -> np.ndarray:
    """One F3A block along ``cfg.axis``: pre-norm, CS attention, output 1x1 conv, residual."""
    z = check_features(z)
    n = z.shape[0]
    if n % cfg.heads:
        raise ValueError(f"heads ({cfg.heads}) must divide channel count ({n})")
    proj.check(n, cfg)
    zn = channel_layer_norm(z)
    q = conv1x1(zn, proj.q, proj.q_bias)
    k = conv1x1(zn, proj.k, proj.k_bias)
    v = conv1x1(zn, proj.v, proj.v_bias)
    q_rev = conv1x1(reverse_split_swap(zn), proj.q_rev, proj.q_rev_bias)
    o = conv1x1(cs_attention(q, k, v, q_rev, cfg), proj.out, proj.out_bias)
    return z + o if cfg.residual else o


def interleaved_stack(
    z: np.ndarray,
    blocks: Sequence[tuple],
    repeats: int | None = None,
    pre_stage: Callable[[np.ndarray, int], np.ndarray] | None = None,
) -> np.ndarray:
    """Apply (frequency, time) block pairs in order.

    ``pre_stage(z, i)`` runs before the i-th pair; it is where a
    multi-scale stage would plug in.
    """
    repeats = len(blocks) if repeats is None else repeats
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if len(blocks) < repeats:
        raise ValueError(f"need {repeats} block pairs, got {len(blocks)}")
    for i in range(repeats):
        if pre_stage is not None:
            z = pre_stage(z, i)
        freq_block, time_block = blocks[i]
        z = time_block(freq_block(z))
    return z


# weight blobs: u64 little-endian header length, JSON header, raw little-endian float64 payload


def save_weights(path, arrays: dict, meta: dict | None = None) -> None:
    entries, offset, payload = [], 0, []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.nbytes
        payload.append(a.tobytes())
    header = json.dumps({"meta": meta or {}, "dtype": "<f8", "tensors": entries}).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for chunk in payload:
            f.write(chunk)


def load_weights(path) -> tuple[dict, dict]:
    with open(path, "rb") as f:
        (n,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(n))
        data = f.read()
    arrays = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        a = np.frombuffer(data, dtype="<f8", count=count, offset=e["offset"])
        arrays[e["name"]] = a.reshape(e["shape"]).astype(np.float64)
    return arrays, header.get("meta", {})
