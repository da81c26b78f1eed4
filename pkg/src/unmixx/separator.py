"""Two-singer mask-based separation path with untrained seeded weights, plus the ideal-mask oracle."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import attention as att
from .audio import AudioClip, ComplexSpec, StftConfig, istft, stft
from .bandsplit import BandProjection, BandScheme, default_scheme, restore_fullband, split_project

N_SOURCES = 2
IRM_EPS = 1e-12


@dataclass(frozen=True)
class SeparatorConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    scheme: BandScheme | None = None
    n_channels: int = 32
    heads: int = 4
    embed_per_head: int = 8
    repeats: int = 8
    seed: int = 0
    sample_rate: int = 24000

    def __post_init__(self):
        if self.scheme is None:
            object.__setattr__(self, "scheme", default_scheme(self.stft.n_bins, self.sample_rate))
        if self.scheme.n_bins != self.stft.n_bins:
            raise ValueError("band scheme does not match the STFT bin count")
        if self.n_channels % 2 or self.n_channels % self.heads:
            raise ValueError("n_channels must be even and divisible by heads")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    def attention(self, axis: str) -> att.AttentionConfig:
        return att.AttentionConfig(self.heads, self.embed_per_head, axis)

    def to_dict(self) -> dict:
        return {
            "stft": self.stft.to_dict(),
            "scheme": {"edges": list(self.scheme.edges)},
            "n_channels": self.n_channels,
            "heads": self.heads,
            "embed_per_head": self.embed_per_head,
            "repeats": self.repeats,
            "seed": self.seed,
            "sample_rate": self.sample_rate,
            "sources": N_SOURCES,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SeparatorConfig":
        kw = {k: d[k] for k in ("n_channels", "heads", "embed_per_head", "repeats", "seed", "sample_rate") if k in d}
        if "stft" in d:
            kw["stft"] = StftConfig.from_dict(d["stft"])
        if d.get("scheme"):
            kw["scheme"] = BandScheme(tuple(d["scheme"]["edges"]))
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "SeparatorConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class MaskPair:
    first: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        for name in ("first", "second"):
            m = np.clip(np.asarray(getattr(self, name), dtype=np.float64), 0.0, 1.0)
            if not np.all(np.isfinite(m)):
                raise ValueError("masks must be finite")
            object.__setattr__(self, name, m)
        if self.first.shape != self.second.shape:
            raise ValueError("mask shapes differ")

    def __iter__(self):
        return iter((self.first, self.second))


@dataclass(frozen=True)
class SeparatorWeights:
    encoder: BandProjection
    heads: tuple  # one BandProjection per source, fed by its channel half
    blocks: tuple  # (freq F3ABlock, time F3ABlock) per repeat
    mixer_w: tuple  # per repeat, (N, N) weights of the pass-through stage
    mixer_b: tuple

    @classmethod
    def random(cls, cfg: SeparatorConfig) -> "SeparatorWeights":
        rng = np.random.default_rng(cfg.seed)
        n = cfg.n_channels
        encoder = BandProjection.random(cfg.scheme, n, rng)
        heads = tuple(BandProjection.random(cfg.scheme, n, rng, n_inverse_in=n // 2) for _ in range(N_SOURCES))
        blocks, mw, mb = [], [], []
        for _ in range(cfg.repeats):
            fc, tc = cfg.attention(att.FREQUENCY), cfg.attention(att.TIME)
            blocks.append(
                (
                    att.F3ABlock(att.QKVProjections.random(n, fc, rng), fc),
                    att.F3ABlock(att.QKVProjections.random(n, tc, rng), tc),
                )
            )
            mw.append(rng.standard_normal((n, n)) / np.sqrt(n))
            mb.append(np.zeros(n))
        return cls(encoder, heads, tuple(blocks), tuple(mw), tuple(mb))

    def arrays(self) -> dict:
        out = {}

        def put_proj(prefix, p):
            for b in range(len(p.fwd_w)):
                out[f"{prefix}.fwd_w.{b}"] = p.fwd_w[b]
                out[f"{prefix}.fwd_b.{b}"] = p.fwd_b[b]
                out[f"{prefix}.inv_w.{b}"] = p.inv_w[b]
                out[f"{prefix}.inv_b.{b}"] = p.inv_b[b]

        put_proj("encoder", self.encoder)
        for i, h in enumerate(self.heads):
            put_proj(f"head{i}", h)
        for r, (fb, tb) in enumerate(self.blocks):
            for tag, blk in (("freq", fb), ("time", tb)):
                for name, a in blk.proj.arrays().items():
                    out[f"block{r}.{tag}.{name}"] = a
            out[f"mixer{r}.w"] = self.mixer_w[r]
            out[f"mixer{r}.b"] = self.mixer_b[r]
        return out

    def save(self, path, cfg: SeparatorConfig) -> None:
        att.save_weights(path, self.arrays(), {"seed": cfg.seed, "config": cfg.to_dict()})

    @classmethod
    def load(cls, path, cfg: SeparatorConfig) -> "SeparatorWeights":
        arrays, _ = att.load_weights(path)
        k = cfg.scheme.n_bands

        def get_proj(prefix):
            parts = [tuple(arrays[f"{prefix}.{n}.{b}"] for b in range(k)) for n in ("fwd_w", "fwd_b", "inv_w", "inv_b")]
            return BandProjection(*parts)

        blocks = []
        for r in range(cfg.repeats):
            pair = []
            for tag, axis in (("freq", att.FREQUENCY), ("time", att.TIME)):
                names = att.QKVProjections.__dataclass_fields__
                proj = att.QKVProjections(**{n: arrays[f"block{r}.{tag}.{n}"] for n in names})
                pair.append(att.F3ABlock(proj, cfg.attention(axis)))
            blocks.append(tuple(pair))
        return cls(
            get_proj("encoder"),
            tuple(get_proj(f"head{i}") for i in range(N_SOURCES)),
            tuple(blocks),
            tuple(arrays[f"mixer{r}.w"] for r in range(cfg.repeats)),
            tuple(arrays[f"mixer{r}.b"] for r in range(cfg.repeats)),
        )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def make_masks(feat: np.ndarray, cfg: SeparatorConfig, weights: SeparatorWeights) -> MaskPair:
    """Front channel half -> singer 1 mask, back half -> singer 2 mask.

    The real slot of the restored (re, im) logits drives the sigmoid mask.
    """
    h = feat.shape[0] // 2
    logits = [restore_fullband(part, cfg.scheme, head)[..., 0] for part, head in zip((feat[:h], feat[h:]), weights.heads)]
    return MaskPair(_sigmoid(logits[0]), _sigmoid(logits[1]))


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    return x[:n] if x.shape[0] >= n else np.pad(x, (0, n - x.shape[0]))


def apply_masks(mix: AudioClip, masks: MaskPair, cfg: StftConfig = StftConfig(), spec: ComplexSpec | None = None):
    spec = stft(mix, cfg) if spec is None else spec
    outs = []
    for m in masks:
        y = istft(ComplexSpec(spec.grid * m, spec.config, spec.sample_rate)).samples
        outs.append(AudioClip(_fit_length(y, len(mix)), mix.sample_rate))
    return tuple(outs)


def features(mix: AudioClip, cfg: SeparatorConfig, weights: SeparatorWeights) -> np.ndarray:
    spec = stft(mix, cfg.stft)
    z = split_project(spec, cfg.scheme, weights.encoder)

    def mixer(z, i):
        # stand-in for the multi-scale stage: residual 1x1 conv + tanh
        return z + np.tanh(att.conv1x1(z, weights.mixer_w[i], weights.mixer_b[i]))

    return att.interleaved_stack(z, weights.blocks, cfg.repeats, pre_stage=mixer)


def separate(mix: AudioClip, cfg: SeparatorConfig, weights: SeparatorWeights | None = None, masks: MaskPair | None = None):
    """Separate ``mix`` into two clips of the same length.

    ``masks`` bypasses the network and applies the given pair directly.
    """
    if mix.sample_rate != cfg.sample_rate:
        raise ValueError(f"mixture is {mix.sample_rate} Hz, config expects {cfg.sample_rate} Hz")
    spec = stft(mix, cfg.stft)
    if masks is None:
        weights = SeparatorWeights.random(cfg) if weights is None else weights
        masks = make_masks(features(mix, cfg, weights), cfg, weights)
    if masks.first.shape != spec.grid.shape:
        raise ValueError(f"mask shape {masks.first.shape} does not match spectrogram {spec.grid.shape}")
    return apply_masks(mix, masks, cfg.stft, spec)


def ideal_ratio_masks(gt1: AudioClip, gt2: AudioClip, cfg: StftConfig = StftConfig()) -> MaskPair:
    if len(gt1) != len(gt2):
        raise ValueError(f"length mismatch: {len(gt1)} vs {len(gt2)}")
    a = np.abs(stft(gt1, cfg).grid)
    b = np.abs(stft(gt2, cfg).grid)
    denom = a + b + IRM_EPS
    return MaskPair(a / denom, b / denom)
