"""Non-uniform sub-band partition of the frequency axis and per-band projections."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .audio import ComplexSpec


@dataclass(frozen=True)
class BandScheme:
    edges: tuple

    def __post_init__(self):
        e = tuple(int(v) for v in self.edges)
        if len(e) < 2 or e[0] != 0 or any(b <= a for a, b in zip(e, e[1:])):
            raise ValueError(f"band edges must start at 0 and increase strictly: {e}")
        object.__setattr__(self, "edges", e)

    @property
    def n_bands(self) -> int:
        return len(self.edges) - 1

    @property
    def n_bins(self) -> int:
        return self.edges[-1]

    @property
    def widths(self) -> list[int]:
        return [b - a for a, b in zip(self.edges, self.edges[1:])]

    def bands(self):
        return list(zip(self.edges, self.edges[1:]))

    def to_json(self) -> str:
        return json.dumps({"edges": list(self.edges)})

    @classmethod
    def from_json(cls, text: str) -> "BandScheme":
        return cls(tuple(json.loads(text)["edges"]))

    @classmethod
    def load(cls, path) -> "BandScheme":
        with open(path) as f:
            return cls.from_json(f.read())


def _equal_edges(start: int, stop: int, n: int) -> list[int]:
    return [int(round(v)) for v in np.linspace(start, stop, n + 1)]


def default_scheme(n_bins: int, sample_rate: int) -> BandScheme:
    """Unit bands below 1 kHz, 2-bin bands to 4 kHz, 8-bin bands to 8 kHz, then 8 equal bands.

    Falls back to ``min(n_bins, 8)`` equal bands when the pattern does not fit.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be positive")
    hz_per_bin = sample_rate / (2.0 * (n_bins - 1)) if n_bins > 1 else float(sample_rate)
    b1, b4, b8 = (min(n_bins, int(round(f / hz_per_bin))) for f in (1000.0, 4000.0, 8000.0))
    if n_bins < 8 or b1 < 1 or n_bins - b8 < 8:
        return BandScheme(tuple(_equal_edges(0, n_bins, min(n_bins, 8))))
    edges = list(range(0, b1))
    edges += list(range(b1, b4, 2))
    edges += list(range(b4, b8, 8))
    edges += _equal_edges(b8, n_bins, 8)
    return BandScheme(tuple(edges))


@dataclass(frozen=True)
class BandProjection:
    """Per-band affine maps into an N-dimensional feature space and back.

    Band ``b`` of width ``w`` is read as the 2w vector of interleaved
    (re, im) pairs. ``fwd_w[b]`` is (N, 2w); ``inv_w[b]`` is (2w, n_in).
    """

    fwd_w: tuple
    fwd_b: tuple
    inv_w: tuple
    inv_b: tuple

    @property
    def n_features(self) -> int:
        return self.fwd_w[0].shape[0]

    @property
    def n_inverse_in(self) -> int:
        return self.inv_w[0].shape[1]

    def check(self, scheme: BandScheme) -> None:
        if len(self.fwd_w) != scheme.n_bands or len(self.inv_w) != scheme.n_bands:
            raise ValueError(
                f"projection has {len(self.fwd_w)} bands, scheme has {scheme.n_bands}"
            )
        for b, w in enumerate(scheme.widths):
            if self.fwd_w[b].shape[1] != 2 * w or self.inv_w[b].shape[0] != 2 * w:
                raise ValueError(f"band {b}: projection width does not match band width {w}")

    @classmethod
    def random(cls, scheme: BandScheme, n_features: int, rng, n_inverse_in: int | None = None):
        n_in = n_features if n_inverse_in is None else n_inverse_in
        fwd_w, fwd_b, inv_w, inv_b = [], [], [], []
        for w in scheme.widths:
            fwd_w.append(rng.standard_normal((n_features, 2 * w)) / np.sqrt(2 * w))
            fwd_b.append(np.zeros(n_features))
            inv_w.append(rng.standard_normal((2 * w, n_in)) / np.sqrt(n_in))
            inv_b.append(np.zeros(2 * w))
        return cls(tuple(fwd_w), tuple(fwd_b), tuple(inv_w), tuple(inv_b))

    @classmethod
    def identity(cls, scheme: BandScheme):
        if any(w != 1 for w in scheme.widths):
            raise ValueError("identity projection needs unit-width bands")
        k = scheme.n_bands
        eye = np.eye(2)
        return cls((eye,) * k, (np.zeros(2),) * k, (eye,) * k, (np.zeros(2),) * k)

    @classmethod
    def zeros(cls, scheme: BandScheme, n_features: int, n_inverse_in: int | None = None):
        n_in = n_features if n_inverse_in is None else n_inverse_in
        ws = scheme.widths
        return cls(
            tuple(np.zeros((n_features, 2 * w)) for w in ws),
            tuple(np.zeros(n_features) for _ in ws),
            tuple(np.zeros((2 * w, n_in)) for w in ws),
            tuple(np.zeros(2 * w) for w in ws),
        )


def _as_pairs(grid: np.ndarray) -> np.ndarray:
    # [T, F] complex -> [T, F, 2] real
    return np.stack([grid.real, grid.imag], axis=-1)


def split_project(spec: ComplexSpec, scheme: BandScheme, proj: BandProjection) -> np.ndarray:
    """Project each sub-band of ``spec`` to N features; returns an N x K x T tensor."""
    if spec.n_bins != scheme.n_bins:
        raise ValueError(f"scheme covers {scheme.n_bins} bins, spec has {spec.n_bins}")
    proj.check(scheme)
    pairs = _as_pairs(spec.grid)
    n_frames = spec.n_frames
    out = np.empty((proj.n_features, scheme.n_bands, n_frames))
    for b, (lo, hi) in enumerate(scheme.bands()):
        x = pairs[:, lo:hi, :].reshape(n_frames, 2 * (hi - lo))
        out[:, b, :] = (x @ proj.fwd_w[b].T + proj.fwd_b[b]).T
    return out


def restore_fullband(feat: np.ndarray, scheme: BandScheme, proj: BandProjection) -> np.ndarray:
    """Map an n_in x K x T tensor back to [T, F, 2] per-bin (re, im) logits."""
    feat = np.asarray(feat, dtype=np.float64)
    if feat.ndim != 3 or feat.shape[1] != scheme.n_bands:
        raise ValueError(f"expected n_in x {scheme.n_bands} x T features, got {feat.shape}")
    proj.check(scheme)
    if feat.shape[0] != proj.n_inverse_in:
        raise ValueError(f"features have {feat.shape[0]} channels, projection expects {proj.n_inverse_in}")
    n_frames = feat.shape[2]
    out = np.empty((n_frames, scheme.n_bins, 2))
    for b, (lo, hi) in enumerate(scheme.bands()):
        y = feat[:, b, :].T @ proj.inv_w[b].T + proj.inv_b[b]
        out[:, lo:hi, :] = y.reshape(n_frames, hi - lo, 2)
    return out
