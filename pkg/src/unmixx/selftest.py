"""Invariant checks on synthetic signals, run by ``unmixx selftest``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import attention as att
from . import metrics, mim
from .audio import AudioClip, StftConfig, cola_sum, istft, stft
from .gradcheck import run_suite
from .synth import sine


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def _stft_roundtrip(rng) -> Check:
    cfg = StftConfig()
    worst = 0.0
    for _ in range(5):
        x = rng.standard_normal(24000)
        y = istft(stft(AudioClip(x, 24000), cfg)).samples
        n = min(x.size, y.size)
        # only samples covered by full overlap are reconstructible
        a, b = cfg.window_len, n - cfg.window_len
        worst = max(worst, float(np.linalg.norm(y[a:b] - x[a:b]) / np.linalg.norm(x[a:b])))
    return Check("stft round trip", worst < 1e-6, f"rel err {worst:.2e}")


def _cola() -> Check:
    cfg = StftConfig()
    s = cola_sum(cfg, 40)[cfg.window_len : -cfg.window_len]
    dev = float(np.max(np.abs(s - s.mean())))
    return Check("cola constant", dev < 1e-6, f"sum {s.mean():.6f}, dev {dev:.1e}")


def _attention(rng) -> Check:
    cfg = att.AttentionConfig(2, 4, att.FREQUENCY)
    worst = 0.0
    flips = True
    for _ in range(50):
        q = rng.standard_normal((8, 6, 5))
        k = rng.standard_normal((8, 6, 5))
        w = att.attention_weights(q, k, cfg)
        wn = att.attention_weights(q, k, cfg, negate=True)
        worst = max(worst, float(np.max(np.abs(w.sum(-1) - 1))))
        flips &= bool(np.array_equal(w.argmax(-1), wn.argmin(-1)))
    z = rng.standard_normal((8, 3, 4))
    inv = np.array_equal(att.reverse_split_swap(att.reverse_split_swap(z)), z)
    ok = worst < 1e-9 and flips and inv
    return Check("attention rows / negation / swap", ok, f"row dev {worst:.1e}")


def _harmonic() -> Check:
    a = mim.harmonic_overlap_score([220.0] * 4, [220.0] * 4)
    b = mim.harmonic_overlap_score([220.0] * 4, [440.0] * 4)
    return Check("harmonic overlap fixed points", a == 1.0 and b == 0.5, f"{a}, {b}")


def _mixture(rng) -> Check:
    x, y = rng.standard_normal(4800), rng.standard_normal(4800)
    mix, g1, g2, _, _ = mim.mix_segments(x, y, 0.9, 1.1)
    return Check("mixture additivity", bool(np.array_equal(mix, g1 + g2)), f"peak {np.abs(mix).max():.3f}")


def _metrics(rng) -> Check:
    g1, g2 = sine(440, 3.0), sine(3000, 3.0)
    mix = AudioClip(g1.samples + g2.samples, 24000)
    si = metrics.improvement(metrics.si_sdr, mix, g1, mix)
    ok = si == 0.0
    for _ in range(20):
        e = [AudioClip(rng.standard_normal(72000), 24000) for _ in range(2)]
        ok &= metrics.pssnr(e, [g1, g2]) >= metrics.ssnr(e, [g1, g2])
    return Check("metric sanity", bool(ok), f"SI-SDRi(mix) = {si}")


def _gradients(seed: int) -> Check:
    res = run_suite(seed, trials=30)
    worst = max(r.worst_rel_err for r in res)
    return Check("finite-difference gradients", all(r.passed for r in res), f"worst rel err {worst:.1e}")


def run_checks(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    return [
        _stft_roundtrip(rng),
        _cola(),
        _attention(rng),
        _harmonic(),
        _mixture(rng),
        _metrics(rng),
        _gradients(seed),
    ]
