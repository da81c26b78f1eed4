"""Central finite-difference checks for every analytic gradient in :mod:`losses`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from .audio import MagSpec, StftConfig

# small STFT keeps the chained checks fast; the algebra is size independent
CHECK_STFT = StftConfig(window_len=64, hop=16, fft_size=64, center=True)
REL_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    worst_rel_err: float
    n_coords: int
    tol: float = REL_TOL

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst_rel_err) and self.worst_rel_err < self.tol)


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor).

    ``floor`` stops coordinates whose true gradient is ~0 (pure cancellation)
    from turning last-digit roundoff into a large relative error.
    """
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def check_gradient(fun, x: np.ndarray, grad: np.ndarray, rng, n_coords: int = 100, h: float = 1e-5,
                   floor_frac: float = 1e-3, name: str = "grad") -> CheckResult:
    """Compare ``grad`` with central differences of ``fun`` at random coordinates of ``x``.

    Args:
        fun: Scalar function of an array shaped like ``x``.
        x: Evaluation point (not modified).
        grad: Analytic gradient at ``x``.
        rng: numpy Generator picking the coordinates.
        n_coords: Number of coordinates probed (capped at ``x.size``).
        h: Central-difference step.
        floor_frac: Relative-error floor as a fraction of max |grad|.
        name: Label for the result.

    Returns:
        CheckResult with the worst relative error seen.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    idx = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
    g = np.asarray(grad).reshape(-1)
    num = np.empty(idx.size)
    for j, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = fun(x)
        flat[i] = old - h
        fm = fun(x)
        flat[i] = old
        num[j] = (fp - fm) / (2 * h)
    floor = floor_frac * float(np.max(np.abs(g))) if g.size else 0.0
    err = relative_errors(g[idx], num, max(floor, 1e-300))
    return CheckResult(name, float(err.max()) if err.size else 0.0, int(idx.size))


def _pair(rng, n):
    s = rng.standard_normal((2, n))
    return s, s + 0.5 * rng.standard_normal((2, n))


def run_suite(seed: int = 0, trials: int = 100, length: int = 1000) -> list[CheckResult]:
    """Check snr, mag, penalty, total and mask-chained gradients; ``trials`` coordinates each."""
    rng = np.random.default_rng(seed)
    out = []

    s, e = _pair(rng, length)
    _, g = losses.snr_loss(e[0], s[0])
    out.append(check_gradient(lambda x: losses.snr_loss(x, s[0])[0], e[0], g, rng, trials, name="snr"))

    m_ref = rng.uniform(0, 2, (20, 33))
    m_hat = rng.uniform(0, 2, (20, 33))
    _, g = losses.mag_loss(m_hat, m_ref)
    out.append(check_gradient(lambda x: losses.mag_loss(x, m_ref)[0], m_hat, g, rng, trials, name="mag"))

    mask = losses.build_interference_mask(MagSpec(rng.uniform(0, 1, (20, 33))), MagSpec(rng.uniform(0, 2, (20, 33))))
    _, g = losses.penalty_loss(m_hat, mask)
    out.append(check_gradient(lambda x: losses.penalty_loss(x, mask)[0], m_hat, g, rng, trials, name="penalty"))

    # band-disjoint references so both interference masks are non-empty
    n = 400
    t = np.arange(n)
    tones = np.stack([np.sin(2 * np.pi * 5 * t / 64), np.sin(2 * np.pi * 20 * t / 64)])
    s = 2.0 * tones + 0.05 * rng.standard_normal((2, n))
    e = s + 0.3 * rng.standard_normal((2, n))
    x0 = np.concatenate(e)
    # unit weights make the magnitude and penalty paths visible next to the SNR term
    for tag, w in (("total", losses.LossWeights()), ("total-unit-weights", losses.LossWeights(1.0, 1.0))):
        obj = losses.Objective(s[0], s[1], losses.ObjectiveConfig(w, CHECK_STFT))
        g = np.concatenate(obj(e[0], e[1]).grads)
        out.append(check_gradient(lambda x, obj=obj: obj(x[:n], x[n:]).value, x0, g, rng, trials, name=tag))

    cfg = losses.ObjectiveConfig(losses.LossWeights(), CHECK_STFT)

    mix = s[0] + s[1]
    mobj = losses.MaskObjective(mix, s[0], s[1], cfg)
    logits = rng.standard_normal(mobj.shape)
    _, g, _ = mobj(logits)
    out.append(check_gradient(lambda z: mobj(z)[0].value, logits, g, rng, trials, name="mask-chain"))
    return out
