"""Training objective for two-singer separation with closed-form gradients.

The objective is an SNR term, a magnitude L2 term and a magnitude penalty on
time-frequency bins where the other singer is loud and the target is quiet.
Gradients are returned next to every value so they can be checked against
finite differences and used to drive :func:`optimize_masks_demo`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip, ComplexSpec, MagSpec, StftConfig, istft, istft_adjoint, stft, stft_adjoint

TAU_MAX = 1.0
TAU_MIN = 0.5
DB_PER_NEPER = 10.0 / math.log(10.0)


@dataclass(frozen=True)
class LossWeights:
    lambda_mag: float = 0.1
    lambda_penalty: float = 0.02
    eps: float = 1e-8

    def __post_init__(self):
        if self.lambda_mag < 0 or self.lambda_penalty < 0:
            raise ValueError("loss weights must be non-negative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class InterferenceMask:
    grid: np.ndarray
    tau_max: float = TAU_MAX
    tau_min: float = TAU_MIN
    source_index: int = 1

    @property
    def count(self) -> int:
        return int(self.grid.sum())


def _grid(x) -> np.ndarray:
    return np.asarray(getattr(x, "grid", x), dtype=np.float64)


def _samples(x) -> np.ndarray:
    return np.asarray(getattr(x, "samples", x), dtype=np.float64)


def build_interference_mask(m_i: MagSpec, m_j: MagSpec, tau_max=TAU_MAX, tau_min=TAU_MIN, source_index=1):
    """Bins where the non-target reference ``m_j`` exceeds ``tau_max`` and the target ``m_i`` is below ``tau_min``."""
    if m_i.shape != m_j.shape:
        raise ValueError(f"shape mismatch: {m_i.shape} vs {m_j.shape}")
    if m_i.compression_exponent != m_j.compression_exponent:
        raise ValueError("magnitudes carry different compression exponents")
    grid = ((m_j.grid > tau_max) & (m_i.grid < tau_min)).astype(np.float64)
    return InterferenceMask(grid, tau_max, tau_min, source_index)


def penalty_loss(m_hat, mask: InterferenceMask, eps: float = 1e-8):
    """Mean squared estimated magnitude over the interference bins."""
    m = _grid(m_hat)
    i = mask.grid
    if m.shape != i.shape:
        raise ValueError(f"shape mismatch: {m.shape} vs {i.shape}")
    denom = i.sum() + eps
    value = float(np.sum((m * i) ** 2) / denom)
    return value, 2.0 * i * m / denom


def mag_loss(m_hat, m_ref):
    a, b = _grid(m_hat), _grid(m_ref)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if isinstance(m_hat, MagSpec) and isinstance(m_ref, MagSpec):
        if m_hat.compression_exponent != m_ref.compression_exponent:
            raise ValueError("magnitudes carry different compression exponents")
    d = a - b
    return float(np.mean(d**2)), 2.0 * d / d.size


def snr_loss(est, ref, eps: float = 1e-8):
    """Negative eps-regularised SNR in dB and its gradient with respect to ``est``."""
    s_hat, s = _samples(est), _samples(ref)
    if s_hat.shape != s.shape:
        raise ValueError(f"length mismatch: {s_hat.shape[0]} vs {s.shape[0]}")
    sig = float(s @ s)
    if sig == 0.0:
        raise ValueError("degenerate reference")
    err = s_hat - s
    noise = float(err @ err) + eps
    value = -10.0 * math.log10((sig + eps) / noise)
    return value, 2.0 * DB_PER_NEPER * err / noise


def pit_snr_loss(est_pair, ref_pair, eps: float = 1e-8):
    """Utterance-level PIT over the two output orders; loss is the per-source mean.

    Returns (value, (grad_est0, grad_est1), perm) where ``perm[i]`` is the
    estimate matched to reference ``i``.
    """
    best = None
    for perm in ((0, 1), (1, 0)):
        terms = [snr_loss(est_pair[perm[i]], ref_pair[i], eps) for i in range(2)]
        value = 0.5 * (terms[0][0] + terms[1][0])
        if best is None or value < best[0]:
            grads = [None, None]
            for i in range(2):
                grads[perm[i]] = 0.5 * terms[i][1]
            best = (value, tuple(grads), perm)
    return best


def _compressed(spec_grid: np.ndarray, p: float) -> np.ndarray:
    return np.abs(spec_grid) ** p


def _mag_to_spec_grad(g_mag: np.ndarray, x: np.ndarray, p: float) -> np.ndarray:
    """Chain dL/dM through M = |X|^p; returns dL/dRe X + 1j dL/dIm X."""
    a = np.abs(x)
    scale = np.zeros_like(a)
    nz = a > 0
    scale[nz] = p * a[nz] ** (p - 2.0)
    return g_mag * scale * x


@dataclass
class TotalLoss:
    value: float
    terms: dict
    grads: tuple
    perm: tuple
    masks: tuple = field(default=(), repr=False)
    est_mags: tuple = field(default=(), repr=False)


@dataclass(frozen=True)
class ObjectiveConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    stft: StftConfig = field(default_factory=StftConfig)
    compression: float = 0.5
    tau_max: float = TAU_MAX
    tau_min: float = TAU_MIN
    tau_domain: str = "compressed"

    def __post_init__(self):
        if self.tau_domain not in ("compressed", "raw"):
            raise ValueError("tau_domain must be 'compressed' or 'raw'")
        if not 0 < self.compression <= 1:
            raise ValueError("compression exponent must lie in (0, 1]")


class Objective:
    """Total loss against fixed references; reference spectra and masks are cached."""

    def __init__(self, s1, s2, cfg: ObjectiveConfig = ObjectiveConfig()):
        self.cfg = cfg
        self.refs = (_samples(s1), _samples(s2))
        if self.refs[0].shape != self.refs[1].shape:
            raise ValueError("reference lengths differ")
        self.length = self.refs[0].shape[0]
        p = cfg.compression
        specs = [stft(AudioClip(r, 1), cfg.stft).grid for r in self.refs]
        self.ref_mags = tuple(_compressed(g, p) for g in specs)
        if cfg.tau_domain == "compressed":
            thr = [MagSpec(m, p) for m in self.ref_mags]
        else:
            thr = [MagSpec(np.abs(g), 1.0) for g in specs]
        self.masks = (
            build_interference_mask(thr[0], thr[1], cfg.tau_max, cfg.tau_min, 1),
            build_interference_mask(thr[1], thr[0], cfg.tau_max, cfg.tau_min, 2),
        )

    def __call__(self, est1, est2, penalty_active: bool = True) -> TotalLoss:
        cfg, w = self.cfg, self.cfg.weights
        est = (_samples(est1), _samples(est2))
        p = cfg.compression
        specs = [stft(AudioClip(e, 1), cfg.stft).grid for e in est]
        mags = [_compressed(g, p) for g in specs]
        lam_pen = w.lambda_penalty if penalty_active else 0.0

        best = None
        for perm in ((0, 1), (1, 0)):
            snr_terms = [snr_loss(est[perm[i]], self.refs[i], w.eps) for i in range(2)]
            mag_terms = [mag_loss(mags[perm[i]], self.ref_mags[i]) for i in range(2)]
            pen_terms = [penalty_loss(mags[perm[i]], self.masks[i], w.eps) for i in range(2)]
            l_snr = 0.5 * (snr_terms[0][0] + snr_terms[1][0])
            l_mag = mag_terms[0][0] + mag_terms[1][0]
            l_pen = pen_terms[0][0] + pen_terms[1][0]
            value = l_snr + w.lambda_mag * l_mag + lam_pen * l_pen
            if best is None or value < best[0]:
                best = (value, perm, snr_terms, mag_terms, pen_terms, l_snr, l_mag, l_pen)

        value, perm, snr_terms, mag_terms, pen_terms, l_snr, l_mag, l_pen = best
        grads = [None, None]
        masked_energy = 0.0
        for i in range(2):
            k = perm[i]
            g_mag = w.lambda_mag * mag_terms[i][1] + lam_pen * pen_terms[i][1]
            g = 0.5 * snr_terms[i][1]
            if np.any(g_mag):
                g = g + stft_adjoint(_mag_to_spec_grad(g_mag, specs[k], p), cfg.stft, self.length)
            grads[k] = g
            masked_energy += float(np.sum((mags[k] * self.masks[i].grid) ** 2))
        terms = {
            "snr": l_snr,
            "mag": l_mag,
            "penalty": l_pen,
            "masked_energy": masked_energy,
        }
        return TotalLoss(value, terms, tuple(grads), perm, self.masks, tuple(mags))


def total_loss(est1, est2, s1, s2, weights: LossWeights = LossWeights(), stft_cfg: StftConfig = StftConfig(),
               p: float = 0.5, tau_domain: str = "compressed", penalty_active: bool = True) -> TotalLoss:
    """SNR + lambda_mag * Mag + lambda_penalty * Penalty with PIT over output order.

    ``penalty_active`` is the schedule switch; the penalty term is still
    reported in ``terms`` when it is off.
    """
    cfg = ObjectiveConfig(weights, stft_cfg, p, tau_domain=tau_domain)
    return Objective(s1, s2, cfg)(est1, est2, penalty_active)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _fit(x: np.ndarray, n: int) -> np.ndarray:
    return x[:n] if x.shape[0] >= n else np.pad(x, (0, n - x.shape[0]))


class MaskObjective:
    """Total loss as a function of two sigmoid mask-logit grids applied to a mixture."""

    def __init__(self, mix, s1, s2, cfg: ObjectiveConfig = ObjectiveConfig()):
        self.objective = Objective(s1, s2, cfg)
        self.cfg = cfg
        self.mix = _samples(mix)
        self.mix_spec = stft(AudioClip(self.mix, 1), cfg.stft).grid

    @property
    def shape(self):
        return (2,) + self.mix_spec.shape

    def estimates(self, logits: np.ndarray) -> tuple:
        n = self.mix.shape[0]
        masks = _sigmoid(logits)
        return tuple(
            _fit(istft(ComplexSpec(masks[i] * self.mix_spec, self.cfg.stft)).samples, n) for i in range(2)
        )

    def __call__(self, logits: np.ndarray, penalty_active: bool = True):
        """Returns (TotalLoss, gradient with respect to ``logits``, estimates)."""
        masks = _sigmoid(logits)
        est = self.estimates(logits)
        res = self.objective(est[0], est[1], penalty_active)
        n_frames = self.mix_spec.shape[0]
        grad = np.empty_like(logits)
        for i in range(2):
            g_spec = istft_adjoint(res.grads[i], self.cfg.stft, n_frames)
            g_mask = np.real(g_spec * np.conj(self.mix_spec))
            grad[i] = g_mask * masks[i] * (1.0 - masks[i])
        return res, grad, est


@dataclass
class DemoStep:
    step: int
    loss: float
    snr_term: float
    mag_term: float
    penalty_term: float
    masked_energy: float
    ssnr_db: float

    FIELDS = ("step", "loss", "snr_term", "mag_term", "penalty_term", "masked_energy", "ssnr_db")

    def row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


# centred framing: uncentred edges see partial window coverage, and the
# resulting istft gain there makes plain gradient descent on masks stall
DEMO_STFT = StftConfig(center=True)


class DivergenceError(RuntimeError):
    pass


def optimize_masks_demo(mix, s1, s2, weights: LossWeights = LossWeights(), steps: int = 500, lr: float = 0.05,
                        cfg: ObjectiveConfig | None = None, penalty_from_step: int = 0, seg_s: float = 1.0,
                        init_logits: np.ndarray | None = None) -> list[DemoStep]:
    """Gradient descent on mask logits; one :class:`DemoStep` per evaluated state.

    Row ``k`` describes the masks after ``k`` updates, so ``steps=0``
    returns the initial state only.
    """
    from .metrics import ssnr

    cfg = ObjectiveConfig(weights, DEMO_STFT) if cfg is None else ObjectiveConfig(
        weights, cfg.stft, cfg.compression, cfg.tau_max, cfg.tau_min, cfg.tau_domain)
    sr = getattr(mix, "sample_rate", 24000)
    obj = MaskObjective(mix, s1, s2, cfg)
    logits = np.zeros(obj.shape) if init_logits is None else np.array(init_logits, dtype=np.float64)
    refs = (_samples(s1), _samples(s2))
    traj = []
    for k in range(steps + 1):
        res, grad, est = obj(logits, penalty_active=k >= penalty_from_step)
        if not (np.isfinite(res.value) and np.all(np.isfinite(grad))):
            raise DivergenceError(f"loss diverged at step {k}")
        seg_score = ssnr([AudioClip(e, sr) for e in est], [AudioClip(r, sr) for r in refs], seg_s)
        traj.append(DemoStep(k, res.value, res.terms["snr"], res.terms["mag"], res.terms["penalty"],
                             res.terms["masked_energy"], seg_score))
        if k < steps:
            logits = logits - lr * grad
    return traj
