"""Waveform containers, WAV I/O, resampling and the STFT front/back end."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal
from scipy.io import wavfile

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 24000


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform with its sample rate.

    Samples are stored as float64; nominal amplitude range is [-1, 1].
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"AudioClip expects a 1-D array, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("AudioClip samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 960
    hop: int = 240
    fft_size: int = 960
    window: str = "hann"
    center: bool = False

    def __post_init__(self):
        if not (0 < self.hop <= self.window_len <= self.fft_size):
            raise ValueError(
                "need 0 < hop <= window_len <= fft_size, got "
                f"hop={self.hop}, window_len={self.window_len}, fft_size={self.fft_size}"
            )

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        return self.window_len // 2 if self.center else 0

    def window_array(self) -> np.ndarray:
        # scipy returns the periodic (DFT-even) variant, which is the COLA one
        return signal.get_window(self.window, self.window_len, fftbins=True).astype(np.float64)

    def to_dict(self) -> dict:
        return {
            "window_len": self.window_len,
            "hop": self.hop,
            "fft_size": self.fft_size,
            "window": self.window,
            "center": self.center,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StftConfig":
        return cls(**{k: d[k] for k in ("window_len", "hop", "fft_size", "window", "center") if k in d})


@dataclass(frozen=True)
class ComplexSpec:
    """Complex STFT grid, frames x bins."""

    grid: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)
    sample_rate: int = DEFAULT_SAMPLE_RATE
    length: int | None = None  # original signal length, if known

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.complex128)
        if g.ndim != 2 or g.shape[1] != self.config.n_bins:
            raise ValueError(
                f"ComplexSpec grid must be [T, {self.config.n_bins}], got {g.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise ValueError("ComplexSpec entries must be finite")
        object.__setattr__(self, "grid", g)

    @property
    def n_frames(self) -> int:
        return self.grid.shape[0]

    @property
    def n_bins(self) -> int:
        return self.grid.shape[1]

    def magnitude(self) -> "MagSpec":
        return MagSpec(np.abs(self.grid), 1.0)


@dataclass(frozen=True)
class MagSpec:
    """Non-negative magnitude grid plus the compression exponent it carries."""

    grid: np.ndarray
    compression_exponent: float = 1.0

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise ValueError("MagSpec entries must be finite and non-negative")
        if not 0.0 < self.compression_exponent <= 1.0:
            raise ValueError("compression_exponent must lie in (0, 1]")
        object.__setattr__(self, "grid", g)

    @property
    def shape(self):
        return self.grid.shape


def cola_sum(cfg: StftConfig, n_frames: int) -> np.ndarray:
    """Sum of shifted squared windows over ``n_frames`` frames."""
    w2 = np.broadcast_to(cfg.window_array() ** 2, (n_frames, cfg.window_len))
    return _overlap_add(w2, cfg.hop, (n_frames - 1) * cfg.hop + cfg.window_len)


def n_frames_for(length: int, cfg: StftConfig) -> int:
    length = length + 2 * cfg.pad
    if length < cfg.window_len:
        return 0
    return 1 + (length - cfg.window_len) // cfg.hop


def _frame_index(n_frames: int, cfg: StftConfig) -> np.ndarray:
    return np.arange(cfg.window_len)[None, :] + cfg.hop * np.arange(n_frames)[:, None]


def _overlap_add(frames: np.ndarray, hop: int, length: int) -> np.ndarray:
    out = np.zeros(length)
    width = frames.shape[1]
    for t in range(frames.shape[0]):
        out[t * hop : t * hop + width] += frames[t]
    return out


def stft(clip: AudioClip, cfg: StftConfig = StftConfig()) -> ComplexSpec:
    x = clip.samples
    if cfg.center:
        if x.shape[0] <= cfg.pad:
            raise ValueError("input too short")
        x = np.pad(x, cfg.pad, mode="reflect")
    if x.shape[0] < cfg.window_len:
        raise ValueError("input too short")
    n = 1 + (x.shape[0] - cfg.window_len) // cfg.hop
    frames = x[_frame_index(n, cfg)] * cfg.window_array()
    grid = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    return ComplexSpec(grid, cfg, clip.sample_rate, len(clip))


NORM_FLOOR = 1e-3


def _norm_inverse(norm: np.ndarray) -> np.ndarray:
    # floor keeps edge samples (partial window coverage) from amplifying
    # inconsistent, e.g. masked, spectra; fully covered samples are unaffected
    return 1.0 / np.maximum(norm, NORM_FLOOR * norm.max())


def istft(spec: ComplexSpec) -> AudioClip:
    """Weighted overlap-add synthesis, normalised by the summed squared window."""
    cfg = spec.config
    if spec.n_frames == 0:
        return AudioClip(np.zeros(0), spec.sample_rate)
    frames = np.fft.irfft(spec.grid, n=cfg.fft_size, axis=1)[:, : cfg.window_len] * cfg.window_array()
    norm = cola_sum(cfg, spec.n_frames)
    out = _overlap_add(frames, cfg.hop, norm.shape[0]) * _norm_inverse(norm)
    if cfg.center:
        out = out[cfg.pad : out.shape[0] - cfg.pad]
    return AudioClip(out, spec.sample_rate)


def _bin_weights(cfg: StftConfig) -> np.ndarray:
    # interior rfft bins stand for a conjugate pair
    c = np.full(cfg.n_bins, 2.0)
    c[0] = 1.0
    if cfg.fft_size % 2 == 0:
        c[-1] = 1.0
    return c


def _reflect_pad_adjoint(g: np.ndarray, pad: int, length: int) -> np.ndarray:
    out = g[pad : pad + length].copy()
    out[1 : pad + 1] += g[:pad][::-1]
    out[length - 1 - pad : length - 1] += g[pad + length :][::-1]
    return out


def stft_adjoint(grad: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    """Pull a gradient on the STFT grid back to a waveform of ``length`` samples.

    ``grad`` holds dL/dRe(X) + 1j * dL/dIm(X) per bin.
    """
    # sum_k Re(G_k e^{+i 2 pi k n / N}) == N * irfft(G / c) with c the bin pair weights
    g = np.asarray(grad, dtype=np.complex128) / _bin_weights(cfg)
    frames = np.fft.irfft(g, n=cfg.fft_size, axis=1)[:, : cfg.window_len] * cfg.fft_size
    frames *= cfg.window_array()
    out = _overlap_add(frames, cfg.hop, length + 2 * cfg.pad)
    return _reflect_pad_adjoint(out, cfg.pad, length) if cfg.pad else out


def istft_adjoint(grad: np.ndarray, cfg: StftConfig, n_frames: int) -> np.ndarray:
    """Pull a waveform gradient back onto the complex grid fed to :func:`istft`.

    Returns dL/dRe(Y) + 1j * dL/dIm(Y), shape [n_frames, n_bins].
    """
    norm = cola_sum(cfg, n_frames)
    g = np.zeros(norm.shape[0])
    m = min(g.shape[0] - 2 * cfg.pad, grad.shape[0])
    g[cfg.pad : cfg.pad + m] = grad[:m]
    g = g * _norm_inverse(norm)
    frames = g[_frame_index(n_frames, cfg)] * cfg.window_array()
    out = np.fft.rfft(frames, n=cfg.fft_size, axis=1) / cfg.fft_size * _bin_weights(cfg)
    out[:, 0] = out[:, 0].real
    if cfg.fft_size % 2 == 0:
        out[:, -1] = out[:, -1].real
    return out


def magnitude(spec: ComplexSpec, p: float = 1.0) -> MagSpec:
    mag = spec.magnitude()
    return mag if p == 1.0 else power_compress(mag, p)


def power_compress(mag: MagSpec, p: float = 0.5) -> MagSpec:
    if mag.compression_exponent != 1.0:
        raise ValueError("power_compress expects a raw magnitude (exponent 1.0)")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"compression exponent must lie in (0, 1], got {p}")
    return MagSpec(mag.grid**p, p)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited polyphase resampling; output length is round(len * target / source)."""
    if int(target_rate) <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    g = math.gcd(int(target_rate), clip.sample_rate)
    up, down = int(target_rate) // g, clip.sample_rate // g
    y = signal.resample_poly(clip.samples, up, down)
    n = int(round(len(clip) * target_rate / clip.sample_rate))
    if y.shape[0] >= n:
        y = y[:n]
    else:
        y = np.pad(y, (0, n - y.shape[0]))
    return AudioClip(y, int(target_rate))


def read_wav(path, target_rate: int | None = None) -> AudioClip:
    """Read a PCM16 / float32 WAV. Multi-channel input is averaged to mono."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        warnings.warn(f"{path}: {x.shape[1]} channels down-mixed to mono", stacklevel=2)
        x = x.mean(axis=1)
    clip = AudioClip(x, rate)
    if target_rate is not None and target_rate != rate:
        clip = resample(clip, target_rate)
    return clip


def write_wav(path, clip: AudioClip, subtype: str = "float32") -> None:
    if subtype == "float32":
        data = clip.samples.astype(np.float32)
    elif subtype == "pcm16":
        data = np.round(np.clip(clip.samples, -1.0, 32767 / 32768) * 32768.0).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV subtype {subtype!r}")
    wavfile.write(path, clip.sample_rate, data)


def with_samples(clip: AudioClip, samples: np.ndarray) -> AudioClip:
    return replace(clip, samples=samples)
