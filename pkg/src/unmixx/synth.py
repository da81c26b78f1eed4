"""Synthetic test material: sines, harmonic 'voices' on a beat grid, annotated songs."""

from __future__ import annotations

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, AudioClip
from .mim import AnnotatedSong, F0Track


def sine(freq: float, duration_s: float, amplitude: float = 0.5, sample_rate: int = DEFAULT_SAMPLE_RATE,
         phase: float = 0.0) -> AudioClip:
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    return AudioClip(amplitude * np.sin(2 * np.pi * freq * t + phase), sample_rate)


def harmonic_tone(f0: np.ndarray, sample_rate: int = DEFAULT_SAMPLE_RATE, n_harmonics: int = 8,
                  rolloff: float = 0.7) -> np.ndarray:
    """Additive tone following a per-sample f0 contour; 0 Hz samples are silent."""
    f0 = np.asarray(f0, dtype=np.float64)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    out = np.zeros_like(f0)
    for h in range(1, n_harmonics + 1):
        alias_ok = h * f0 < 0.45 * sample_rate
        out += np.where(alias_ok, rolloff ** (h - 1) * np.sin(h * phase), 0.0)
    return np.where(f0 > 0, out, 0.0)


def synth_song(song_id: str, bpm: float, duration_s: float, rng, sample_rate: int = DEFAULT_SAMPLE_RATE,
               base_hz: float = 220.0, beats_per_bar: int = 4, f0_hop_s: float = 0.01) -> AnnotatedSong:
    """One note per beat from a pentatonic set, with its beat grid and f0 track.

    Args:
        song_id: Identifier stored on the song.
        bpm: Tempo of the beat grid.
        duration_s: Song length.
        rng: numpy Generator for the melody.
        sample_rate: Output rate.
        base_hz: Lowest note.
        beats_per_bar: Downbeat spacing in beats.
        f0_hop_s: Hop of the stored f0 track.

    Returns:
        AnnotatedSong whose f0 track is the exact synthesis contour.
    """
    n = int(round(duration_s * sample_rate))
    ibi = 60.0 / bpm
    beats = np.arange(0.0, duration_s - 1e-9, ibi)
    steps = np.array([0, 2, 4, 7, 9, 12])
    notes = base_hz * 2.0 ** (rng.choice(steps, size=beats.size) / 12.0)
    f0 = np.zeros(n)
    gap = int(0.05 * sample_rate)  # short rest before each onset
    for i, t0 in enumerate(beats):
        a = int(round(t0 * sample_rate))
        b = min(n, int(round((t0 + ibi) * sample_rate)) - gap)
        f0[a:b] = notes[i]
    x = 0.3 * harmonic_tone(f0, sample_rate)
    env = np.ones(n)
    ramp = int(0.01 * sample_rate)
    for t0 in beats:
        a = int(round(t0 * sample_rate))
        env[a : a + ramp] = np.linspace(0.0, 1.0, min(ramp, n - a))
    hop = int(round(f0_hop_s * sample_rate))
    track = F0Track(f0[::hop].copy(), f0_hop_s)
    return AnnotatedSong(song_id, AudioClip(x * env, sample_rate), beats, beats[::beats_per_bar], track)


def synth_corpus(n_songs: int, seed: int = 0, duration_s: float = 12.0, bpms=(96.0, 98.0, 120.0, 122.0),
                 sample_rate: int = DEFAULT_SAMPLE_RATE) -> list[AnnotatedSong]:
    rng = np.random.default_rng(seed)
    songs = []
    for i in range(n_songs):
        bpm = float(bpms[i % len(bpms)])
        base = float(rng.choice([196.0, 220.0, 247.0, 262.0]))
        songs.append(synth_song(f"song{i:03d}", bpm, duration_s, rng, sample_rate, base))
    return songs


def same_singer_pair(duration_s: float = 10.0, seed: int = 0, sample_rate: int = DEFAULT_SAMPLE_RATE,
                     bpm: float = 100.0, base_hz: float = 220.0) -> tuple[AudioClip, AudioClip]:
    """One synthetic voice singing two different melodies over the same beat grid."""
    rng = np.random.default_rng(seed)
    a = synth_song("voice_a", bpm, duration_s, rng, sample_rate, base_hz)
    b = synth_song("voice_b", bpm, duration_s, rng, sample_rate, base_hz)
    return a.clip, b.clip
