"""Musically-informed mixing: tempo groups, downbeat crops, harmonic-overlap mining.

Songs carry beat / downbeat annotations (JSON) and an optional f0 track. Training
pairs are drawn from one tempo group, cropped at downbeats, scored for coinciding
partials, and only the best-scoring part of each candidate pool is kept.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .audio import AudioClip, read_wav

logger = logging.getLogger(__name__)

N_OVERTONES = 16
TOL_CENTS = 50.0
TEMPO_TOL_BPM = 4.0
POOL_M = 16
KEEP_M = 8
SILENCE_RMS = 1e-6
MAX_RETRIES = 5


@dataclass
class F0Track:
    values: np.ndarray  # Hz per frame, 0 = unvoiced
    hop_s: float = 0.010

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("f0 track must be 1-D")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("f0 values must be finite and >= 0")
        if self.hop_s <= 0:
            raise ValueError("f0 hop must be positive")
        self.values = v

    def __len__(self):
        return self.values.shape[0]

    def segment(self, start_s: float, length_s: float) -> "F0Track":
        a = int(round(start_s / self.hop_s))
        b = a + int(round(length_s / self.hop_s))
        return F0Track(self.values[a:b], self.hop_s)


@dataclass
class AnnotatedSong:
    id: str
    clip: AudioClip
    beats: np.ndarray
    downbeats: np.ndarray
    f0: F0Track | None = None

    def __post_init__(self):
        self.beats = np.asarray(self.beats, dtype=np.float64)
        self.downbeats = np.asarray(self.downbeats, dtype=np.float64)
        if self.beats.size > 1 and np.any(np.diff(self.beats) <= 0):
            raise ValueError(f"{self.id}: beats must be strictly increasing")
        if self.downbeats.size and (self.downbeats.min() < 0 or self.downbeats.max() > self.clip.duration):
            raise ValueError(f"{self.id}: downbeat outside clip duration")

    @property
    def bpm(self) -> float:
        return estimate_bpm(self.beats)


@dataclass
class TempoGroup:
    bpm_center: float
    tolerance: float
    members: list = field(default_factory=list)


@dataclass
class MixPair:
    song_a: str
    song_b: str
    start_a: float
    start_b: float
    length: float
    gain_a: float = 1.0
    gain_b: float = 1.0
    harmonic_score: float = 0.0

    @property
    def pair_id(self) -> str:
        return f"{self.song_a}@{self.start_a:.6f}|{self.song_b}@{self.start_b:.6f}"

    def to_dict(self) -> dict:
        return asdict(self)


# --- temporal alignment ---


def estimate_bpm(beats) -> float:
    b = np.asarray(beats, dtype=np.float64)
    if b.size < 3:
        raise ValueError("insufficient beats")
    return 60.0 / float(np.median(np.diff(b)))


def group_by_tempo(songs, tolerance_bpm: float = TEMPO_TOL_BPM) -> list[TempoGroup]:
    """Greedy grouping over sorted BPM.

    The first song of a group anchors it; a song joins while its BPM is within
    anchor + tolerance, otherwise it opens the next group.
    """
    songs = list(songs)
    if not songs:
        raise ValueError("empty corpus")
    keyed = sorted(((s.bpm, s.id) for s in songs))
    groups: list[TempoGroup] = []
    for bpm, sid in keyed:
        if groups and bpm <= groups[-1].bpm_center + tolerance_bpm:
            groups[-1].members.append(sid)
        else:
            groups.append(TempoGroup(bpm, tolerance_bpm, [sid]))
    return groups


def crop_at_downbeat(song: AnnotatedSong, length_s: float, rng) -> tuple[AudioClip, float]:
    rate = song.clip.sample_rate
    n = int(round(length_s * rate))
    starts = [float(d) for d in song.downbeats if int(round(d * rate)) + n <= len(song.clip)]
    if n <= 0 or not starts:
        raise ValueError("song too short for crop")
    start = starts[int(rng.integers(len(starts)))]
    a = int(round(start * rate))
    return AudioClip(song.clip.samples[a : a + n], rate), start


def _onset_strength(clip: AudioClip, hop: int, n_fft: int) -> np.ndarray:
    _, _, z = signal.stft(clip.samples, nperseg=n_fft, noverlap=n_fft - hop, boundary=None, padded=False)
    mag = np.log1p(100.0 * np.abs(z))
    flux = np.maximum(np.diff(mag, axis=1), 0.0).sum(axis=0)
    return np.concatenate([[0.0], flux])


def estimate_beats(clip: AudioClip, bpm_range=(60.0, 200.0), beats_per_bar: int = 4):
    """Fallback beat grid from onset-strength autocorrelation.

    Much cruder than a trained tracker: one global tempo, one phase, and the
    bar phase taken from the strongest onset class. Returns (beats, downbeats).
    """
    hop, n_fft = 256, 1024
    env = _onset_strength(clip, hop, n_fft)
    env = env - env.mean()
    fps = clip.sample_rate / hop
    ac = np.correlate(env, env, mode="full")[env.size - 1 :]
    lo = max(1, int(math.floor(fps * 60.0 / bpm_range[1])))
    hi = min(ac.size - 1, int(math.ceil(fps * 60.0 / bpm_range[0])))
    if hi <= lo:
        raise ValueError("clip too short for beat estimation")
    period = lo + int(np.argmax(ac[lo : hi + 1]))
    phase = int(np.argmax([env[p::period].sum() for p in range(period)]))
    frames = np.arange(phase, env.size, period)
    beats = frames * hop / clip.sample_rate
    if beats.size == 0:
        return beats, beats
    bar = int(np.argmax([env[frames[k::beats_per_bar]].sum() for k in range(min(beats_per_bar, frames.size))]))
    return beats, beats[bar::beats_per_bar]


# --- harmonic alignment ---


def estimate_f0(clip: AudioClip, frame_s: float = 0.032, hop_s: float = 0.010, fmin: float = 60.0,
                fmax: float = 1000.0, voicing: float = 0.5) -> F0Track:
    """Normalized-autocorrelation pitch track.

    Args:
        clip: Mono input.
        frame_s: Analysis frame length in seconds.
        hop_s: Frame hop in seconds.
        fmin: Lowest f0 searched.
        fmax: Highest f0 searched.
        voicing: Frames whose best normalized autocorrelation peak falls below
            this are marked unvoiced (0 Hz).

    Returns:
        F0Track with one value per frame.
    """
    rate = clip.sample_rate
    n = int(round(frame_s * rate))
    hop = int(round(hop_s * rate))
    x = clip.samples
    if x.shape[0] < n:
        raise ValueError("clip shorter than one analysis frame")
    lag_lo = max(2, int(math.floor(rate / fmax)))
    lag_hi = min(n - 2, int(math.ceil(rate / fmin)))
    n_frames = 1 + (x.shape[0] - n) // hop
    out = np.zeros(n_frames)
    nfft = 1 << (2 * n - 1).bit_length()
    for t in range(n_frames):
        fr = x[t * hop : t * hop + n]
        fr = fr - fr.mean()
        e = fr @ fr
        if e <= 1e-12 * n:
            continue
        spec = np.fft.rfft(fr, nfft)
        ac = np.fft.irfft(spec * np.conj(spec), nfft)[:n]
        # energy of the overlapping parts, so the peak height does not decay with lag
        c = np.cumsum(fr**2)
        e_head = c[n - 1 - np.arange(n)]
        e_tail = c[-1] - np.concatenate([[0.0], c[:-1]])
        r = ac / np.sqrt(np.maximum(e_head * e_tail, 1e-300))
        seg = r[lag_lo : lag_hi + 1]
        peaks = np.flatnonzero((seg[1:-1] > seg[:-2]) & (seg[1:-1] >= seg[2:])) + 1
        if peaks.size == 0:
            continue
        best = seg[peaks].max()
        if best < voicing:
            continue
        # smallest lag close to the best peak avoids sub-octave picks
        k = peaks[seg[peaks] >= 0.9 * best][0]
        a, b, cc = seg[k - 1], seg[k], seg[k + 1]
        den = a - 2 * b + cc
        shift = 0.5 * (a - cc) / den if den != 0 else 0.0
        out[t] = rate / (lag_lo + k + shift)
    return F0Track(out, hop_s)


def _align_tracks(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # nearest-neighbour resampling of the shorter track onto the longer frame grid
    if a.shape[0] == b.shape[0]:
        return a, b
    swap = a.shape[0] < b.shape[0]
    short, long_ = (a, b) if swap else (b, a)
    idx = np.minimum(np.floor((np.arange(long_.shape[0]) + 0.5) * short.shape[0] / long_.shape[0]).astype(int),
                     short.shape[0] - 1)
    short = short[idx]
    return (short, long_) if swap else (long_, short)


def harmonic_overlap_score(f0_a, f0_b, n_overtones: int = N_OVERTONES, tol_cents: float = TOL_CENTS) -> float:
    """Share of coinciding partials, averaged over frames voiced in both tracks.

    For each such frame, count overtones p of ``a`` that lie within
    ``tol_cents`` of some overtone q of ``b`` (p, q in 1..n_overtones), then
    divide by n_overtones. Frames where either track is 0 are skipped.
    """
    a = np.asarray(getattr(f0_a, "values", f0_a), dtype=np.float64).ravel()
    b = np.asarray(getattr(f0_b, "values", f0_b), dtype=np.float64).ravel()
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("negative f0")
    if a.size == 0 or b.size == 0:
        return 0.0
    a, b = _align_tracks(a, b)
    voiced = (a > 0) & (b > 0)
    if not voiced.any():
        return 0.0
    k = np.arange(1, n_overtones + 1, dtype=np.float64)
    la = np.log2(a[voiced][:, None] * k)  # (V, P)
    lb = np.log2(b[voiced][:, None] * k)  # (V, Q)
    cents = np.abs(1200.0 * (la[:, :, None] - lb[:, None, :]))
    total = int(np.any(cents < tol_cents, axis=2).sum())
    # integer total keeps the result independent of summation order
    return total / (n_overtones * int(voiced.sum()))


def mine_batch(candidates, B: int, m: int = KEEP_M, rng=None, M: int = POOL_M) -> list[MixPair]:
    """Keep the top B*m candidates by harmonic score, then sample B of them uniformly."""
    candidates = list(candidates)
    if not 0 < m < M:
        raise ValueError("need 0 < m < M")
    if B < 1:
        raise ValueError("B must be >= 1")
    if len(candidates) < B * M:
        raise ValueError("candidate pool underfilled")
    rng = np.random.default_rng() if rng is None else rng
    ranked = sorted(candidates, key=lambda c: (-c.harmonic_score, c.pair_id))
    top = ranked[: B * m]
    pick = rng.choice(len(top), size=B, replace=False)
    return [top[i] for i in sorted(pick)]


# --- mixing ---


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x**2))) if x.size else 0.0


def mix_segments(seg_a: np.ndarray, seg_b: np.ndarray, gain_a: float, gain_b: float):
    """Scale and sum two segments; peak-normalise all three if the mix clips.

    Returns (mix, gt1, gt2, gain_a, gain_b) with mix == gt1 + gt2 exactly.
    """
    gt1 = gain_a * seg_a
    gt2 = gain_b * seg_b
    mix = gt1 + gt2
    peak = float(np.max(np.abs(mix))) if mix.size else 0.0
    if peak > 1.0:
        gain_a, gain_b = gain_a / peak, gain_b / peak
        gt1 = gain_a * seg_a
        gt2 = gain_b * seg_b
        mix = gt1 + gt2
    return mix, gt1, gt2, gain_a, gain_b


def make_mixture(song_a: AnnotatedSong, song_b: AnnotatedSong, length_s: float, rng,
                 loudness_target: float = 0.1, max_offset_db: float = 3.0, pair: MixPair | None = None,
                 retries: int = MAX_RETRIES):
    """Crop both songs at downbeats and mix them around equal RMS loudness.

    Args:
        song_a: First source song.
        song_b: Second source song.
        length_s: Segment length in seconds.
        rng: numpy Generator.
        loudness_target: RMS each source is brought to before the offset.
        max_offset_db: Relative level is uniform in +/- this many dB.
        pair: Reuse these crop starts instead of drawing new ones.
        retries: Fresh crops to try when a segment is silent.

    Returns:
        (MixPair, mix, gt1, gt2) with the three clips the same length.
    """
    rate = song_a.clip.sample_rate
    if song_b.clip.sample_rate != rate:
        raise ValueError("songs differ in sample rate")
    n = int(round(length_s * rate))
    for attempt in range(retries + 1):
        if pair is not None and attempt == 0:
            a0, b0 = int(round(pair.start_a * rate)), int(round(pair.start_b * rate))
            seg_a, start_a = song_a.clip.samples[a0 : a0 + n], pair.start_a
            seg_b, start_b = song_b.clip.samples[b0 : b0 + n], pair.start_b
            if seg_a.shape[0] != n or seg_b.shape[0] != n:
                raise ValueError("pair start leaves less than the segment length")
        else:
            ca, start_a = crop_at_downbeat(song_a, length_s, rng)
            cb, start_b = crop_at_downbeat(song_b, length_s, rng)
            seg_a, seg_b = ca.samples, cb.samples
        ra, rb = _rms(seg_a), _rms(seg_b)
        if ra >= SILENCE_RMS and rb >= SILENCE_RMS:
            break
        logger.debug("silent crop (%s / %s), retry %d", song_a.id, song_b.id, attempt + 1)
    else:
        raise ValueError(f"silent segment after {retries} retries ({song_a.id}, {song_b.id})")
    offset_db = float(rng.uniform(-max_offset_db, max_offset_db))
    ga = loudness_target / ra * 10.0 ** (offset_db / 40.0)
    gb = loudness_target / rb * 10.0 ** (-offset_db / 40.0)
    mix, gt1, gt2, ga, gb = mix_segments(seg_a, seg_b, ga, gb)
    score = pair.harmonic_score if pair is not None else 0.0
    out_pair = MixPair(song_a.id, song_b.id, start_a, start_b, n / rate, ga, gb, score)
    return out_pair, AudioClip(mix, rate), AudioClip(gt1, rate), AudioClip(gt2, rate)


# --- corpus handling ---


def load_annotation(path) -> dict:
    with open(path) as f:
        d = json.load(f)
    for key in ("beats", "downbeats"):
        if key not in d:
            raise ValueError(f"{path}: annotation lacks {key!r}")
    return d


def song_from_annotation(clip: AudioClip, ann: dict, song_id: str | None = None) -> AnnotatedSong:
    f0 = None
    if ann.get("f0"):
        f0 = F0Track(ann["f0"]["values"], float(ann["f0"].get("hop_s", 0.01)))
    return AnnotatedSong(song_id or ann.get("id", "song"), clip, ann["beats"], ann["downbeats"], f0)


def song_to_annotation(song: AnnotatedSong) -> dict:
    d = {"id": song.id, "beats": song.beats.tolist(), "downbeats": song.downbeats.tolist()}
    if song.f0 is not None:
        d["f0"] = {"hop_s": song.f0.hop_s, "values": song.f0.values.tolist()}
    return d


def load_corpus(corpus_dir, annotation_dir, sample_rate: int | None = None) -> list[AnnotatedSong]:
    """Pair every WAV in ``corpus_dir`` with ``<stem>.json`` in ``annotation_dir``.

    Songs without an annotation fall back to :func:`estimate_beats`; songs
    without an f0 track get :func:`estimate_f0`.
    """
    songs = []
    for wav in sorted(Path(corpus_dir).glob("*.wav")):
        clip = read_wav(wav, sample_rate)
        ann_path = Path(annotation_dir) / f"{wav.stem}.json"
        if ann_path.exists():
            song = song_from_annotation(clip, load_annotation(ann_path), wav.stem)
        else:
            warnings.warn(f"{wav.name}: no annotation, using the fallback beat estimate", stacklevel=2)
            beats, downbeats = estimate_beats(clip)
            song = AnnotatedSong(wav.stem, clip, beats, downbeats)
        if song.f0 is None:
            song.f0 = estimate_f0(clip)
        songs.append(song)
    return songs


def draw_candidates(songs, groups, count: int, length_s: float, rng, n_overtones: int = N_OVERTONES,
                    tol_cents: float = TOL_CENTS) -> list[MixPair]:
    """Sample ``count`` scored pairs, each from one random tempo group with at least two songs."""
    by_id = {s.id: s for s in songs}
    eligible = [g for g in groups if len(g.members) >= 2]
    if not eligible:
        raise ValueError("no tempo group holds two songs")
    out = []
    for _ in range(count):
        g = eligible[int(rng.integers(len(eligible)))]
        ia, ib = rng.choice(len(g.members), size=2, replace=False)
        sa, sb = by_id[g.members[ia]], by_id[g.members[ib]]
        _, start_a = crop_at_downbeat(sa, length_s, rng)
        _, start_b = crop_at_downbeat(sb, length_s, rng)
        fa = sa.f0.segment(start_a, length_s) if sa.f0 is not None else np.zeros(0)
        fb = sb.f0.segment(start_b, length_s) if sb.f0 is not None else np.zeros(0)
        score = harmonic_overlap_score(fa, fb, n_overtones, tol_cents)
        out.append(MixPair(sa.id, sb.id, start_a, start_b, length_s, 1.0, 1.0, score))
    return out


def mix_corpus(songs, count: int, length_s: float, B: int, M: int = POOL_M, m: int = KEEP_M, seed: int = 0,
               tolerance_bpm: float = TEMPO_TOL_BPM):
    """Yield (MixPair, mix, gt1, gt2) until ``count`` mixtures have been produced."""
    rng = np.random.default_rng(seed)
    groups = group_by_tempo(songs, tolerance_bpm)
    by_id = {s.id: s for s in songs}
    made = 0
    while made < count:
        pool = draw_candidates(songs, groups, B * M, length_s, rng)
        for pair in mine_batch(pool, B, m, rng, M):
            if made >= count:
                break
            yield make_mixture(by_id[pair.song_a], by_id[pair.song_b], length_s, rng, pair=pair)
            made += 1
