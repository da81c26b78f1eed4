"""Separation metrics: SDR, SI-SDR, improvements, segmental SNR with global or per-segment permutation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EPS = 1e-12
CAP_DB = 100.0
SEG_FLOOR_DB = -10.0
SEG_CEIL_DB = 35.0
PERMS = ((0, 1), (1, 0))


def _x(clip) -> np.ndarray:
    return np.asarray(getattr(clip, "samples", clip), dtype=np.float64)


def _check_pair(est, ref):
    e, r = _x(est), _x(ref)
    if e.shape != r.shape:
        raise ValueError(f"length mismatch: {e.shape[0]} vs {r.shape[0]}")
    return e, r


def _db(num: float, den: float) -> float:
    return min(CAP_DB, 10.0 * math.log10((num + EPS) / (den + EPS)))


def sdr(est, ref) -> float:
    """Plain energy-ratio SDR in dB, capped at +100."""
    e, r = _check_pair(est, ref)
    if not np.any(r):
        raise ValueError("zero reference")
    d = r - e
    return _db(float(r @ r), float(d @ d))


def si_sdr(est, ref) -> float:
    e, r = _check_pair(est, ref)
    rr = float(r @ r)
    if rr == 0.0:
        raise ValueError("zero reference")
    target = (float(e @ r) / (rr + EPS)) * r
    noise = e - target
    return _db(float(target @ target), float(noise @ noise))


def improvement(metric, est, ref, mix) -> float:
    return metric(est, ref) - metric(mix, ref)


def pair_improvement(metric, est_pair, gt_pair, mix) -> tuple[float, tuple]:
    """Mean improvement under the output order that maximises it; ties keep identity."""
    base = [metric(mix, g) for g in gt_pair]
    best = None
    for perm in PERMS:
        score = 0.5 * sum(metric(est_pair[perm[i]], gt_pair[i]) - base[i] for i in range(2))
        if best is None or score > best[0]:
            best = (score, perm)
    return best


def segment_bounds(n: int, seg_len: int) -> list[tuple[int, int]]:
    """Non-overlapping segments; a trailing remainder shorter than half a segment is dropped."""
    if seg_len <= 0:
        raise ValueError("segment length must be positive")
    n_full = n // seg_len
    if n_full == 0:
        raise ValueError("signal shorter than one segment")
    bounds = [(i * seg_len, (i + 1) * seg_len) for i in range(n_full)]
    rem = n - n_full * seg_len
    if rem * 2 >= seg_len:
        bounds.append((n_full * seg_len, n))
    return bounds


def _segment_snr(est: np.ndarray, ref: np.ndarray, lo=SEG_FLOOR_DB, hi=SEG_CEIL_DB) -> float:
    d = ref - est
    v = 10.0 * math.log10((float(ref @ ref) + EPS) / (float(d @ d) + EPS))
    return min(hi, max(lo, v))


def _segment_table(est_pair, gt_pair, seg_s: float, sample_rate: int | None):
    est = [_x(e) for e in est_pair]
    gt = [_x(g) for g in gt_pair]
    n = gt[0].shape[0]
    if any(a.shape[0] != n for a in est + gt):
        raise ValueError("all four signals must have equal length")
    rate = sample_rate or getattr(gt_pair[0], "sample_rate", None)
    if rate is None:
        raise ValueError("sample rate unknown; pass sample_rate or AudioClip inputs")
    seg_len = int(round(seg_s * rate))
    bounds = segment_bounds(n, seg_len)
    # table[s, perm] = mean clamped SNR of both sources in segment s under perm
    table = np.empty((len(bounds), 2))
    for s, (a, b) in enumerate(bounds):
        for p, perm in enumerate(PERMS):
            table[s, p] = 0.5 * sum(_segment_snr(est[perm[i]][a:b], gt[i][a:b]) for i in range(2))
    return table


def ssnr(est_pair, gt_pair, seg_s: float = 1.0, sample_rate: int | None = None) -> float:
    """Segmental SNR with one output order for the whole signal."""
    table = _segment_table(est_pair, gt_pair, seg_s, sample_rate)
    totals = table.sum(axis=0)
    p = 0 if totals[0] >= totals[1] else 1
    return float(table[:, p].mean())


def pssnr(est_pair, gt_pair, seg_s: float = 1.0, sample_rate: int | None = None) -> float:
    """Segmental SNR with the output order chosen independently per segment."""
    table = _segment_table(est_pair, gt_pair, seg_s, sample_rate)
    return float(table.max(axis=1).mean())


@dataclass
class ItemScores:
    id: str
    same_singer: bool
    sdr_i: float
    si_sdr_i: float
    ssnr: float
    pssnr: float

    @property
    def hssnr_contribution(self) -> float:
        return self.pssnr if self.same_singer else self.ssnr

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "same_singer": self.same_singer,
            "sdr_i": self.sdr_i,
            "si_sdr_i": self.si_sdr_i,
            "ssnr": self.ssnr,
            "pssnr": self.pssnr,
            "hssnr_contribution": self.hssnr_contribution,
        }


def hssnr(items) -> float:
    """Mean of PSSNR over same-singer items and SSNR over different-singer items."""
    items = list(items)
    if not items:
        raise ValueError("empty item set")
    return float(np.mean([it.hssnr_contribution for it in items]))


def evaluate_item(item_id, mix, est_pair, gt_pair, same_singer: bool, seg_s: float = 1.0) -> ItemScores:
    n = len(_x(mix))
    if any(len(_x(c)) != n for c in (*est_pair, *gt_pair)):
        raise ValueError(f"{item_id}: clips differ in length")
    return ItemScores(
        id=str(item_id),
        same_singer=bool(same_singer),
        sdr_i=pair_improvement(sdr, est_pair, gt_pair, mix)[0],
        si_sdr_i=pair_improvement(si_sdr, est_pair, gt_pair, mix)[0],
        ssnr=ssnr(est_pair, gt_pair, seg_s),
        pssnr=pssnr(est_pair, gt_pair, seg_s),
    )


@dataclass
class MetricReport:
    items: list = field(default_factory=list)

    def aggregates(self) -> dict:
        items = sorted(self.items, key=lambda it: it.id)
        keys = ("sdr_i", "si_sdr_i", "ssnr", "pssnr", "hssnr_contribution")

        def means(subset):
            if not subset:
                return None
            return {k: float(np.mean([getattr(it, k) for it in subset])) for k in keys} | {"count": len(subset)}

        out = {
            "overall": means(items),
            "same_singer": means([it for it in items if it.same_singer]),
            "different_singer": means([it for it in items if not it.same_singer]),
        }
        if items:
            out["hssnr"] = hssnr(items)
        return out

    def to_dict(self) -> dict:
        items = sorted(self.items, key=lambda it: it.id)
        return {"items": [it.to_dict() for it in items], "aggregates": self.aggregates()}

    def csv_rows(self) -> list[list]:
        header = ["id", "same_singer", "sdr_i", "si_sdr_i", "ssnr", "pssnr", "hssnr_contribution"]
        rows = [header]
        for it in sorted(self.items, key=lambda it: it.id):
            d = it.to_dict()
            rows.append([d[k] for k in header])
        return rows


def swap_segments(gt1, gt2, ratio: float, seg_s: float, rng, sample_rate: int | None = None):
    """Swap the two references inside ``round(ratio * n_segments)`` random segments.

    Segments follow :func:`segment_bounds`; the selected set is the prefix of
    one random permutation, so equal seeds give nested selections across ratios.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    a, b = _check_pair(gt1, gt2)
    rate = sample_rate or getattr(gt1, "sample_rate", None)
    bounds = segment_bounds(a.shape[0], int(round(seg_s * rate)))
    k = int(round(ratio * len(bounds)))
    order = rng.permutation(len(bounds))
    e1, e2 = a.copy(), b.copy()
    for s in sorted(order[:k]):
        lo, hi = bounds[s]
        e1[lo:hi], e2[lo:hi] = b[lo:hi], a[lo:hi]
    return e1, e2, sorted(int(s) for s in order[:k])


def swap_simulate(gt1, gt2, ratio: float, seg_s: float, rng):
    from .audio import AudioClip

    e1, e2, _ = swap_segments(gt1, gt2, ratio, seg_s, rng)
    return AudioClip(e1, gt1.sample_rate), AudioClip(e2, gt1.sample_rate)


SWAP_COLUMNS = ("ratio", "sdri", "si_sdri", "ssnr", "pssnr")


def swap_table(gt1, gt2, ratios, seg_s: float = 1.0, seed: int = 0) -> list[dict]:
    """Score swapped references as estimates at each ratio.

    Every ratio draws from a generator seeded identically, so the swapped
    segments at a lower ratio are a subset of those at a higher one.
    """
    import numpy as _np

    from .audio import AudioClip

    mix = AudioClip(_x(gt1) + _x(gt2), gt1.sample_rate)
    rows = []
    for ratio in ratios:
        est = swap_simulate(gt1, gt2, float(ratio), seg_s, _np.random.default_rng(seed))
        rows.append({
            "ratio": float(ratio),
            "sdri": pair_improvement(sdr, est, (gt1, gt2), mix)[0],
            "si_sdri": pair_improvement(si_sdr, est, (gt1, gt2), mix)[0],
            "ssnr": ssnr(est, (gt1, gt2), seg_s),
            "pssnr": pssnr(est, (gt1, gt2), seg_s),
        })
    return rows
