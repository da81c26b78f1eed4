import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unmixx import metrics as mt
from unmixx.audio import AudioClip
from unmixx.synth import same_singer_pair

SR = 1000  # one-second segments of 1000 samples keep the tables small


def _clip(x):
    return AudioClip(np.asarray(x, dtype=np.float64), SR)


def _noise(seed, n=4000, scale=1.0):
    return _clip(scale * np.random.default_rng(seed).standard_normal(n))


class TestSdr:
    def test_perfect_capped(self):
        x = _noise(0)
        assert mt.sdr(x, x) == mt.CAP_DB
        assert mt.si_sdr(x, x) == mt.CAP_DB

    def test_known_ratio(self):
        r = _noise(1)
        e = _clip(1.1 * r.samples)  # error energy 1% of reference
        assert mt.sdr(e, r) == pytest.approx(20.0, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.01, 100.0))
    def test_si_sdr_scale_invariant(self, seed, alpha):
        rng = np.random.default_rng(seed)
        r = rng.standard_normal(500)
        e = r + 0.3 * rng.standard_normal(500)
        assert mt.si_sdr(alpha * e, r) == pytest.approx(mt.si_sdr(e, r), abs=1e-8)

    def test_si_sdri_of_mixture_is_zero(self):
        g1, g2 = _noise(2), _noise(3)
        mix = _clip(g1.samples + g2.samples)
        score, _ = mt.pair_improvement(mt.si_sdr, (mix, mix), (g1, g2), mix)
        assert score == 0.0

    def test_zero_reference(self):
        with pytest.raises(ValueError):
            mt.sdr(_noise(0), _clip(np.zeros(4000)))

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            mt.si_sdr(_noise(0, 10), _noise(1, 11))

    def test_pair_improvement_swap_invariant(self):
        g1, g2 = _noise(4), _noise(5)
        mix = _clip(g1.samples + g2.samples)
        e1, e2 = _clip(g1.samples + 0.1 * g2.samples), _clip(g2.samples + 0.2 * g1.samples)
        a, pa = mt.pair_improvement(mt.sdr, (e1, e2), (g1, g2), mix)
        b, pb = mt.pair_improvement(mt.sdr, (e2, e1), (g1, g2), mix)
        assert a == pytest.approx(b, abs=1e-12)
        assert pa == (0, 1) and pb == (1, 0)


class TestSegments:
    def test_remainder_kept_when_half(self):
        assert mt.segment_bounds(2500, 1000) == [(0, 1000), (1000, 2000), (2000, 2500)]

    def test_remainder_dropped(self):
        assert mt.segment_bounds(2499, 1000) == [(0, 1000), (1000, 2000)]

    def test_too_short(self):
        with pytest.raises(ValueError):
            mt.segment_bounds(999, 1000)

    def test_clamped(self):
        g1, g2 = _noise(0), _noise(1)
        assert mt.ssnr((g1, g2), (g1, g2)) == mt.SEG_CEIL_DB
        silent = _clip(np.zeros(4000))
        assert mt.ssnr((_clip(100 * g1.samples), _clip(100 * g2.samples)), (g1, g2)) == mt.SEG_FLOOR_DB
        assert mt.pssnr((silent, silent), (g1, g2)) == pytest.approx(0.0, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6))
    def test_pssnr_at_least_ssnr(self, seed):
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((2, 3000))
        e = rng.uniform(0, 1) * g[::-1] + rng.standard_normal((2, 3000)) * rng.uniform(0.05, 2)
        est, gt = tuple(map(_clip, e)), tuple(map(_clip, g))
        assert mt.pssnr(est, gt) >= mt.ssnr(est, gt)

    def test_full_swap_same_ssnr(self):
        g1, g2 = _noise(0), _noise(1)
        rng = np.random.default_rng(0)
        e0 = mt.swap_simulate(g1, g2, 0.0, 1.0, rng)
        e1 = mt.swap_simulate(g1, g2, 1.0, 1.0, rng)
        assert mt.ssnr(e0, (g1, g2)) == mt.ssnr(e1, (g1, g2)) == mt.SEG_CEIL_DB

    def test_pssnr_whole_segment_swaps(self):
        g1, g2 = _noise(0, 6000), _noise(1, 6000)
        for ratio in (0.2, 0.5, 0.8):
            est = mt.swap_simulate(g1, g2, ratio, 1.0, np.random.default_rng(1))
            assert mt.pssnr(est, (g1, g2)) == mt.SEG_CEIL_DB

    def test_pssnr_partial_segment_swap(self):
        g1, g2 = _noise(0), _noise(1)
        e1, e2 = g1.samples.copy(), g2.samples.copy()
        e1[500:1000], e2[500:1000] = g2.samples[500:1000], g1.samples[500:1000]
        assert mt.pssnr((_clip(e1), _clip(e2)), (g1, g2)) < mt.SEG_CEIL_DB

    def test_needs_rate(self):
        x = np.zeros(2000)
        with pytest.raises(ValueError, match="sample rate"):
            mt.ssnr((x, x), (x, x))


class TestSwap:
    def test_nested_selection(self):
        g1, g2 = _noise(0, 10000), _noise(1, 10000)
        prev = set()
        for ratio in (0.1, 0.2, 0.3, 0.4, 0.5):
            _, _, sel = mt.swap_segments(g1, g2, ratio, 1.0, np.random.default_rng(7))
            assert len(sel) == round(ratio * 10)
            assert prev <= set(sel)
            prev = set(sel)

    def test_ratio_bounds(self):
        with pytest.raises(ValueError):
            mt.swap_segments(_noise(0), _noise(1), 1.5, 1.0, np.random.default_rng(0))

    def test_table_trend(self):
        g1, g2 = same_singer_pair(10.0, seed=0)
        rows = mt.swap_table(g1, g2, [0.1, 0.2, 0.3, 0.4, 0.5])
        for key in ("sdri", "si_sdri", "ssnr"):
            v = [r[key] for r in rows]
            assert all(b < a for a, b in zip(v, v[1:])), key
        assert max(r["pssnr"] for r in rows) - min(r["pssnr"] for r in rows) < 1e-6


class TestHssnr:
    def _item(self, same, ssnr, pssnr):
        return mt.ItemScores("x", same, 0.0, 0.0, ssnr, pssnr)

    def test_branch_arithmetic(self):
        items = [self._item(False, 10.0, 99.0), self._item(True, -5.0, 20.0)]
        assert mt.hssnr(items) == 15.0

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            mt.hssnr([])

    def test_report_groups(self):
        rep = mt.MetricReport([self._item(False, 10.0, 12.0), self._item(True, 1.0, 20.0)])
        agg = rep.aggregates()
        assert agg["same_singer"]["count"] == 1 and agg["different_singer"]["count"] == 1
        assert agg["hssnr"] == 15.0
        assert rep.csv_rows()[0][0] == "id"
