import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unmixx.audio import AudioClip, ComplexSpec, StftConfig, stft
from unmixx.bandsplit import BandProjection, BandScheme, default_scheme, restore_fullband, split_project


def _reference_edges_481():
    # 25 Hz bins: 40 unit bands, 60 two-bin bands to bin 160, 20 eight-bin bands to bin 320,
    # then 161 bins over 8 equal bands
    edges = list(range(40)) + list(range(40, 160, 2)) + list(range(160, 320, 8))
    edges += [int(round(v)) for v in np.linspace(320, 481, 9)]
    return tuple(edges)


class TestDefaultScheme:
    def test_24k_960(self):
        s = default_scheme(481, 24000)
        assert s.edges == _reference_edges_481()
        assert s.n_bands == 128
        assert s.bands()[0] == (0, 1)
        assert s.n_bins == 481

    def test_fallback_small(self):
        s = default_scheme(8, 24000)
        assert s.widths == [1] * 8

    def test_fallback_tiny(self):
        assert default_scheme(3, 24000).n_bands == 3

    @given(st.integers(1, 2000), st.sampled_from([8000, 16000, 24000, 44100, 48000]))
    def test_partition(self, n_bins, rate):
        s = default_scheme(n_bins, rate)
        assert sum(s.widths) == n_bins
        owner = np.zeros(n_bins, dtype=int)
        for lo, hi in s.bands():
            owner[lo:hi] += 1
        assert np.all(owner == 1)


class TestBandScheme:
    def test_json_round_trip(self, tmp_path):
        s = BandScheme((0, 2, 5, 9))
        p = tmp_path / "s.json"
        p.write_text(s.to_json())
        assert BandScheme.load(p) == s

    @pytest.mark.parametrize("edges", [(1, 2), (0,), (0, 3, 3), (0, 4, 2)])
    def test_invalid(self, edges):
        with pytest.raises(ValueError):
            BandScheme(edges)


class TestProjection:
    def _spec(self, n_bins=9, frames=4, seed=0):
        rng = np.random.default_rng(seed)
        cfg = StftConfig(window_len=16, hop=4, fft_size=16)
        assert cfg.n_bins == n_bins
        return ComplexSpec(rng.standard_normal((frames, n_bins)) + 1j * rng.standard_normal((frames, n_bins)), cfg)

    def test_identity_reproduces_spec(self):
        spec = self._spec()
        scheme = BandScheme(tuple(range(10)))
        feat = split_project(spec, scheme, BandProjection.identity(scheme))
        assert feat.shape == (2, 9, 4)
        assert np.array_equal(feat[0], spec.grid.real.T)
        assert np.array_equal(feat[1], spec.grid.imag.T)

    def test_identity_round_trip(self):
        spec = self._spec()
        scheme = BandScheme(tuple(range(10)))
        proj = BandProjection.identity(scheme)
        back = restore_fullband(split_project(spec, scheme, proj), scheme, proj)
        assert back.shape == (4, 9, 2)
        assert np.array_equal(back[..., 0] + 1j * back[..., 1], spec.grid)

    def test_identity_needs_unit_bands(self):
        with pytest.raises(ValueError):
            BandProjection.identity(BandScheme((0, 2, 9)))

    def test_zero_spec_zero_features(self):
        scheme = BandScheme((0, 3, 9))
        proj = BandProjection.random(scheme, 6, np.random.default_rng(0))
        spec = ComplexSpec(np.zeros((4, 9)), StftConfig(16, 4, 16))
        assert not np.any(split_project(spec, scheme, proj))

    def test_zero_features_zero_logits(self):
        scheme = BandScheme((0, 3, 9))
        proj = BandProjection.random(scheme, 6, np.random.default_rng(0))
        assert not np.any(restore_fullband(np.zeros((6, 2, 5)), scheme, proj))

    def test_shape_default_scheme(self):
        clip = AudioClip(np.random.default_rng(1).standard_normal(4800), 24000)
        spec = stft(clip)
        scheme = default_scheme(481, 24000)
        proj = BandProjection.random(scheme, 16, np.random.default_rng(2))
        feat = split_project(spec, scheme, proj)
        assert feat.shape == (16, 128, spec.n_frames)
        assert restore_fullband(feat, scheme, proj).shape == (spec.n_frames, 481, 2)

    def test_matches_per_band_loop(self):
        spec = self._spec(seed=3)
        scheme = BandScheme((0, 1, 4, 9))
        proj = BandProjection.random(scheme, 5, np.random.default_rng(4))
        feat = split_project(spec, scheme, proj)
        for b, (lo, hi) in enumerate(scheme.bands()):
            for t in range(spec.n_frames):
                v = []
                for f in range(lo, hi):
                    v += [spec.grid[t, f].real, spec.grid[t, f].imag]
                assert np.allclose(feat[:, b, t], proj.fwd_w[b] @ np.array(v) + proj.fwd_b[b])

    def test_mismatch_errors(self):
        spec = self._spec()
        with pytest.raises(ValueError):
            split_project(spec, BandScheme((0, 4, 8)), BandProjection.zeros(BandScheme((0, 4, 8)), 2))
        scheme = BandScheme((0, 4, 9))
        with pytest.raises(ValueError):
            split_project(spec, scheme, BandProjection.zeros(BandScheme((0, 3, 9)), 2))
        with pytest.raises(ValueError):
            restore_fullband(np.zeros((3, 2, 4)), scheme, BandProjection.zeros(scheme, 2))
