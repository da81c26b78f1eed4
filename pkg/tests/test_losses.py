import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unmixx import losses
from unmixx.audio import AudioClip, MagSpec
from unmixx.gradcheck import CHECK_STFT, check_gradient, run_suite
from unmixx.synth import sine

SR = 24000


def _mask(grid):
    return losses.InterferenceMask(np.asarray(grid, dtype=float))


class TestInterferenceMask:
    def test_threshold_examples(self):
        m_j = MagSpec(np.array([[1.5, 1.0, 1.5]]), 0.5)
        m_i = MagSpec(np.array([[0.2, 0.2, 0.5]]), 0.5)
        mask = losses.build_interference_mask(m_i, m_j)
        # strict on both sides
        assert mask.grid.tolist() == [[1.0, 0.0, 0.0]]
        assert (mask.tau_max, mask.tau_min) == (1.0, 0.5)

    def test_silent_other_source(self):
        m = losses.build_interference_mask(MagSpec(np.zeros((3, 4))), MagSpec(np.zeros((3, 4))))
        assert m.count == 0

    def test_errors(self):
        with pytest.raises(ValueError):
            losses.build_interference_mask(MagSpec(np.zeros((2, 2))), MagSpec(np.zeros((2, 3))))
        with pytest.raises(ValueError):
            losses.build_interference_mask(MagSpec(np.zeros((2, 2)), 0.5), MagSpec(np.zeros((2, 2)), 1.0))

    @given(st.integers(0, 10**6), st.floats(0.0, 2.0), st.floats(0.0, 2.0))
    def test_swapped_masks_disjoint(self, seed, a, b):
        tau_min, tau_max = min(a, b), max(a, b)
        rng = np.random.default_rng(seed)
        m1, m2 = (MagSpec(rng.uniform(0, 3, (5, 7))) for _ in range(2))
        i1 = losses.build_interference_mask(m1, m2, tau_max, tau_min)
        i2 = losses.build_interference_mask(m2, m1, tau_max, tau_min)
        assert not np.any(i1.grid * i2.grid)


class TestPenalty:
    def test_single_bin(self):
        v, g = losses.penalty_loss(np.array([[2.0]]), _mask([[1.0]]))
        assert v == 4 / (1 + 1e-8)
        assert g[0, 0] == 4 / (1 + 1e-8)

    def test_empty_mask(self):
        v, g = losses.penalty_loss(np.ones((3, 3)), _mask(np.zeros((3, 3))))
        assert v == 0.0 and not np.any(g)

    def test_zero_on_masked_bins(self):
        grid = np.array([[1.0, 0.0], [0.0, 1.0]])
        m_hat = np.array([[0.0, 5.0], [7.0, 0.0]])
        v, g = losses.penalty_loss(m_hat, _mask(grid))
        assert v == 0.0 and not np.any(g * grid)

    @given(st.integers(0, 10**6))
    def test_invariant_outside_mask_and_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        grid = (rng.uniform(size=(4, 6)) < 0.4).astype(float)
        a = rng.uniform(0, 2, (4, 6))
        b = np.where(grid > 0, a, rng.uniform(0, 9, (4, 6)))
        va, _ = losses.penalty_loss(a, _mask(grid))
        vb, _ = losses.penalty_loss(b, _mask(grid))
        assert va == vb and va >= 0
        assert (va == 0) == (not np.any(a * grid))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            losses.penalty_loss(np.ones((2, 2)), _mask(np.ones((2, 3))))


class TestMagLoss:
    def test_scalar(self):
        v, g = losses.mag_loss(np.array([[4.0]]), np.array([[1.0]]))
        assert (v, g[0, 0]) == (9.0, 6.0)

    def test_identity(self):
        m = np.random.default_rng(0).uniform(size=(3, 4))
        v, g = losses.mag_loss(m, m)
        assert v == 0 and not np.any(g)

    def test_homogeneous(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(size=(2, 5, 5))
        v1, _ = losses.mag_loss(a, b)
        v3, _ = losses.mag_loss(b + 3 * (a - b), b)
        assert np.isclose(v3, 9 * v1)

    def test_errors(self):
        with pytest.raises(ValueError):
            losses.mag_loss(np.ones((2, 2)), np.ones((3, 2)))
        with pytest.raises(ValueError):
            losses.mag_loss(MagSpec(np.ones((2, 2)), 0.5), MagSpec(np.ones((2, 2)), 1.0))


class TestSnrLoss:
    def test_identity_finite(self):
        s = np.random.default_rng(0).standard_normal(100)
        v, _ = losses.snr_loss(s, s)
        assert np.isclose(v, -10 * math.log10((s @ s + 1e-8) / 1e-8))

    def test_zero_estimate(self):
        s = np.zeros(4)
        s[0] = 1.0
        v, _ = losses.snr_loss(np.zeros(4), s)
        assert abs(v) < 1e-7

    def test_degenerate(self):
        with pytest.raises(ValueError, match="degenerate reference"):
            losses.snr_loss(np.ones(4), np.zeros(4))

    def test_length(self):
        with pytest.raises(ValueError):
            losses.snr_loss(np.ones(4), np.ones(5))

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10**6))
    def test_gradient_1000_samples(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.standard_normal(1000)
        e = s + 0.5 * rng.standard_normal(1000)
        _, g = losses.snr_loss(e, s)
        res = check_gradient(lambda x: losses.snr_loss(x, s)[0], e, g, rng, 100)
        assert res.worst_rel_err < 1e-4

    def test_pit_swaps(self):
        rng = np.random.default_rng(2)
        s = rng.standard_normal((2, 200))
        e = s + 0.1 * rng.standard_normal((2, 200))
        v1, g1, p1 = losses.pit_snr_loss(e, s)
        v2, g2, p2 = losses.pit_snr_loss(e[::-1], s)
        assert p1 == (0, 1) and p2 == (1, 0)
        assert v1 == v2
        assert np.array_equal(g1[0], g2[1])


@pytest.fixture(scope="module")
def pair():
    g1, g2 = sine(440, 0.25), sine(3000, 0.25)
    rng = np.random.default_rng(3)
    e1 = AudioClip(g1.samples + 0.05 * rng.standard_normal(len(g1)), SR)
    e2 = AudioClip(g2.samples + 0.05 * rng.standard_normal(len(g2)), SR)
    return g1, g2, e1, e2


class TestTotalLoss:

    def test_zero_weights_is_snr(self, pair):
        g1, g2, e1, e2 = pair
        res = losses.total_loss(e1, e2, g1, g2, losses.LossWeights(0.0, 0.0))
        v, _, _ = losses.pit_snr_loss((e1, e2), (g1, g2))
        assert res.value == v

    def test_perfect_estimate(self, pair):
        g1, g2, _, _ = pair
        res = losses.total_loss(g1, g2, g1, g2)
        assert res.terms["mag"] == 0
        assert res.masks[0].count > 0 and res.masks[1].count > 0
        # the reference's own leakage into its masked bins remains
        leak = sum(np.sum((m * i.grid) ** 2) / (i.count + 1e-8) for m, i in zip(res.est_mags, res.masks))
        assert np.isclose(res.terms["penalty"], leak)

    def test_perfect_estimate_empty_masks(self, pair):
        g1, g2, _, _ = pair
        cfg = losses.ObjectiveConfig(tau_max=1e9)
        res = losses.Objective(g1, g2, cfg)(g1, g2)
        assert res.masks[0].count == 0 and res.masks[1].count == 0
        assert res.terms["mag"] == 0 and res.terms["penalty"] == 0

    def test_affine_in_lambda(self, pair):
        g1, g2, e1, e2 = pair
        vals = {}
        for lm in (0.0, 1.0, 2.0):
            for lp in (0.0, 1.0, 2.0):
                vals[lm, lp] = losses.total_loss(e1, e2, g1, g2, losses.LossWeights(lm, lp))
        base = vals[0.0, 0.0].value
        mag, pen = vals[0.0, 0.0].terms["mag"], vals[0.0, 0.0].terms["penalty"]
        for (lm, lp), r in vals.items():
            assert np.isclose(r.value, base + lm * mag + lp * pen, rtol=1e-12, atol=1e-12)

    def test_penalty_schedule_flag(self, pair):
        g1, g2, e1, e2 = pair
        on = losses.total_loss(e1, e2, g1, g2, penalty_active=True)
        off = losses.total_loss(e1, e2, g1, g2, penalty_active=False)
        assert np.isclose(on.value - off.value, 0.02 * on.terms["penalty"])
        assert off.terms["penalty"] == on.terms["penalty"]

    def test_pit_order(self, pair):
        g1, g2, e1, e2 = pair
        a = losses.total_loss(e1, e2, g1, g2)
        b = losses.total_loss(e2, e1, g1, g2)
        assert a.perm == (0, 1) and b.perm == (1, 0)
        assert np.isclose(a.value, b.value)

    def test_tau_domain(self, pair):
        g1, g2, e1, e2 = pair
        # target magnitudes near 0.25..0.5 raw sit on different sides of tau_min in the two domains
        quiet = AudioClip(0.015 * np.random.default_rng(5).standard_normal(len(g1)), SR)
        comp = losses.total_loss(e1, e2, quiet, g2, tau_domain="compressed")
        raw = losses.total_loss(e1, e2, quiet, g2, tau_domain="raw")
        assert comp.masks[0].count != raw.masks[0].count
        with pytest.raises(ValueError):
            losses.ObjectiveConfig(tau_domain="log")


class TestGradients:
    @pytest.mark.parametrize("seed", [0, 7])
    def test_suite(self, seed):
        for r in run_suite(seed, trials=100):
            assert r.passed, (r.name, r.worst_rel_err)

    def test_relative_error_floor(self):
        from unmixx.gradcheck import relative_errors

        err = relative_errors(np.array([1e-9, 1.0]), np.array([2e-9, 1.0]), 1e-3)
        assert err[0] == pytest.approx(1e-6)

    def test_detects_wrong_gradient(self):
        x = np.random.default_rng(0).standard_normal(10)
        res = check_gradient(lambda v: float(v @ v), x, 2.1 * x, np.random.default_rng(1), 10)
        assert not res.passed


@pytest.fixture(scope="module")
def demo_runs():
    mix = AudioClip(sine(440, 1.0).samples + sine(3000, 1.0).samples, SR)
    out = {}
    for lam in (0.0, 0.02):
        out[lam] = losses.optimize_masks_demo(mix, sine(440, 1.0), sine(3000, 1.0),
                                              losses.LossWeights(0.1, lam), steps=500, lr=0.05)
    return out


class TestDemo:
    def test_zero_steps(self):
        mix = AudioClip(sine(440, 1.0).samples + sine(3000, 1.0).samples, SR)
        traj = losses.optimize_masks_demo(mix, sine(440, 1.0), sine(3000, 1.0), steps=0)
        assert len(traj) == 1 and traj[0].step == 0
        assert traj[0].snr_term == pytest.approx(-10 * math.log10(2), abs=1e-3)

    def test_penalty_lowers_masked_energy(self, demo_runs):
        assert len(demo_runs[0.02]) == 501
        assert demo_runs[0.02][-1].masked_energy < demo_runs[0.0][-1].masked_energy

    @pytest.mark.parametrize("lam", [0.0, 0.02])
    def test_snr_non_increasing_after_warmup(self, demo_runs, lam):
        s = np.array([r.snr_term for r in demo_runs[lam]])
        warm = 50
        for k in range(warm, len(s) - 50):
            assert s[k + 50] <= s[k] + 1e-12

    def test_penalty_from_step(self):
        mix = AudioClip(sine(440, 1.0).samples + sine(3000, 1.0).samples, SR)
        traj = losses.optimize_masks_demo(mix, sine(440, 1.0), sine(3000, 1.0), steps=2, penalty_from_step=2)
        r0 = traj[0]
        assert np.isclose(r0.loss, r0.snr_term + 0.1 * r0.mag_term)
        r2 = traj[2]
        assert np.isclose(r2.loss, r2.snr_term + 0.1 * r2.mag_term + 0.02 * r2.penalty_term)

    def test_divergence_reports_step(self, monkeypatch):
        mix = AudioClip(sine(440, 1.0).samples + sine(3000, 1.0).samples, SR)
        real = losses.MaskObjective.__call__
        calls = {"n": 0}

        def flaky(self, logits, penalty_active=True):
            res, grad, est = real(self, logits, penalty_active)
            calls["n"] += 1
            if calls["n"] == 3:
                res.value = float("nan")
            return res, grad, est

        monkeypatch.setattr(losses.MaskObjective, "__call__", flaky)
        with pytest.raises(losses.DivergenceError, match="step 2"):
            losses.optimize_masks_demo(mix, sine(440, 1.0), sine(3000, 1.0), steps=5)

    def test_rows(self, demo_runs):
        row = demo_runs[0.0][3].row()
        assert len(row) == len(losses.DemoStep.FIELDS) and row[0] == 3

    def test_small_config_chain(self):
        cfg = losses.ObjectiveConfig(stft=CHECK_STFT)
        t = np.arange(400)
        s1, s2 = np.sin(2 * np.pi * 5 * t / 64), np.sin(2 * np.pi * 20 * t / 64)
        obj = losses.MaskObjective(s1 + s2, s1, s2, cfg)
        assert obj.shape == (2, 26, 33)
