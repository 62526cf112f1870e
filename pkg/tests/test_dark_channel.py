import numpy as np
import pytest

import oracles
from skydehaze.dark_channel import (
    DcpParams,
    adjust_brightness,
    box_mean,
    dark_channel_avg,
    dark_channel_min,
    dehaze_dcp,
    estimate_airlight,
    estimate_transmission,
    guided_filter,
    recover_scene,
)
from skydehaze.image_core import to_grayscale
from skydehaze.scattering import HazeParams, synthesize_haze


def _zero_min_image(rng, h, w):
    """Random image whose per-pixel channel minimum is exactly zero.

    The zeroed channel is drawn uniformly so the brightest pixels carry no
    channel bias (subtracting the per-pixel minimum instead would push the
    zeros into the low-luminance channels and skew airlight estimates).
    """
    img = rng.random((h, w, 3))
    zero_channel = rng.integers(0, 3, size=(h, w, 1))
    np.put_along_axis(img, zero_channel, 0.0, axis=2)
    return img


class TestDarkChannelMin:
    def test_zero_channel_dominates(self):
        rng = np.random.default_rng(0)
        img = rng.random((5, 5, 3))
        img[2, 3, 1] = 0.0
        dark = dark_channel_min(img, 1)
        assert dark[2, 3] == 0.0
        assert dark[1, 2] == 0.0  # window contains the zero

    def test_constant_image(self):
        img = np.broadcast_to([0.3, 0.5, 0.7], (6, 6, 3)).copy()
        np.testing.assert_allclose(dark_channel_min(img, 2), 0.3)

    @pytest.mark.parametrize("radius", [0, 1, 2])
    def test_matches_brute_force(self, radius):
        rng = np.random.default_rng(1)
        img = rng.random((5, 5, 3))
        np.testing.assert_allclose(
            dark_channel_min(img, radius), oracles.windowed_min(img, radius), atol=1e-9
        )


class TestDarkChannelAvg:
    def test_constant_equals_min_variant(self):
        img = np.broadcast_to([0.2, 0.4, 0.9], (5, 7, 3)).copy()
        np.testing.assert_allclose(
            dark_channel_avg(img, 2), dark_channel_min(img, 2), atol=1e-12
        )

    def test_avg_at_least_min_pointwise(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            img = rng.random((8, 8, 3))
            for radius in (1, 2, 3):
                assert (
                    dark_channel_avg(img, radius) >= dark_channel_min(img, radius) - 1e-12
                ).all()

    @pytest.mark.parametrize("radius", [1, 2])
    def test_matches_brute_force(self, radius):
        rng = np.random.default_rng(3)
        img = rng.random((5, 5, 3))
        expected = oracles.windowed_mean(img.min(axis=2), radius)
        np.testing.assert_allclose(dark_channel_avg(img, radius), expected, atol=1e-9)


class TestBoxMean:
    def test_matches_brute_force_with_border_shrink(self):
        rng = np.random.default_rng(4)
        arr = rng.random((6, 7))
        for radius in (1, 2, 3):
            np.testing.assert_allclose(
                box_mean(arr, radius), oracles.windowed_mean(arr, radius), atol=1e-9
            )


class TestEstimateAirlight:
    def test_constant_image(self):
        img = np.full((10, 10, 3), 0.8)
        np.testing.assert_allclose(estimate_airlight(img), [0.8, 0.8, 0.8])

    def test_single_brightest_pixel_wins(self):
        # 200 pixels, fraction 0.005 -> ceil gives exactly one pixel
        img = np.full((10, 20, 3), 0.4)
        img[7, 3] = 1.0
        np.testing.assert_allclose(estimate_airlight(img, 0.005), [1.0, 1.0, 1.0])

    def test_matches_sort_select_average_oracle(self):
        rng = np.random.default_rng(5)
        img = rng.random((10, 10, 3))
        for fraction in (0.005, 0.03, 0.25):
            np.testing.assert_allclose(
                estimate_airlight(img, fraction), oracles.airlight(img, fraction), atol=1e-12
            )

    def test_all_black_image_floored(self):
        airlight = estimate_airlight(np.zeros((6, 6, 3)))
        np.testing.assert_allclose(airlight, 1e-3)

    def test_bad_fraction_rejected(self):
        with pytest.raises(ValueError):
            estimate_airlight(np.zeros((4, 4, 3)), 0.0)


class TestEstimateTransmission:
    def test_image_equal_to_airlight(self):
        params = DcpParams(omega=0.95)
        img = np.full((8, 8, 3), 0.7)
        t = estimate_transmission(img, [0.7, 0.7, 0.7], params, variant="min")
        np.testing.assert_allclose(t, 1.0 - 0.95, atol=1e-12)

    def test_zero_dark_window_gives_full_transmission(self):
        params = DcpParams()
        img = np.zeros((6, 6, 3))
        img[:, :, 2] = 0.5  # blue-only image still has zero channel minimum
        t = estimate_transmission(img, [0.8, 0.8, 0.8], params)
        np.testing.assert_allclose(t, 1.0, atol=1e-12)

    def test_recovers_known_constant_transmission(self):
        # scene with zero per-pixel channel minimum, hazed at t = 0.6:
        # with omega = 1 the min-variant estimate equals t exactly
        rng = np.random.default_rng(6)
        clear = _zero_min_image(rng, 16, 16)
        airlight = np.array([0.8, 0.8, 0.8])
        hazy = synthesize_haze(clear, HazeParams(airlight, np.full((16, 16), 0.6)))
        params = DcpParams(omega=1.0 - 1e-12, window_radius=3)
        t = estimate_transmission(hazy, airlight, params, variant="min")
        np.testing.assert_allclose(t, 0.6, atol=1e-6)

    def test_output_range(self):
        rng = np.random.default_rng(7)
        params = DcpParams(omega=0.95)
        for _ in range(10):
            img = rng.random((9, 9, 3))
            airlight = estimate_airlight(img)
            for variant in ("min", "avg"):
                t = estimate_transmission(img, airlight, params, variant)
                assert t.min() >= 1.0 - params.omega - 1e-12
                assert t.max() <= 1.0 + 1e-12

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            estimate_transmission(np.zeros((3, 3, 3)), [0.5] * 3, DcpParams(), "median")


class TestGuidedFilter:
    def test_constant_guide_reduces_to_box_mean(self):
        rng = np.random.default_rng(8)
        inp = rng.random((7, 7))
        guide = np.full((7, 7), 0.4)
        np.testing.assert_allclose(
            guided_filter(inp, guide, 2, 1e-3), box_mean(inp, 2), atol=1e-9
        )

    def test_self_guidance_with_tiny_epsilon_is_identity(self):
        rng = np.random.default_rng(9)
        guide = rng.random((12, 12))  # high-variance guide
        out = guided_filter(guide, guide, 2, 1e-8)
        assert np.abs(out - guide).max() < 1e-3

    def test_matches_brute_force(self):
        rng = np.random.default_rng(10)
        inp = rng.random((6, 6))
        guide = rng.random((6, 6))
        np.testing.assert_allclose(
            guided_filter(inp, guide, 1, 1e-3),
            oracles.guided_filter(inp, guide, 1, 1e-3),
            atol=1e-9,
        )

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            guided_filter(np.zeros((4, 4)), np.zeros((4, 5)), 1, 1e-3)

    def test_nonpositive_epsilon_rejected(self):
        with pytest.raises(ValueError):
            guided_filter(np.zeros((4, 4)), np.zeros((4, 4)), 1, 0.0)


class TestRecoverScene:
    def test_full_transmission_is_identity(self):
        rng = np.random.default_rng(11)
        img = rng.random((5, 5, 3))
        out = recover_scene(img, [0.8] * 3, np.ones((5, 5)))
        np.testing.assert_allclose(out, img, atol=1e-12)

    def test_image_equal_to_airlight_is_fixed(self):
        img = np.full((4, 4, 3), 0.65)
        out = recover_scene(img, [0.65] * 3, np.full((4, 4), 0.2))
        np.testing.assert_allclose(out, 0.65, atol=1e-12)

    def test_hand_computed_floor_and_clamp(self):
        img = np.full((1, 1, 3), 0.5)
        out = recover_scene(img, [0.8] * 3, np.full((1, 1), 0.05), t_floor=0.1)
        # (0.5 - 0.8) / 0.1 + 0.8 = -2.2, clamped to 0
        np.testing.assert_allclose(out, 0.0)


class TestAdjustBrightness:
    def test_white_image_unchanged(self):
        img = np.ones((4, 4, 3))
        np.testing.assert_allclose(adjust_brightness(img), img)

    def test_dark_limit_doubles(self):
        img = np.full((4, 4, 3), 1e-9)
        np.testing.assert_allclose(adjust_brightness(img), 2e-9, rtol=1e-6)

    def test_hand_computed_constant_gray(self):
        img = np.full((3, 3, 3), 100.0 / 255.0)
        out = adjust_brightness(img)
        np.testing.assert_allclose(out, (100.0 / 255.0) * (2.0 - 100.0 / 255.0), atol=1e-12)
        np.testing.assert_allclose(out * 255.0, 160.7843, atol=1e-3)

    def test_never_darkens_when_mean_below_one(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            img = rng.random((6, 6, 3))
            out = adjust_brightness(img)
            assert (out >= img - 1e-12).all()

    def test_argmax_location_invariant(self):
        rng = np.random.default_rng(13)
        img = rng.random((8, 8, 3)) * 0.6
        out = adjust_brightness(img)
        lum_in = to_grayscale(img)
        lum_out = to_grayscale(out)
        assert np.unravel_index(lum_in.argmax(), lum_in.shape) == np.unravel_index(
            lum_out.argmax(), lum_out.shape
        )


class TestDehazeDcp:
    def test_haze_free_image_passes_through(self):
        # per-pixel zero channel minimum forces transmission to 1, so the
        # recovery is the identity and only the brightness stretch acts
        rng = np.random.default_rng(14)
        img = _zero_min_image(rng, 20, 20)
        out, t, _ = dehaze_dcp(img)
        np.testing.assert_allclose(t, 1.0, atol=1e-9)
        assert np.abs(out - adjust_brightness(img)).mean() < 0.02

    def test_round_trip_restores_hazed_scene(self):
        rng = np.random.default_rng(15)
        clear = _zero_min_image(rng, 48, 48)
        airlight = np.array([0.8, 0.8, 0.8])
        hazy = synthesize_haze(clear, HazeParams(airlight, np.full((48, 48), 0.6)))
        restored, t, _ = dehaze_dcp(hazy, brightness=False)
        assert np.abs(restored - clear).mean() < 0.1
        assert t.min() >= 0.0 and t.max() <= 1.0

    def test_transmission_in_omega_band_before_refinement(self):
        rng = np.random.default_rng(16)
        params = DcpParams()
        img = rng.random((12, 12, 3))
        airlight = estimate_airlight(img, params.airlight_fraction)
        t = estimate_transmission(img, airlight, params, variant="avg")
        assert t.min() >= 1.0 - params.omega - 1e-12 and t.max() <= 1.0 + 1e-12


class TestDcpParams:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"omega": 0.0},
            {"omega": 1.0},
            {"t_floor": 0.0},
            {"t_floor": 1.5},
            {"airlight_fraction": 0.0},
            {"window_radius": -1},
            {"guided_epsilon": 0.0},
        ],
    )
    def test_invalid_parameters_rejected(self, kwargs):
        with pytest.raises(ValueError):
            DcpParams(**kwargs)
