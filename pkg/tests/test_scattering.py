import numpy as np
import pytest

from skydehaze.scattering import HazeParams, random_transmission_field, synthesize_haze


def _params(airlight, t):
    return HazeParams(np.asarray(airlight, dtype=float), t)


class TestSynthesizeHaze:
    def test_full_transmission_is_identity(self):
        rng = np.random.default_rng(0)
        img = rng.random((6, 8, 3))
        out = synthesize_haze(img, _params([0.7, 0.8, 0.9], np.ones((6, 8))))
        np.testing.assert_allclose(out, img, atol=1e-15)

    def test_zero_transmission_yields_airlight(self):
        rng = np.random.default_rng(1)
        img = rng.random((5, 5, 3))
        out = synthesize_haze(img, _params([0.6, 0.7, 0.8], np.zeros((5, 5))))
        np.testing.assert_allclose(out, np.broadcast_to([0.6, 0.7, 0.8], (5, 5, 3)))

    def test_hand_computed_midpoint(self):
        img = np.full((2, 2, 3), 0.2)
        out = synthesize_haze(img, _params([0.8] * 3, np.full((2, 2), 0.5)))
        np.testing.assert_allclose(out, 0.5, atol=1e-15)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            synthesize_haze(np.zeros((4, 4, 3)), _params([0.5] * 3, np.zeros((3, 4))))

    def test_output_is_convex_combination(self):
        rng = np.random.default_rng(2)
        img = rng.random((7, 7, 3))
        airlight = np.array([0.9, 0.85, 0.8])
        t = rng.random((7, 7))
        out = synthesize_haze(img, _params(airlight, t))
        lo = np.minimum(img, airlight)
        hi = np.maximum(img, airlight)
        assert (out >= lo - 1e-12).all() and (out <= hi + 1e-12).all()

    def test_monotone_toward_airlight_as_t_drops(self):
        img = np.full((3, 3, 3), 0.2)
        airlight = np.array([0.9, 0.9, 0.9])
        hazier = synthesize_haze(img, _params(airlight, np.full((3, 3), 0.3)))
        lighter = synthesize_haze(img, _params(airlight, np.full((3, 3), 0.7)))
        assert (np.abs(hazier - airlight) <= np.abs(lighter - airlight) + 1e-12).all()

    def test_exact_inversion_with_known_airlight(self):
        rng = np.random.default_rng(3)
        img = rng.random((6, 6, 3))
        airlight = np.array([0.8, 0.75, 0.85])
        t = np.full((6, 6), 0.55)
        hazy = synthesize_haze(img, _params(airlight, t))
        recovered = (hazy - airlight) / t[:, :, None] + airlight
        assert np.abs(recovered - img).max() < 1e-6

    def test_airlight_validation(self):
        with pytest.raises(ValueError):
            HazeParams(np.array([1.5, 0.5, 0.5]), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            HazeParams(np.array([0.5, 0.5, 0.5]), np.full((2, 2), 1.2))


class TestRandomTransmissionField:
    def test_same_seed_is_identical(self):
        for mode in ("constant", "smooth-gradient"):
            a = random_transmission_field(9, 7, mode, seed=42)
            b = random_transmission_field(9, 7, mode, seed=42)
            np.testing.assert_array_equal(a, b)

    def test_constant_mode_is_flat(self):
        field = random_transmission_field(10, 10, "constant", seed=5)
        assert field.max() - field.min() == 0.0

    def test_samples_stay_in_band(self):
        total = 0
        for seed in range(50):
            for mode in ("constant", "smooth-gradient"):
                field = random_transmission_field(12, 10, mode, seed=seed)
                assert field.min() >= 0.3 - 1e-12 and field.max() <= 0.9 + 1e-12
                total += field.size
        assert total >= 10_000

    def test_gradient_mode_varies(self):
        field = random_transmission_field(32, 32, "smooth-gradient", seed=1)
        assert field.max() - field.min() > 0.01

    def test_zero_dimensions_rejected(self):
        with pytest.raises(ValueError):
            random_transmission_field(0, 5, "constant", seed=0)
        with pytest.raises(ValueError):
            random_transmission_field(5, 0, "constant", seed=0)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            random_transmission_field(4, 4, "perlin", seed=0)
