import numpy as np
import pytest

from longrecon import kspace as ksp
from longrecon.errors import InvalidInputError
from longrecon.masks import SamplingMask, generate_poisson_mask


def random_kspace(rng, shape=(4, 16, 12)):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class TestTransforms:
    def test_zero_kspace_gives_zero_images(self):
        k = np.zeros((2, 8, 8), dtype=complex)
        assert np.all(ksp.inverse_transform(k) == 0)

    def test_dc_delta_gives_constant_magnitude(self):
        ny, nz = 10, 6
        k = np.zeros((1, ny, nz), dtype=complex)
        k[0, ny // 2, nz // 2] = 1.0
        img = ksp.inverse_transform(k)
        expected = 1.0 / np.sqrt(ny * nz)
        assert np.allclose(np.abs(img), expected, atol=1e-12)

    def test_roundtrip(self, rng):
        k = random_kspace(rng)
        back = ksp.forward_transform(ksp.inverse_transform(k))
        assert np.max(np.abs(back - k)) < 1e-6 * np.max(np.abs(k))

    def test_constant_image_concentrates_at_dc(self):
        imgs = np.ones((1, 8, 8), dtype=complex)
        k = ksp.forward_transform(imgs)
        dc = k[0, 4, 4]
        k[0, 4, 4] = 0
        assert np.abs(dc) == pytest.approx(8.0)  # sqrt(64) under ortho scaling
        assert np.max(np.abs(k)) < 1e-10

    def test_parseval(self, rng):
        imgs = random_kspace(rng)
        k = ksp.forward_transform(imgs)
        assert np.linalg.norm(k) == pytest.approx(np.linalg.norm(imgs), rel=1e-6)

    def test_unitarity_norm_preserved(self, rng):
        k = random_kspace(rng)
        assert np.linalg.norm(ksp.inverse_transform(k)) == pytest.approx(
            np.linalg.norm(k), rel=1e-6
        )

    def test_shape_validation(self):
        with pytest.raises(InvalidInputError):
            ksp.inverse_transform(np.zeros((8, 8), dtype=complex))
        with pytest.raises(InvalidInputError):
            ksp.inverse_transform(np.full((1, 4, 4), np.nan + 0j))


class TestRss:
    def test_single_coil_identity(self, rng):
        img = rng.random((1, 8, 8))
        assert np.allclose(ksp.rss_combine(img.astype(complex)), img[0])

    def test_two_coils_scaled(self, rng):
        x = rng.random((8, 8))
        imgs = np.stack([x / np.sqrt(2), x / np.sqrt(2)]).astype(complex)
        assert np.allclose(ksp.rss_combine(imgs), x)

    def test_matches_per_pixel_loop(self, rng):
        imgs = random_kspace(rng, (4, 8, 8))
        expected = np.zeros((8, 8))
        for y in range(8):
            for z in range(8):
                acc = 0.0
                for c in range(4):
                    acc += abs(imgs[c, y, z]) ** 2
                expected[y, z] = np.sqrt(acc)
        assert np.max(np.abs(ksp.rss_combine(imgs) - expected)) < 1e-7

    def test_empty_coil_axis_rejected(self):
        with pytest.raises(InvalidInputError):
            ksp.rss_combine(np.zeros((0, 8, 8), dtype=complex))


class TestExpandReduce:
    def test_identity_sensitivity(self, rng):
        img = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        maps = np.ones((1, 8, 8), dtype=complex)
        assert np.array_equal(ksp.expand(img, maps)[0], img)
        assert np.allclose(ksp.reduce(img[None], maps), img)

    def test_roundtrip_with_normalized_maps(self, rng, coil_maps):
        maps = coil_maps
        img = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
        back = ksp.reduce(ksp.expand(img, maps), maps)
        assert np.max(np.abs(back - img)) < 1e-6 * np.max(np.abs(img))

    def test_rss_of_expand_is_magnitude(self, rng, coil_maps):
        img = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
        assert np.allclose(ksp.rss_combine(ksp.expand(img, coil_maps)), np.abs(img))

    def test_adjointness(self, rng, coil_maps):
        maps = coil_maps
        x = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
        y = rng.standard_normal(maps.shape) + 1j * rng.standard_normal(maps.shape)
        lhs = np.vdot(ksp.expand(x, maps), y)
        rhs = np.vdot(x, ksp.reduce(y, maps))
        assert abs(lhs - rhs) < 1e-6 * max(abs(lhs), abs(rhs))

    def test_zero_support_pixels_annihilate(self, rng):
        maps = synth = np.ones((2, 4, 4), dtype=complex) / np.sqrt(2)
        maps = synth.copy()
        maps[:, 0, 0] = 0.0
        img = rng.standard_normal((4, 4)) + 0j
        out = ksp.reduce(ksp.expand(img, maps), maps)
        assert out[0, 0] == 0

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(InvalidInputError):
            ksp.expand(np.zeros((4, 4), complex), np.zeros((2, 8, 8), complex))
        with pytest.raises(InvalidInputError):
            ksp.reduce(np.zeros((2, 4, 4), complex), np.zeros((2, 8, 8), complex))


class TestUndersample:
    def test_identity_mask(self, rng):
        k = random_kspace(rng)
        mask = SamplingMask(np.ones(k.shape[1:], np.uint8), 1.0, 0, 0)
        assert np.array_equal(ksp.undersample(k, mask), k)

    def test_zero_mask_annihilates(self, rng):
        k = random_kspace(rng)
        out = ksp.undersample(k, np.zeros(k.shape[1:], np.uint8))
        assert np.all(out == 0)

    def test_positional_oracle(self, rng):
        k = random_kspace(rng, (3, 12, 10))
        mask = generate_poisson_mask((12, 10), 2.0, 2, seed=3)
        out = ksp.undersample(k, mask)
        on = mask.mask == 1
        assert np.array_equal(out[:, on], k[:, on])
        assert np.all(out[:, ~on] == 0)  # exact zeros

    def test_idempotent(self, rng):
        k = random_kspace(rng, (2, 12, 10))
        mask = generate_poisson_mask((12, 10), 2.0, 2, seed=4)
        once = ksp.undersample(k, mask)
        assert np.array_equal(ksp.undersample(once, mask), once)

    def test_dim_mismatch_rejected(self, rng):
        k = random_kspace(rng)
        with pytest.raises(InvalidInputError):
            ksp.undersample(k, np.ones((4, 4), np.uint8))


def test_property_battery(rng):
    """Roundtrip, Parseval, adjointness over random instances at 1e-6."""
    from longrecon.phantom import synthesize_coil_maps

    for trial in range(40):
        shape = (int(rng.integers(1, 5)), int(rng.integers(8, 24)), int(rng.integers(8, 24)))
        k = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        imgs = ksp.inverse_transform(k)
        assert np.linalg.norm(imgs) == pytest.approx(np.linalg.norm(k), rel=1e-6)
        back = ksp.forward_transform(imgs)
        assert np.max(np.abs(back - k)) < 1e-6 * np.max(np.abs(k))
        maps = synthesize_coil_maps(shape[1:], shape[0], seed=trial)
        x = rng.standard_normal(shape[1:]) + 1j * rng.standard_normal(shape[1:])
        y = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        lhs = np.vdot(ksp.expand(x, maps), y)
        rhs = np.vdot(x, ksp.reduce(y, maps))
        assert abs(lhs - rhs) < 1e-6 * max(abs(lhs), abs(rhs), 1e-12)
