import numpy as np
import pytest

from longrecon.errors import ConfigurationError, InvalidInputError
from longrecon.masks import SamplingMask, center_disc, generate_poisson_mask


def brute_force_disc_count(radius: int) -> int:
    count = 0
    for y in range(-radius, radius + 1):
        for z in range(-radius, radius + 1):
            if y * y + z * z <= radius * radius:
                count += 1
    return count


def test_center_disc_lattice_count_radius_16():
    # enumeration oracle: 797 integer lattice points within radius 16
    assert brute_force_disc_count(16) == 797
    disc = center_disc((218, 170), 16)
    assert int(disc.sum()) == 797


def test_generated_mask_center_fully_sampled():
    mask = generate_poisson_mask((218, 170), 5.0, 16, seed=11)
    disc = center_disc((218, 170), 16)
    assert mask.mask[disc].all()


@pytest.mark.parametrize("R", [5.0, 10.0, 15.0, 20.0])
def test_acceleration_within_tolerance(R):
    mask = generate_poisson_mask((218, 170), R, 16, seed=2)
    assert abs(mask.acceleration - R) <= 0.05 * R


def test_deterministic_per_seed():
    a = generate_poisson_mask((96, 80), 8.0, 10, seed=42)
    b = generate_poisson_mask((96, 80), 8.0, 10, seed=42)
    assert np.array_equal(a.mask, b.mask)
    c = generate_poisson_mask((96, 80), 8.0, 10, seed=43)
    assert not np.array_equal(a.mask, c.mask)


def test_full_sampling_shortcut():
    mask = generate_poisson_mask((30, 20), 1.0, 4, seed=9)
    assert mask.mask.all()
    other = generate_poisson_mask((30, 20), 1.0, 4, seed=10)
    assert np.array_equal(mask.mask, other.mask)


def test_entries_are_binary():
    mask = generate_poisson_mask((64, 48), 6.0, 6, seed=1)
    assert set(np.unique(mask.mask)) <= {0, 1}


def test_infeasible_center_rejected():
    # radius-16 disc (797 points) exceeds the budget of a 32x32 grid at R=4
    with pytest.raises(ConfigurationError):
        generate_poisson_mask((32, 32), 4.0, 16, seed=0)


def test_bad_target_rejected():
    with pytest.raises(ConfigurationError):
        generate_poisson_mask((32, 32), 0.5, 2, seed=0)


def test_sampling_mask_validates_entries():
    with pytest.raises(InvalidInputError):
        SamplingMask(np.full((4, 4), 2, np.uint8), 2.0, 0, 0)
    with pytest.raises(InvalidInputError):
        SamplingMask(np.ones((4, 4, 2), np.uint8), 2.0, 0, 0)


def test_variable_density_decreases_radially():
    mask = generate_poisson_mask((128, 128), 8.0, 8, seed=5)
    yy, zz = np.mgrid[:128, :128]
    r = np.sqrt((yy - 64.0) ** 2 + (zz - 64.0) ** 2)
    inner = mask.mask[(r > 10) & (r < 30)].mean()
    outer = mask.mask[r > 55].mean()
    assert inner > outer
