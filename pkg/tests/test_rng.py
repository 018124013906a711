import numpy as np

from wavefm.rng import derive_seed, draw_noise, uniforms


def test_fixed_seed_fixed_values():
    a = draw_noise(8, 42)
    b = draw_noise(8, 42)
    assert a.tobytes() == b.tobytes()
    # frozen on first run; Philox + Box-Muller is platform independent
    assert np.allclose(a, FROZEN_SEED42, rtol=0, atol=1e-15)


def test_different_seeds_differ():
    assert not np.all(draw_noise(8, 1) == draw_noise(8, 2))
    assert not np.all(draw_noise(8, 1, stream=0) == draw_noise(8, 1, stream=1))


def test_moments_of_a_million_draws():
    z = draw_noise(1_000_000, 7)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01


def test_uniforms_open_interval():
    u = uniforms(100_000, 3)
    assert u.min() > 0.0 and u.max() < 1.0


def test_odd_length_is_prefix_of_even():
    assert np.array_equal(draw_noise(7, 5), draw_noise(8, 5)[:7])


def test_derive_seed_stable_and_separated():
    assert derive_seed(1, "a") == derive_seed(1, "a")
    assert derive_seed(1, "a") != derive_seed(1, "b")
    assert derive_seed(1, "a") != derive_seed(2, "a")
    assert 0 <= derive_seed(123, "x", 4) < 2 ** 64


FROZEN_SEED42 = np.array([0.23454992498689398, 0.5842987087552288, -0.4201587892586172, 0.3276818666328492, -1.2955005147471355, 0.5659727175030446, 1.6725885638284879, 0.6897107983814802])
