import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from birdssl.audio import MelSpectrogram
from birdssl.augment import (AugmentConfig, augment_view, make_views, mask_blocks, mix,
                             spec_augment, time_shift)


def spec(values):
    return MelSpectrogram(np.asarray(values, dtype=np.float64), 0.02)


def random_spec(rng, f=128, t=247):
    return spec(rng.standard_normal((f, t)))


# --- time shift -------------------------------------------------------------

def test_time_shift_naive_oracle(rng):
    s = random_spec(rng, 6, 11)
    out = time_shift(s, 4).values
    for f in range(6):
        for t in range(11):
            assert out[f, t] == s.values[f, (t - 4) % 11]


def test_time_shift_group_examples(rng):
    s = random_spec(rng)
    T = s.n_frames
    np.testing.assert_array_equal(time_shift(s, 0).values, s.values)
    np.testing.assert_array_equal(time_shift(s, T).values, s.values)
    np.testing.assert_array_equal(time_shift(time_shift(s, 3), -3).values, s.values)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.integers(-1000, 1000))
def test_time_shift_preserves_rows(seed, shift):
    s = random_spec(np.random.default_rng(seed), 8, 37)
    out = time_shift(s, shift)
    assert out.shape == s.shape
    np.testing.assert_array_equal(np.sort(out.values, axis=1), np.sort(s.values, axis=1))


# --- mix --------------------------------------------------------------------

def test_mix_examples(rng):
    a, b = random_spec(rng), random_spec(rng)
    np.testing.assert_array_equal(mix(a, b, 1.0).values, a.values)
    np.testing.assert_array_equal(mix(a, b, 0.0).values, b.values)
    out = mix(spec(np.full((4, 5), 2.0)), spec(np.full((4, 5), -3.0)), 0.6)
    np.testing.assert_allclose(out.values, 0.0, atol=1e-15)
    for c in (0.0, 0.3, 0.61, 0.77, 1.0):
        np.testing.assert_array_equal(mix(a, a, c).values, a.values)


def test_mix_errors(rng):
    with pytest.raises(ValueError):
        mix(random_spec(rng, 4, 5), random_spec(rng, 4, 6), 0.5)
    with pytest.raises(ValueError):
        mix(random_spec(rng, 4, 5), random_spec(rng, 4, 5), 1.5)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(0.0, 1.0))
def test_mix_is_affine(seed, c):
    r = np.random.default_rng(seed)
    a, b = random_spec(r, 5, 9), random_spec(r, 5, 9)
    np.testing.assert_allclose(mix(a, b, c).values + mix(b, a, c).values, a.values + b.values,
                               rtol=0, atol=1e-13)


# --- spec augment -----------------------------------------------------------

def test_spec_augment_zero_blocks_identity(rng):
    s = random_spec(rng)
    assert spec_augment(s, AugmentConfig(sa_blocks=0), rng) is s


def test_spec_augment_full_width_band(rng):
    s = random_spec(rng, 16, 40)
    out = spec_augment(s, AugmentConfig(sa_blocks=1, sa_freq_width=16, sa_time_width=0), rng)
    assert np.all(out.values == s.values.mean())


def test_spec_augment_mask_area_bound(rng):
    cfg = AugmentConfig()
    for _ in range(50):
        s = random_spec(rng)
        changed = np.count_nonzero(spec_augment(s, cfg, rng).values != s.values)
        assert changed <= 3 * 30 * 247 + 3 * 10 * 128


def test_spec_augment_touches_only_sampled_blocks(rng):
    cfg = AugmentConfig()
    s = random_spec(rng)
    seed_state = np.random.default_rng(77)
    freq, time = mask_blocks(s, cfg, np.random.default_rng(77))
    out = spec_augment(s, cfg, seed_state).values
    inside = np.zeros(s.shape, dtype=bool)
    for f0 in freq:
        inside[f0:f0 + cfg.sa_freq_width, :] = True
    for t0 in time:
        inside[:, t0:t0 + cfg.sa_time_width] = True
    np.testing.assert_array_equal(out[~inside], s.values[~inside])
    assert np.all(out[inside] == s.values.mean())


def test_spec_augment_zero_fill(rng):
    s = random_spec(rng, 40, 50)
    out = spec_augment(s, AugmentConfig(sa_blocks=1, sa_freq_width=5, sa_time_width=0,
                                        mask_fill="zero"), rng)
    assert np.count_nonzero(out.values == 0.0) == 5 * 50


def test_spec_augment_rejects_wide_masks(rng):
    with pytest.raises(ValueError):
        spec_augment(random_spec(rng, 20, 50), AugmentConfig(), rng)


def test_augment_config_invariants():
    with pytest.raises(ValueError):
        AugmentConfig(mix_coeff_min=0.8, mix_coeff_max=0.7)
    with pytest.raises(ValueError):
        AugmentConfig(sa_blocks=-1)
    with pytest.raises(ValueError):
        AugmentConfig(mask_fill="noise")


# --- pipeline ---------------------------------------------------------------

OFF = AugmentConfig(time_shift=False, mix=False, spec_augment=False)


def test_views_identity_when_disabled(rng):
    a, b = random_spec(rng), random_spec(rng)
    v1, v2 = make_views(a, b, [], OFF, rng)
    np.testing.assert_array_equal(v1.values, a.values)
    np.testing.assert_array_equal(v2.values, b.values)


def test_views_deterministic(rng):
    a, b = random_spec(rng), random_spec(rng)
    pool = [random_spec(rng) for _ in range(4)]
    x = make_views(a, b, pool, AugmentConfig(), np.random.default_rng(5))
    y = make_views(a, b, pool, AugmentConfig(), np.random.default_rng(5))
    for p, q in zip(x, y):
        np.testing.assert_array_equal(p.values, q.values)
        assert p.shape == a.shape


def test_mix_only_stays_in_convex_hull(rng):
    cfg = AugmentConfig(time_shift=False, spec_augment=False)
    a = random_spec(rng, 10, 20)
    partner = random_spec(rng, 10, 20)
    for _ in range(50):
        v = augment_view(a, [partner], cfg, rng).values
        lo = np.minimum(a.values, partner.values)
        hi = np.maximum(a.values, partner.values)
        assert np.all((v >= lo - 1e-12) & (v <= hi + 1e-12))
        # coefficient >= 0.6 keeps the view closer to its own input
        assert np.all(np.abs(v - a.values) <= 0.4 * np.abs(partner.values - a.values) + 1e-12)


def test_mix_requires_pool(rng):
    with pytest.raises(ValueError):
        make_views(random_spec(rng), random_spec(rng), [], AugmentConfig(), rng)


def test_views_use_independent_shifts(rng):
    cfg = AugmentConfig(mix=False, spec_augment=False)
    a = random_spec(rng)
    shifts = set()
    for _ in range(20):
        v1, v2 = make_views(a, a, [a], cfg, rng)
        shifts.add(np.array_equal(v1.values, v2.values))
    assert False in shifts
