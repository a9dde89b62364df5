import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from birdssl.objectives import (OBJECTIVES, DegenerateInputError, LossOutput, ObjectiveConfig,
                                barlow_twins_loss, cross_correlation, finite_difference_check,
                                frobenius_sq, frossl_loss, l2_normalize_rows, paired_objective,
                                simclr_loss, supcon_loss)

from oracles import barlow_twins_naive, frossl_naive, simclr_naive, supcon_naive

CFG = ObjectiveConfig()


def batch(seed, n=8, d=4):
    r = np.random.default_rng(seed)
    return r.standard_normal((n, d)), r.standard_normal((n, d))


# --- normalisation ----------------------------------------------------------

def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize_rows([[3.0, 4.0]]), [[0.6, 0.8]])
    unit = np.eye(3)
    np.testing.assert_array_equal(l2_normalize_rows(unit), unit)
    with pytest.raises(DegenerateInputError):
        l2_normalize_rows([[0.0, 0.0]])


# --- SimCLR -----------------------------------------------------------------

def test_simclr_single_pair_is_zero():
    out = simclr_loss([[1.0, 2.0]], [[-3.0, 0.5]])
    assert out.value == 0.0
    assert not out.grad_z1.any() and not out.grad_z2.any()


def test_simclr_two_by_two_brute_force():
    z = np.eye(2)
    expected = simclr_naive(z, z, 1.0)
    # hand value: each anchor sees exp(1) for its positive and exp(0) twice
    assert expected == pytest.approx(-np.log(np.e / (np.e + 2)), rel=1e-15)
    assert simclr_loss(z, z, CFG).value == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_simclr_matches_naive(seed):
    z1, z2 = batch(seed)
    for tau in (1.0, 0.3):
        got = simclr_loss(z1, z2, ObjectiveConfig(temperature=tau)).value
        assert got == pytest.approx(simclr_naive(z1, z2, tau), rel=1e-12)


def test_simclr_symmetric(rng):
    z1, z2 = rng.standard_normal((2, 6, 5))
    assert simclr_loss(z1, z2).value == simclr_loss(z2, z1).value


# --- Barlow Twins -----------------------------------------------------------

def test_bt_perfect_correlation_one_dim(rng):
    z = rng.standard_normal((6, 1))
    assert barlow_twins_loss(z, z).value == pytest.approx(0.0, abs=1e-24)


def test_bt_identity_correlation_gives_zero():
    z = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    np.testing.assert_allclose(cross_correlation(z, z), np.eye(2), atol=1e-15)
    assert barlow_twins_loss(z, z).value == pytest.approx(0.0, abs=1e-24)


@pytest.mark.parametrize("seed", range(5))
def test_bt_matches_naive(seed):
    z1, z2 = batch(seed)
    got = barlow_twins_loss(z1, z2, ObjectiveConfig(lam=1e-2)).value
    assert got == pytest.approx(barlow_twins_naive(z1, z2, 1e-2), rel=1e-12)


def test_bt_correlation_bounded(rng):
    for _ in range(20):
        c = cross_correlation(*rng.standard_normal((2, 10, 6)))
        assert np.all(np.abs(c) <= 1 + 1e-6)


def test_bt_zero_variance_raises_unless_robust(rng):
    z1, z2 = rng.standard_normal((2, 5, 3))
    z1[:, 1] = 7.0
    with pytest.raises(DegenerateInputError, match="dimension 1"):
        barlow_twins_loss(z1, z2)
    out = barlow_twins_loss(z1, z2, ObjectiveConfig(robust_norm=True))
    assert np.isfinite(out.value)


# --- FroSSL -----------------------------------------------------------------

def test_frossl_single_row_is_zero():
    assert frossl_loss([[1.0]], [[1.0]]).value == 0.0


def test_frossl_identical_views_only_regulariser(rng):
    z = rng.standard_normal((8, 4))
    a = z - z.mean(axis=0)
    a /= np.sqrt(np.sum(a ** 2))
    r = 2 * np.log(frobenius_sq(a.T @ a))
    assert frossl_loss(z, z, CFG).value == pytest.approx(CFG.lam * r, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_frossl_matches_naive(seed):
    z1, z2 = batch(seed)
    assert frossl_loss(z1, z2, CFG).value == pytest.approx(frossl_naive(z1, z2, CFG.lam), rel=1e-12)


def test_frossl_duality(rng):
    z = rng.standard_normal((8, 4))
    left, right = frobenius_sq(z.T @ z), frobenius_sq(z @ z.T)
    assert abs(left - right) / left < 1e-10


def test_frossl_zero_matrix_raises():
    with pytest.raises(DegenerateInputError):
        frossl_loss(np.ones((4, 3)), np.random.default_rng(0).standard_normal((4, 3)))


# --- SupCon -----------------------------------------------------------------

def test_supcon_two_same_label_is_zero():
    out = supcon_loss([[1.0, 0.0], [0.3, 2.0]], [5, 5])
    assert out.value == pytest.approx(0.0, abs=1e-15)


def test_supcon_reduces_to_simclr(rng):
    z1, z2 = rng.standard_normal((2, 6, 5))
    labels = np.arange(6)
    sup = supcon_loss(np.vstack([z1, z2]), np.concatenate([labels, labels]))
    assert sup.value == pytest.approx(simclr_loss(z1, z2).value, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_supcon_matches_naive(seed):
    r = np.random.default_rng(seed)
    z = r.standard_normal((12, 5))
    labels = np.array([0, 1, 2] * 4)
    r.shuffle(labels)
    got = supcon_loss(z, labels, ObjectiveConfig(temperature=0.5)).value
    assert got == pytest.approx(supcon_naive(z, labels, 0.5), rel=1e-12)


def test_supcon_empty_positive_set_raises():
    with pytest.raises(DegenerateInputError, match="anchor"):
        supcon_loss(np.eye(3), [0, 0, 1])


def test_supcon_label_length_checked():
    with pytest.raises(ValueError):
        supcon_loss(np.eye(3), [0, 0])


# --- gradients --------------------------------------------------------------

@pytest.mark.parametrize("name", OBJECTIVES)
@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(name, seed):
    z1, z2 = batch(100 + seed, 8, 16)
    labels = np.random.default_rng(seed).integers(0, 3, size=8) if name == "supcon" else None
    assert finite_difference_check(name, z1, z2, CFG, labels=labels) < 1e-4


def test_robust_bt_gradient(rng):
    z1, z2 = rng.standard_normal((2, 8, 6))
    assert finite_difference_check("bt", z1, z2, ObjectiveConfig(robust_norm=True)) < 1e-4


def test_checker_catches_corrupted_gradient(rng):
    z1, z2 = rng.standard_normal((2, 8, 16))
    good = simclr_loss(z1, z2)
    bad_grad = good.grad_z1.copy()
    bad_grad[0, 0] += 1.0
    bad = LossOutput(good.value, bad_grad, good.grad_z2)
    assert finite_difference_check("simclr", z1, z2, analytic=bad) > 1e-2


def test_checker_stationary_single_pair():
    assert finite_difference_check("simclr", [[0.3, -1.2]], [[2.0, 0.1]]) < 1e-8


def test_checker_rejects_bad_step(rng):
    with pytest.raises(ValueError):
        finite_difference_check("bt", *rng.standard_normal((2, 4, 3)), h=0.0)


def test_unknown_objective():
    with pytest.raises(ValueError):
        paired_objective("byol")


# --- properties -------------------------------------------------------------

finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 9), d=st.integers(2, 6))
def test_permutation_invariance(seed, n, d):
    r = np.random.default_rng(seed)
    z1, z2 = r.standard_normal((2, n, d))
    perm = r.permutation(n)
    labels = r.integers(0, 3, size=n)
    for name in OBJECTIVES:
        base = paired_objective(name, labels)(z1, z2, CFG).value
        moved = paired_objective(name, labels[perm])(z1[perm], z2[perm], CFG).value
        assert moved == pytest.approx(base, rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 9))
def test_row_scale_invariance_of_contrastive_losses(seed, n):
    r = np.random.default_rng(seed)
    z1, z2 = r.standard_normal((2, n, 4))
    s1, s2 = r.uniform(0.1, 10, (2, n, 1))
    assert simclr_loss(s1 * z1, s2 * z2).value == pytest.approx(simclr_loss(z1, z2).value, rel=1e-12)
    z = np.vstack([z1, z2])
    lab = np.concatenate([np.arange(n)] * 2)
    assert (supcon_loss(np.vstack([s1 * z1, s2 * z2]), lab).value
            == pytest.approx(supcon_loss(z, lab).value, rel=1e-12))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(3, 10), d=st.integers(1, 5))
def test_bt_affine_invariance(seed, n, d):
    r = np.random.default_rng(seed)
    z1, z2 = r.standard_normal((2, n, d))
    scale = r.uniform(0.2, 5.0, (2, d))
    shift = r.uniform(-10, 10, (2, d))
    base = barlow_twins_loss(z1, z2).value
    moved = barlow_twins_loss(scale[0] * z1 + shift[0], scale[1] * z2 + shift[1]).value
    assert moved == pytest.approx(base, rel=1e-9, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 9))
def test_losses_non_negative(seed, n):
    r = np.random.default_rng(seed)
    z1, z2 = r.standard_normal((2, n, 4))
    assert simclr_loss(z1, z2).value >= 0
    assert barlow_twins_loss(z1, z2).value >= 0
    lab = np.concatenate([np.arange(n)] * 2)
    assert supcon_loss(np.vstack([z1, z2]), lab).value >= 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 7), d=st.integers(1, 7))
def test_frobenius_duality_property(seed, n, d):
    z = np.random.default_rng(seed).standard_normal((n, d))
    left, right = frobenius_sq(z.T @ z), frobenius_sq(z @ z.T)
    assert abs(left - right) <= 1e-10 * left


def test_gradient_shapes_and_finiteness(rng):
    z1, z2 = rng.standard_normal((2, 5, 3))
    for name in OBJECTIVES:
        out = paired_objective(name)(z1, z2, CFG)
        assert out.grad_z1.shape == z1.shape and out.grad_z2.shape == z2.shape
        assert np.all(np.isfinite(out.grad_z1)) and np.all(np.isfinite(out.grad_z2))


def test_objective_config_invariants():
    with pytest.raises(ValueError):
        ObjectiveConfig(temperature=0)
    with pytest.raises(ValueError):
        ObjectiveConfig(lam=-1)
