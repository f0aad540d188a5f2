import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from succession._numdiff import SECOND_ORDER_SCALE, central_gradient, central_hessian, central_jacobian
from succession.family import (
    DegenerateFamilyError,
    make_bernoulli,
    make_categorical,
    make_custom,
    parse_family,
)

BERN = make_bernoulli()
CAT3 = make_categorical(3)
COUNTING = make_custom([1, 1, 1], [[0], [1], [2]], name="counting")
FAMILIES = [BERN, CAT3, make_categorical(4), COUNTING]


def enum_moments(family, theta):
    """Moments by explicit loops over the alphabet, independent of the vectorised code."""
    w = np.array([family.base_weights[x] * np.exp(float(np.dot(theta, family.features[x])))
                  for x in range(family.alphabet_size)])
    p = w / w.sum()
    mu = sum(p[x] * family.features[x] for x in range(family.alphabet_size))
    d = family.dim
    cov = np.zeros((d, d))
    third = np.zeros((d, d, d))
    for x in range(family.alphabet_size):
        s = family.features[x] - mu
        cov += p[x] * np.outer(s, s)
        third += p[x] * np.einsum("i,j,k->ijk", s, s, s)
    return p, mu, cov, third


# -- examples -----------------------------------------------------------------


def test_bernoulli_values():
    np.testing.assert_allclose(BERN.prob_table(0.0), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(BERN.mean_params(0.0), [0.5], atol=1e-15)
    np.testing.assert_allclose(BERN.prob_table(np.log(9)), [0.1, 0.9], atol=1e-15)
    np.testing.assert_allclose(BERN.mean_params(np.log(9)), [0.9], atol=1e-15)
    assert BERN.log_partition(0.0) == pytest.approx(np.log(2), abs=1e-15)
    assert BERN.log_partition(np.log(9)) == pytest.approx(np.log(10), abs=1e-14)
    np.testing.assert_allclose(BERN.fisher_matrix(0.0), [[0.25]], atol=1e-15)
    np.testing.assert_allclose(BERN.fisher_matrix(np.log(9)), [[0.09]], atol=1e-15)
    np.testing.assert_allclose(BERN.skewness_tensor(0.0), np.zeros((1, 1, 1)), atol=1e-16)
    np.testing.assert_allclose(BERN.skewness_tensor(np.log(9)).ravel(), [-0.072], atol=1e-15)


def test_categorical_values():
    np.testing.assert_allclose(CAT3.prob_table([0, 0]), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(CAT3.prob_table([np.log(2), 0]), [0.5, 0.25, 0.25], atol=1e-15)
    np.testing.assert_allclose(CAT3.mean_params([np.log(2), 0]), [0.5, 0.25], atol=1e-15)
    assert CAT3.log_partition([0, 0]) == pytest.approx(np.log(3), abs=1e-15)
    np.testing.assert_allclose(CAT3.fisher_matrix([0, 0]), [[2 / 9, -1 / 9], [-1 / 9, 2 / 9]], atol=1e-15)
    # E(phi_1 - 1/3)^3 = 1/3 (2/3)^3 + 2/3 (-1/3)^3 = 6/81
    assert CAT3.skewness_tensor([0, 0])[0, 0, 0] == pytest.approx(6 / 81, abs=1e-15)


def test_categorical_two_matches_bernoulli_relabelled():
    # categorical(2) uses symbol 0 as the indicator; Bernoulli uses symbol 1
    cat2 = make_categorical(2)
    for th in [-3.0, -0.2, 0.0, 1.7]:
        np.testing.assert_allclose(cat2.prob_table([th])[::-1], BERN.prob_table(th), atol=1e-15)


def test_custom_families():
    b = make_custom([1, 1], [[0], [1]])
    np.testing.assert_allclose(b.prob_table(0.7), BERN.prob_table(0.7), atol=1e-15)
    np.testing.assert_allclose(COUNTING.prob_table(0.0), [1 / 3] * 3, atol=1e-15)
    with pytest.raises(DegenerateFamilyError, match="not positive definite"):
        make_custom([1, 1], [[0, 0], [1, 1]])


@pytest.mark.parametrize("k", [1, 0, -2])
def test_categorical_rejects_small_k(k):
    with pytest.raises(ValueError):
        make_categorical(k)


def test_custom_rejects_bad_shapes():
    with pytest.raises(ValueError):
        make_custom([1, 1, 1], [[0], [1]])
    with pytest.raises(ValueError):
        make_custom([1, -1], [[0], [1]])


def test_parse_family(tmp_path):
    assert parse_family("bernoulli").alphabet_size == 2
    assert parse_family("categorical:5").dim == 4
    path = tmp_path / "fam.json"
    path.write_text(json.dumps({"base": [1, 2, 1], "features": [[0], [1], [2]]}))
    fam = parse_family(f"custom:{path}")
    np.testing.assert_allclose(fam.prob_table(0.0), [0.25, 0.5, 0.25], atol=1e-15)
    for bad in ["poisson", "categorical:x", f"custom:{tmp_path / 'missing.json'}"]:
        with pytest.raises((ValueError, OSError)):
            parse_family(bad)


def test_arrays_are_read_only():
    with pytest.raises(ValueError):
        BERN.features[0, 0] = 5.0


def test_overflow_safe():
    p = BERN.prob_table(700.0)
    assert np.all(np.isfinite(p)) and p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.isfinite(CAT3.log_partition([30.0, -30.0]))


# -- sampling -----------------------------------------------------------------


def test_sample_empty_and_deterministic():
    assert BERN.sample(0.0, 1, 0).shape == (0,)
    np.testing.assert_array_equal(BERN.sample(0.3, 99, 50), BERN.sample(0.3, 99, 50))


def test_sample_pinned():
    s = BERN.sample(0.0, 12345, 100_000)
    assert s.mean() == pytest.approx(0.50031, abs=1e-12)
    assert 0.49 <= s.mean() <= 0.51
    np.testing.assert_array_equal(BERN.sample(np.log(0.7 / 0.3), 2024, 10), [1, 0, 1, 1, 1, 0, 0, 0, 1, 0])


def test_sample_law_of_large_numbers_categorical():
    theta = np.array([0.4, -0.3])
    s = CAT3.sample(theta, 7, 100_000)
    p = CAT3.prob_table(theta)
    freq = np.bincount(s, minlength=3) / s.size
    np.testing.assert_array_less(np.abs(freq - p), 3 * np.sqrt(p * (1 - p) / s.size))


# -- properties against enumeration and finite differences ---------------------

theta_1d = st.floats(-8, 8, allow_nan=False)
theta_2d = arrays(np.float64, 2, elements=st.floats(-6, 6, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(theta_2d)
def test_categorical_moments_match_enumeration(theta):
    p, mu, cov, third = enum_moments(CAT3, theta)
    np.testing.assert_allclose(CAT3.prob_table(theta), p, rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(CAT3.mean_params(theta), mu, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(CAT3.fisher_matrix(theta), cov, rtol=1e-10, atol=1e-15)
    np.testing.assert_allclose(CAT3.skewness_tensor(theta), third, rtol=1e-9, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(theta_1d)
def test_counting_moments_match_enumeration(theta):
    p, mu, cov, third = enum_moments(COUNTING, np.array([theta]))
    assert COUNTING.prob_table(theta).sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(COUNTING.fisher_matrix(theta), cov, rtol=1e-10, atol=1e-15)
    np.testing.assert_allclose(COUNTING.skewness_tensor(theta), third, rtol=1e-9, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(theta_2d)
def test_skewness_symmetry(theta):
    fam = make_categorical(3)
    t = fam.skewness_tensor(theta)
    for perm in itertools.permutations(range(3)):
        np.testing.assert_array_equal(t, np.transpose(t, perm))


@pytest.mark.parametrize("family", FAMILIES, ids=lambda f: f.name)
def test_derivative_identities(family):
    rng = np.random.default_rng(3)
    for _ in range(20):
        theta = rng.uniform(-2, 2, family.dim)
        np.testing.assert_allclose(central_gradient(family.log_partition, theta), family.mean_params(theta),
                                   rtol=1e-6, atol=1e-8)
        fisher = family.fisher_matrix(theta)
        fd = central_hessian(family.log_partition, theta)
        assert np.max(np.abs(fd - fisher)) <= 1e-5 * max(1.0, np.max(np.abs(fisher)))
        dfisher = central_jacobian(family.fisher_matrix, theta, SECOND_ORDER_SCALE)
        assert np.max(np.abs(dfisher - family.skewness_tensor(theta))) <= 1e-4


@pytest.mark.parametrize("family", FAMILIES, ids=lambda f: f.name)
def test_log_prob_hessian_is_minus_fisher(family):
    theta = np.linspace(-1, 1, family.dim)
    for x in range(family.alphabet_size):
        fd = central_hessian(lambda th: family.log_prob_table(th)[x], theta)
        np.testing.assert_allclose(fd, -family.fisher_matrix(theta), atol=1e-5)
    np.testing.assert_allclose(family.log_prob_hessians(theta)[0], -family.fisher_matrix(theta))


def test_batched_evaluation_matches_pointwise():
    thetas = np.random.default_rng(0).normal(size=(7, 2))
    batch = CAT3.skewness_tensor(thetas)
    for i, th in enumerate(thetas):
        np.testing.assert_allclose(batch[i], CAT3.skewness_tensor(th), atol=1e-16)


def test_theta_from_probs_round_trip():
    theta = np.array([1.2, -0.5])
    np.testing.assert_allclose(CAT3.theta_from_probs(CAT3.prob_table(theta)), theta, atol=1e-13)
    with pytest.raises(ValueError):
        COUNTING.theta_from_probs([1 / 3] * 3)


def test_score_is_feature_minus_mean():
    theta = np.array([0.3, 0.1])
    fd = central_gradient(lambda th: CAT3.log_prob_table(th)[2], theta)
    np.testing.assert_allclose(CAT3.score(theta, 2), fd, atol=1e-8)


def test_bad_theta_shape():
    with pytest.raises(ValueError):
        CAT3.prob_table([0.0])
