import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wiener_cubature.tensor_algebra import (
    Alphabet,
    ContractError,
    TensorSeries,
    cc_distance,
    chen_step,
    dilate,
    exp_trunc,
    expected_brownian_signature,
    group_membership_defect,
    homogeneous_norm,
    inverse,
    lie_projection,
    log_trunc,
    segment_exp,
    tensor_mul,
)

import oracle

A2 = Alphabet(2, False)


def random_series(rng, alphabet, m, batch=(), constant=0.0):
    levels = [np.full(batch + (1,), constant)]
    for k in range(1, m + 1):
        levels.append(rng.normal(size=batch + (alphabet.size**k,)))
    return TensorSeries(alphabet, m, levels)


def random_lie(rng, alphabet, m, batch=()):
    return lie_projection(random_series(rng, alphabet, m, batch))


alphabets = st.sampled_from([Alphabet(1, False), Alphabet(2, False), Alphabet(3, False), Alphabet(1, True), Alphabet(2, True)])


def test_alphabet_weights():
    a = Alphabet(2, True)
    assert a.letters == (0, 1, 2)
    assert [a.weight(i) for i in a.letters] == [2, 1, 1]
    with pytest.raises(ContractError):
        Alphabet(0, False)


def test_graded_words_are_masked():
    a = Alphabet(1, True)
    x = TensorSeries(a, 3, [np.ones(1), np.ones(2), np.ones(4), np.ones(8)])
    # words containing 0 count it twice: (0,1) has degree 3, (0,0) has degree 4
    assert x.coefficient((0, 1)) == 1.0
    assert x.coefficient((0, 0)) == 0.0
    assert x.coefficient((0, 1, 1)) == 0.0
    assert x.coefficient((1, 1, 1)) == 1.0
    assert (0, 0) not in x.words()


def test_product_of_two_letter_exponentials():
    g = exp_trunc(TensorSeries.letter(A2, 2, 1)) @ exp_trunc(TensorSeries.letter(A2, 2, 2))
    np.testing.assert_allclose(g.levels[1], [1.0, 1.0])
    np.testing.assert_allclose(g.level(2), [[0.5, 1.0], [0.0, 0.5]])


def test_unit_is_neutral():
    rng = np.random.default_rng(0)
    a = random_series(rng, A2, 3, constant=1.0)
    u = TensorSeries.unit(A2, 3)
    np.testing.assert_array_equal(tensor_mul(a, u).levels[2], a.levels[2])
    np.testing.assert_array_equal(tensor_mul(u, a).levels[3], a.levels[3])


def test_mismatched_operands_rejected():
    with pytest.raises(ContractError):
        tensor_mul(TensorSeries.unit(A2, 2), TensorSeries.unit(A2, 3))
    with pytest.raises(ContractError):
        tensor_mul(TensorSeries.unit(A2, 2), TensorSeries.unit(Alphabet(2, True), 2))


@given(alphabets, st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_associativity(alphabet, m, seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_series(rng, alphabet, m, constant=1.0) for _ in range(3))
    lhs = (a @ b) @ c
    rhs = a @ (b @ c)
    assert (lhs - rhs).max_abs() <= 1e-11


@given(alphabets, st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_product_matches_word_dict_oracle(alphabet, m, seed):
    rng = np.random.default_rng(seed)
    a = random_series(rng, alphabet, m, constant=1.0)
    b = random_series(rng, alphabet, m, constant=0.5)
    da = {w: a.coefficient(w) for w in a.words()}
    db = {w: b.coefficient(w) for w in b.words()}
    ref = oracle.mul(da, db, m, alphabet.has_time_letter)
    got = a @ b
    for w in got.words():
        assert got.coefficient(w) == pytest.approx(ref.get(w, 0.0), abs=1e-12)


def test_exp_examples():
    assert (exp_trunc(TensorSeries.zeros(A2, 3)) - TensorSeries.unit(A2, 3)).max_abs() == 0.0
    g = exp_trunc(TensorSeries.letter(A2, 2, 1))
    np.testing.assert_allclose(g.level(2), [[0.5, 0.0], [0.0, 0.0]])
    # e1 + [e1, e2]: antisymmetric level-2 part is e12 - e21
    x = TensorSeries.from_words(A2, 2, {(1,): 1.0, (1, 2): 1.0, (2, 1): -1.0})
    lv2 = exp_trunc(x).level(2)
    anti = 0.5 * (lv2 - lv2.T)
    np.testing.assert_allclose(anti, [[0.0, 1.0], [-1.0, 0.0]])


def test_exp_requires_zero_constant():
    with pytest.raises(ContractError):
        exp_trunc(TensorSeries.unit(A2, 2))


def test_log_examples():
    assert log_trunc(TensorSeries.unit(A2, 3)).max_abs() == 0.0
    g = exp_trunc(TensorSeries.letter(A2, 2, 1)) @ exp_trunc(TensorSeries.letter(A2, 2, 2))
    ell = log_trunc(g)
    np.testing.assert_allclose(ell.levels[1], [1.0, 1.0])
    np.testing.assert_allclose(ell.level(2), [[0.0, 0.5], [-0.5, 0.0]])
    with pytest.raises(ContractError):
        log_trunc(TensorSeries.zeros(A2, 2))


def test_log_exp_round_trip_step2():
    rng = np.random.default_rng(1)
    x = random_lie(rng, A2, 2, (100,))
    back = log_trunc(exp_trunc(x))
    scale = max(x.max_abs(), 1.0)
    assert (back - x).max_abs() <= 1e-12 * scale


@given(alphabets, st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_exp_log_inverse(alphabet, m, seed):
    rng = np.random.default_rng(seed)
    x = random_lie(rng, alphabet, m, (5,))
    g = exp_trunc(x)
    assert (exp_trunc(log_trunc(g)) - g).max_abs() <= 1e-12 * max(g.max_abs(), 1.0)
    assert (log_trunc(g) - x).max_abs() <= 1e-11 * max(x.max_abs(), 1.0)


def test_inverse():
    rng = np.random.default_rng(2)
    g = exp_trunc(random_lie(rng, Alphabet(2, True), 4))
    assert (g @ inverse(g) - TensorSeries.unit(g.alphabet, 4)).max_abs() <= 1e-12
    assert (inverse(g) @ g - TensorSeries.unit(g.alphabet, 4)).max_abs() <= 1e-12


def test_dilation_examples():
    u = TensorSeries.unit(A2, 3)
    assert (dilate(u, 7.0) - u).max_abs() == 0.0
    a1 = Alphabet(1, False)
    x = TensorSeries.from_words(a1, 2, {(): 1.0, (1,): 1.0, (1, 1): 1.0})
    y = dilate(x, 2.0)
    assert [y.coefficient(w) for w in [(), (1,), (1, 1)]] == [1.0, 2.0, 4.0]
    with pytest.raises(ContractError):
        dilate(x, -1.0)


def test_dilation_scales_time_letter_by_dt():
    a = Alphabet(1, True)
    x = TensorSeries.from_words(a, 3, {(0,): 1.0, (1,): 1.0, (0, 1): 1.0})
    dt = 0.09
    y = dilate(x, math.sqrt(dt))
    assert y.coefficient((0,)) == pytest.approx(dt, rel=1e-15)
    assert y.coefficient((1,)) == pytest.approx(0.3, rel=1e-15)
    assert y.coefficient((0, 1)) == pytest.approx(dt**1.5, rel=1e-15)


@given(st.floats(0.0, 10.0), st.floats(0.0, 10.0), st.integers(0, 2**32 - 1))
def test_dilation_is_multiplicative(lam, mu, seed):
    x = random_series(np.random.default_rng(seed), Alphabet(2, True), 4, constant=1.0)
    lhs = dilate(dilate(x, lam), mu)
    rhs = dilate(x, lam * mu)
    assert (lhs - rhs).max_abs() <= 1e-12 * max(rhs.max_abs(), 1.0)


def test_dilation_is_a_homomorphism():
    rng = np.random.default_rng(3)
    a, b = (random_series(rng, Alphabet(2, True), 4, constant=1.0) for _ in range(2))
    lhs = dilate(a @ b, 0.7)
    rhs = dilate(a, 0.7) @ dilate(b, 0.7)
    assert (lhs - rhs).max_abs() <= 1e-13


def test_norm_examples():
    assert homogeneous_norm(TensorSeries.unit(A2, 2)) == 0.0
    g = exp_trunc(TensorSeries.letter(A2, 2, 1, 3.0))
    assert homogeneous_norm(g) == pytest.approx(3.0)


@given(st.sampled_from([0.1, 2.0, 10.0]), st.integers(0, 2**32 - 1))
def test_norm_homogeneity(lam, seed):
    rng = np.random.default_rng(seed)
    g = exp_trunc(random_lie(rng, Alphabet(2, True), 4, (20,)))
    np.testing.assert_allclose(homogeneous_norm(dilate(g, lam)), lam * homogeneous_norm(g), rtol=1e-12)
    assert np.all(homogeneous_norm(g) > 0)


def test_defect_examples():
    rng = np.random.default_rng(4)
    x = random_lie(rng, A2, 2, (50,))
    assert np.max(group_membership_defect(exp_trunc(x))) <= 1e-12
    # sym(level2) - x x^T / 2 = [[-1/2, 1/2], [1/2, 0]] by hand
    bad = TensorSeries.from_words(A2, 2, {(): 1.0, (1,): 1.0, (1, 2): 1.0})
    assert group_membership_defect(bad) == pytest.approx(math.sqrt(3) / 2, rel=1e-14)
    with pytest.raises(ContractError):
        group_membership_defect(TensorSeries.zeros(A2, 2))


@given(alphabets, st.integers(3, 5), st.integers(0, 2**32 - 1))
def test_defect_of_group_products(alphabet, m, seed):
    rng = np.random.default_rng(seed)
    g = exp_trunc(random_lie(rng, alphabet, m))
    h = exp_trunc(random_lie(rng, alphabet, m))
    assert group_membership_defect(g) <= 1e-12 * max(g.max_abs(), 1.0)
    assert group_membership_defect(g @ h) <= 1e-11 * max((g @ h).max_abs(), 1.0)


def test_defect_detects_non_group_element_at_higher_level():
    a = Alphabet(2, False)
    g = exp_trunc(TensorSeries.letter(a, 3, 1))
    bad = g + TensorSeries.from_words(a, 3, {(1, 1, 2): 0.3})
    assert group_membership_defect(bad) > 0.1


def test_lie_projection_is_idempotent_on_lie_elements():
    rng = np.random.default_rng(5)
    x = random_lie(rng, Alphabet(3, False), 4)
    assert (lie_projection(x) - x).max_abs() <= 1e-13


def test_cc_distance():
    rng = np.random.default_rng(6)
    g = exp_trunc(random_lie(rng, A2, 3))
    assert cc_distance(g, g) <= 1e-15
    v = np.array([0.6, -0.8]) * 2.5
    ev = exp_trunc(TensorSeries.from_increment(A2, 2, v))
    assert cc_distance(TensorSeries.unit(A2, 2), ev) == pytest.approx(2.5, rel=1e-15)


def test_cc_distance_left_invariant():
    rng = np.random.default_rng(7)
    k, g, h = (exp_trunc(random_lie(rng, Alphabet(2, True), 4, (100,))) for _ in range(3))
    np.testing.assert_allclose(cc_distance(k @ g, k @ h), cc_distance(g, h), rtol=1e-10, atol=1e-12)


def test_segment_exp_and_chen_step_agree_with_exp():
    rng = np.random.default_rng(8)
    a = Alphabet(2, True)
    v = rng.normal(size=(10, 3))
    ref = exp_trunc(TensorSeries.from_increment(a, 5, v))
    assert (segment_exp(a, 5, v) - ref).max_abs() <= 1e-14
    assert (chen_step(TensorSeries.unit(a, 5, (10,)), v) - ref).max_abs() <= 1e-14
    g = exp_trunc(random_lie(rng, a, 5, (10,)))
    assert (chen_step(g, v) - g @ ref).max_abs() <= 1e-12


def test_expected_brownian_signature_values():
    e = expected_brownian_signature(Alphabet(1, False), 2)
    assert [e.coefficient(w) for w in [(), (1,), (1, 1)]] == [1.0, 0.0, 0.5]
    e = expected_brownian_signature(Alphabet(2, True), 5)
    assert e.coefficient((1, 2)) == 0.0
    assert e.coefficient((0,)) == 1.0
    assert e.coefficient((1, 1, 2, 2)) == pytest.approx(1 / 8)
    assert e.coefficient((0, 1, 1)) == pytest.approx(1 / 4)
    assert e.coefficient((0, 0)) == pytest.approx(0.5)
    odd = [w for w in e.words() if (len(w) + w.count(0)) % 2 == 1]
    assert odd and all(e.coefficient(w) == 0.0 for w in odd)


def test_expected_brownian_signature_matches_monte_carlo():
    # oracle: Stratonovich iterated integrals of fine piecewise-linear Brownian paths
    rng = np.random.default_rng(9)
    a = Alphabet(2, False)
    n_paths, n_steps = 20_000, 32
    inc = rng.normal(size=(n_paths, n_steps, 2)) / math.sqrt(n_steps)
    sig = TensorSeries.unit(a, 4, (n_paths,))
    for j in range(n_steps):
        sig = chen_step(sig, inc[:, j])
    target = expected_brownian_signature(a, 4)
    for w in target.words():
        c = np.asarray(sig.coefficient(w))
        se = c.std(ddof=1) / math.sqrt(n_paths)
        assert abs(c.mean() - target.coefficient(w)) <= 4 * se + 1e-12, w


def test_serialization_round_trip():
    rng = np.random.default_rng(10)
    g = exp_trunc(random_lie(rng, Alphabet(2, True), 4))
    back = TensorSeries.from_json(g.to_json())
    assert back.alphabet == g.alphabet and back.m == g.m
    assert (back - g).max_abs() == 0.0


def test_batched_indexing():
    rng = np.random.default_rng(11)
    g = random_series(rng, A2, 3, (4, 5), constant=1.0)
    sub = g[(Ellipsis, 2)]
    assert sub.batch_shape == (4,)
    np.testing.assert_array_equal(sub.levels[3], g.levels[3][:, 2])
