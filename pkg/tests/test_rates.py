import numpy as np
import pytest

from efmsig.core.expectation import (drift_tensor,
                                     expected_signature_stationary)
from efmsig.core.rates import (Rates, apply_C, apply_D, apply_Lambda,
                               apply_Lambda_dagger, c_factor, lambda_of_word,
                               stationary_series_H)
from efmsig.core.tensor import TensorSeq, norm, shuffle, tensor_product
from shared.errors import AlphabetMismatchError, DomainError


def test_rates_must_be_positive():
    with pytest.raises(DomainError):
        Rates([1.0, 0.0])
    with pytest.raises(DomainError):
        Rates([1.0, -2.0])
    assert Rates.plain(3).is_plain


def test_level_tables_add_letter_rates():
    r = Rates([1.0, 2.0])
    np.testing.assert_array_equal(r.level_table(2), [2.0, 3.0, 3.0, 4.0])
    assert lambda_of_word(r, (1, 0, 1)) == 5.0
    assert r.level_table(0).tolist() == [0.0]


def test_rates_are_hashable_values():
    assert Rates([1, 2]) == Rates([1.0, 2.0])
    assert len({Rates([1, 2]), Rates([1.0, 2.0])}) == 1


def test_dilation_is_a_group(rng):
    r = Rates([0.7, 1.3])
    a = TensorSeq(2, 3, [rng.normal(size=2**n) for n in range(4)])
    assert apply_D(r, -0.4, apply_D(r, 0.4, a)).allclose(a, atol=1e-12)
    assert apply_D(r, 0.0, a).allclose(a)


def test_dilation_scales_by_word_rate():
    r = Rates([1.0, 2.0])
    a = TensorSeq.from_words(2, 2, {(1, 0): 1.0})
    assert apply_D(r, 0.5, a).coefficient((1, 0)) == pytest.approx(np.exp(-1.5))


def test_integrated_semigroup():
    r = Rates([1.0, 2.0])
    a = TensorSeq.from_words(2, 2, {(): 1.0, (1,): 1.0})
    c = apply_C(r, 0.3, a)
    assert c.coefficient(()) == pytest.approx(0.3)
    assert c.coefficient((1,)) == pytest.approx((1 - np.exp(-0.6)) / 2.0)
    with pytest.raises(DomainError):
        apply_C(r, -0.1, a)


def test_c_factor_small_rates_use_the_series():
    table = np.array([0.0, 1e-12, 1.0])
    values = c_factor(table, 2.0)
    assert values[0] == 2.0
    assert values[1] == pytest.approx(2.0, rel=1e-11)
    assert values[2] == pytest.approx(1 - np.exp(-2.0))


def test_lambda_dagger_inverts_lambda_off_the_empty_word(rng):
    r = Rates([1.0, 3.0])
    a = TensorSeq(2, 3, [rng.normal(size=2**n) for n in range(4)])
    back = apply_Lambda_dagger(r, apply_Lambda(r, a))
    assert back.coefficient(()) == 0.0
    assert back.with_order(3).allclose(a - TensorSeq.unit(2, 3) * a.coefficient(()), atol=1e-12)


def test_operators_check_the_alphabet():
    with pytest.raises(AlphabetMismatchError):
        apply_Lambda(Rates([1.0, 1.0]), TensorSeq.unit(3, 2))


def test_h_series_matches_the_stationary_recursion():
    r = Rates([1.0, 0.5])
    series = stationary_series_H(r, drift_tensor(1, 5), max_terms=10)
    expected = expected_signature_stationary(r, 1, 5).value
    assert series.allclose(expected, atol=1e-14)


def random_tensor(rng, width: int, order: int, empty: float | None = None) -> TensorSeq:
    a = TensorSeq(width, order, [rng.normal(size=width**n) for n in range(order + 1)])
    if empty is not None:
        a.levels[0][...] = empty
    return a


@pytest.mark.parametrize("h", [0.1, 1.0, 3.0])
def test_dilation_contracts_at_the_slowest_rate(h, rng):
    r = Rates([0.6, 1.5, 2.5])
    a = random_tensor(rng, 3, 4, empty=0.0)
    assert norm(apply_D(r, h, a)) <= np.exp(-h * 0.6) * norm(a) * (1 + 1e-12)


def test_lambda_is_a_derivation_of_the_tensor_product(rng):
    r = Rates([0.7, 1.9])
    a, b = random_tensor(rng, 2, 4), random_tensor(rng, 2, 4)
    left = apply_Lambda(r, tensor_product(a, b))
    right = tensor_product(apply_Lambda(r, a), b) + tensor_product(a, apply_Lambda(r, b))
    assert left.allclose(right, atol=1e-10)


def test_dilation_is_multiplicative(rng):
    r = Rates([0.7, 1.9])
    a, b = random_tensor(rng, 2, 4), random_tensor(rng, 2, 4)
    for h in (0.2, 1.5):
        left = apply_D(r, h, tensor_product(a, b))
        right = tensor_product(apply_D(r, h, a), apply_D(r, h, b))
        assert left.allclose(right, atol=1e-12)


def test_dilation_commutes_with_shuffle(rng):
    r = Rates([0.5, 1.0, 3.0])
    a, b = random_tensor(rng, 3, 4), random_tensor(rng, 3, 4)
    for h in (0.3, 2.0):
        left = apply_D(r, h, shuffle(a, b))
        right = shuffle(apply_D(r, h, a), apply_D(r, h, b))
        assert left.allclose(right, atol=1e-10)
