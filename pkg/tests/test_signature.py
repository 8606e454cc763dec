import math

import numpy as np
import pytest
from scipy.linalg import expm

from efmsig.core.rates import Rates, apply_D
from efmsig.core.signature import (PiecewisePath, SigState, advance,
                                   bv_bound_check, chen_step,
                                   fading_memory_gap, initial_state,
                                   kernel_for, ou_from_driver,
                                   segment_signature, signature_of_path,
                                   signature_stream,
                                   stationary_linear_signature,
                                   weighted_variation)
from efmsig.core.tensor import (TensorSeq, bracket, norm, shuffle,
                                tensor_exp, tensor_product, vector_tensor,
                                words)
from shared.errors import (AlphabetMismatchError, DomainError,
                           TimeRegressionError)
from shared.flags import ORIGIN_FLAT_SPACE_PAST, ORIGIN_START


def signature_drift(r: Rates, levels, x: np.ndarray):
    """Right-hand side of d sig = -Lambda sig dt + sig (x) x dt, level by level."""
    out = [np.zeros(1)]
    for n in range(1, len(levels)):
        out.append(-r.level_table(n) * levels[n] + np.outer(levels[n - 1], x).ravel())
    return out


def rk4_linear_signature(r: Rates, x: np.ndarray, duration: float, order: int, dt: float) -> TensorSeq:
    """Integrates the segment equation from the empty word."""

    def rhs(levels):
        return signature_drift(r, levels, x)

    def shifted(levels, slope, h):
        return [a + h * b for a, b in zip(levels, slope)]

    levels = TensorSeq.unit(r.width, order).levels
    steps = int(round(duration / dt))
    for _ in range(steps):
        k1 = rhs(levels)
        k2 = rhs(shifted(levels, k1, dt / 2))
        k3 = rhs(shifted(levels, k2, dt / 2))
        k4 = rhs(shifted(levels, k3, dt))
        levels = [y + dt / 6 * (a + 2 * b + 2 * c + d) for y, a, b, c, d in zip(levels, k1, k2, k3, k4)]
    return TensorSeq(r.width, order, levels)


def test_plain_linear_signature_is_the_tensor_exponential():
    x = np.array([0.3, -1.2])
    sig = segment_signature(Rates.plain(2), x, 1.0, 4)
    assert sig.allclose(tensor_exp(vector_tensor(x, 4)), atol=1e-14)


def test_first_level_of_a_segment():
    r = Rates([2.0, 0.5])
    x = np.array([1.0, -3.0])
    sig = segment_signature(r, x, 0.8, 2)
    np.testing.assert_allclose(sig.levels[1], x * -np.expm1(-r.rates * 0.8) / r.rates, rtol=1e-13)


@pytest.mark.parametrize("rates", [(0.7, 1.9), (1.0, 1.0), (1.0, 2.0)])
def test_segment_signature_matches_rk4(rates, rng):
    # (1, 1) and (1, 2) produce equal rates along words, i.e. the confluent branch
    r = Rates(rates)
    x = rng.normal(size=2)
    for duration in (0.1, 0.3, 2.5):
        exact = segment_signature(r, x, duration, 4)
        oracle = rk4_linear_signature(r, x, duration, 4, 1e-4)
        assert exact.allclose(oracle, atol=1e-8)


def test_series_and_closed_form_agree():
    kernel = kernel_for(Rates([1.0, 2.0]), 3)
    functions = kernel.functions()
    # 0.1 * 6 <= 1 takes the power series
    values = kernel.values(0.1)
    for n, level in enumerate(functions):
        closed = np.array([f.eval(0.1) for f in level])
        np.testing.assert_allclose(values[n], closed, rtol=1e-10, atol=1e-15)


def test_long_segments_approach_the_stationary_signature():
    r = Rates([1.0, 1.5])
    x = np.array([0.4, 0.9])
    far = segment_signature(r, x, 60.0, 3)
    assert far.allclose(stationary_linear_signature(r, x, 3), atol=1e-12)


def test_shuffle_identity_on_random_paths(make_path):
    for dim, order in ((1, 5), (2, 4), (3, 3)):
        r = Rates(np.linspace(0.5, 2.0, dim + 1))
        for _ in range(5):
            path = make_path(samples=6, dim=dim, time_augmented=True, span=2.0)
            sig = signature_of_path(r, path, order).sig
            for u in ((1,), (0, 1)):
                for w in ((1,), (1, 0)):
                    if len(u) + len(w) > order:
                        continue
                    left = sig.coefficient(u) * sig.coefficient(w)
                    product = shuffle(TensorSeq.from_words(r.width, order, {u: 1.0}),
                                      TensorSeq.from_words(r.width, order, {w: 1.0}))
                    right = sum(product.coefficient(v) * sig.coefficient(v) for v in words(r.width, order))
                    assert left == pytest.approx(right, abs=1e-10)


def test_chen_identity(make_path):
    r = Rates([0.8, 1.3, 2.0])
    path = make_path(samples=10, dim=2, span=3.0)
    s, u, t = 0.0, 1.1, 3.0

    whole = signature_of_path(r, path, 4).sig
    first = signature_of_path(r, path.restrict(s, u), 4).sig
    second = signature_of_path(r, path.restrict(u, t), 4).sig
    assert whole.allclose(tensor_product(apply_D(r, t - u, first), second), atol=1e-10)


def test_chen_step_advances_and_rejects_going_back():
    r = Rates([1.0, 1.0])
    state = SigState(0.0, TensorSeq.unit(2, 3), np.zeros(2))
    state = chen_step(r, state, 0.5, np.array([0.5, 1.0]))
    expected = segment_signature(r, np.array([1.0, 2.0]), 0.5, 3)
    assert state.t == 0.5
    assert state.sig.allclose(expected, atol=1e-14)

    with pytest.raises(TimeRegressionError):
        chen_step(r, state, 0.4, np.zeros(2))


def test_zero_duration_segment_is_a_jump():
    r = Rates([1.0, 2.0])
    state = SigState(1.0, TensorSeq.unit(2, 3))
    jump = np.array([0.0, 0.7])
    after = advance(r, state, 0.0, jump)
    assert after.t == 1.0
    assert after.sig.allclose(tensor_exp(vector_tensor(jump, 3)), atol=1e-15)
    assert advance(r, state, 0.0, np.zeros(2)).sig is state.sig


def test_signature_stream_thins_and_ends_at_the_last_sample(make_path):
    r = Rates([1.0, 2.0])
    path = make_path(samples=11, dim=1, time_augmented=True)
    states = list(signature_stream(r, path, 2, every=4))
    assert [s.t for s in states] == [path.times[0], path.times[4], path.times[8], path.times[10]]
    assert states[-1].sig.allclose(signature_of_path(r, path, 2).sig)


def test_flat_space_past_starts_from_pure_time():
    r = Rates([2.0, 1.0])
    path = PiecewisePath(np.array([0.0, 1.0]), np.array([[0.0], [0.0]]), time_augmented=True)
    state = initial_state(r, path, 3, ORIGIN_FLAT_SPACE_PAST)
    assert state.sig.coefficient((0,)) == pytest.approx(0.5)
    assert state.sig.coefficient((0, 0)) == pytest.approx(0.5 / 4.0)
    assert state.sig.coefficient((1,)) == 0.0

    # the clock keeps running: a flat space path stays stationary
    final = signature_of_path(r, path, 3, ORIGIN_FLAT_SPACE_PAST)
    assert final.sig.allclose(state.sig, atol=1e-12)


def test_flat_space_past_needs_a_clock():
    path = PiecewisePath(np.array([0.0, 1.0]), np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(DomainError):
        initial_state(Rates([1.0, 1.0]), path, 2, ORIGIN_FLAT_SPACE_PAST)


def test_path_width_must_match_rates():
    path = PiecewisePath(np.array([0.0, 1.0]), np.array([0.0, 1.0]), time_augmented=True)
    with pytest.raises(AlphabetMismatchError):
        signature_of_path(Rates([1.0, 1.0, 1.0]), path, 2)


def test_paths_reject_bad_grids():
    with pytest.raises(DomainError):
        PiecewisePath(np.array([0.0, 0.0]), np.array([0.0, 1.0]))
    with pytest.raises(DomainError):
        PiecewisePath(np.array([0.0, 1.0]), np.array([0.0, np.nan]))


def test_batched_paths_match_single_paths(rng):
    r = Rates([1.0, 0.5])
    times = np.linspace(0.0, 1.0, 6)
    values = np.cumsum(rng.normal(size=(3, 6, 1)), axis=1)
    batched = signature_of_path(r, PiecewisePath(times, values, True), 3).sig
    for i in range(3):
        single = signature_of_path(r, PiecewisePath(times, values[i], True), 3).sig
        assert batched.batch_item(i).allclose(single, atol=1e-13)


def test_fading_memory_gap_respects_its_bound(rng):
    r = Rates([0.5, 1.0])
    times = np.linspace(0.0, 6.0, 61)
    split = 2.0
    shared = np.cumsum(rng.normal(scale=0.3, size=61))
    offset = np.where(times <= split, rng.normal(scale=0.5, size=61), 0.0)
    offset[times >= split] = offset[times <= split][-1]

    a = PiecewisePath(times, shared[:, None], time_augmented=True)
    b = PiecewisePath(times, (shared + offset)[:, None], time_augmented=True)
    report = fading_memory_gap(r, a, b, split, 3)

    assert report.gap <= report.bound * (1 + 1e-9)
    assert report.elapsed == pytest.approx(4.0)
    assert report.gap > 0


def test_fading_memory_needs_shared_increments(make_path):
    a = make_path(samples=5, dim=1, time_augmented=True)
    b = PiecewisePath(a.times, a.values * 2.0, True)
    with pytest.raises(DomainError):
        fading_memory_gap(Rates([1.0, 1.0]), a, b, 0.5, 2)


def test_weighted_variation_of_one_segment():
    r = Rates([1.0, 2.0])
    path = PiecewisePath(np.array([0.0, 2.0]), np.array([[0.0, 0.0], [2.0, -4.0]]))
    expected = 1.0 * (1 - math.exp(-2.0)) / 1.0 + 2.0 * (1 - math.exp(-4.0)) / 2.0
    assert weighted_variation(r, path, 0.0, 2.0) == pytest.approx(expected)


def test_bv_bound_holds(make_path):
    r = Rates([0.5, 1.0, 1.5])
    report = bv_bound_check(r, make_path(samples=12, dim=2, time_augmented=True), 4)
    assert report.passed
    assert report.norms[0] == pytest.approx(1.0)
    assert all(m >= -1e-12 for m in report.margins)


def test_ou_from_a_linear_driver():
    mu = 3.0
    times = np.linspace(0.0, 2.0, 5)
    driver = PiecewisePath(times, (0.7 * times)[:, None])
    ou = ou_from_driver(driver, mu)
    np.testing.assert_allclose(ou.values[:, 0], 0.7 * -np.expm1(-mu * times) / mu, atol=1e-14)


def test_signatures_do_not_depend_on_the_clock_origin(rng):
    # dyadic times keep the shifted increments exact
    times = np.arange(9) * 0.25
    values = np.cumsum(rng.normal(size=(9, 2)), axis=0)
    path = PiecewisePath(times, values, time_augmented=True)
    r = Rates([0.5, 1.0, 2.0])
    for origin in (ORIGIN_START, ORIGIN_FLAT_SPACE_PAST):
        here = signature_of_path(r, path, 4, origin).sig
        later = signature_of_path(r, path.shift(8.0), 4, origin).sig
        for a, b in zip(here.levels, later.levels):
            assert np.array_equal(a, b)


def test_chen_steps_solve_the_equation_from_any_start(make_path, rng):
    r = Rates([0.6, 1.4])
    path = make_path(samples=7, dim=2, span=2.0)
    start = TensorSeq(2, 3, [rng.normal(size=2**n) for n in range(4)])

    state = SigState(0.0, start, path.values[0])
    for t, value in zip(path.times[1:], path.values[1:]):
        state = chen_step(r, state, t, value)

    expected = tensor_product(apply_D(r, 2.0, start), signature_of_path(r, path, 3).sig)
    assert state.sig.allclose(expected, atol=1e-10)


def test_segment_signature_satisfies_its_equation():
    r = Rates([1.0, 2.0])
    x = np.array([0.7, -1.3])
    t, h = 0.8, 1e-5
    ahead = segment_signature(r, x, t + h, 3)
    behind = segment_signature(r, x, t - h, 3)
    drift = signature_drift(r, segment_signature(r, x, t, 3).levels, x)
    for n in range(4):
        np.testing.assert_allclose((ahead.levels[n] - behind.levels[n]) / (2 * h), drift[n], atol=1e-6)


def test_refining_a_smooth_path_converges_at_second_order():
    r = Rates([1.0, 2.0])

    def sampled(steps):
        times = np.linspace(0.0, 2.0, steps + 1)
        return signature_of_path(r, PiecewisePath(times, np.sin(times), time_augmented=True), 3).sig

    coarse, middle, fine = (sampled(steps) for steps in (40, 80, 160))
    ratio = norm(coarse - middle) / norm(middle - fine)
    assert 3.3 < ratio < 4.7


def generator_matrix(r: Rates, x: np.ndarray, order: int) -> np.ndarray:
    """The segment equation as a linear system on the flattened tensor."""
    width = r.width
    offsets = np.cumsum([0] + [width**n for n in range(order + 1)])
    A = np.zeros((offsets[-1], offsets[-1]))
    for n in range(order + 1):
        block = slice(offsets[n], offsets[n + 1])
        A[block, block] -= np.diag(r.level_table(n))
        if n:
            for index in range(width**n):
                A[offsets[n] + index, offsets[n - 1] + index // width] += x[index % width]
    return A


def test_segment_signature_is_a_matrix_exponential():
    r = Rates([1.0, 2.0])
    x = np.array([0.4, -0.9])
    unit = TensorSeq.unit(2, 3).to_flat()
    for duration in (0.1, 1.7):
        expected = TensorSeq.from_flat(2, 3, expm(duration * generator_matrix(r, x, 3)) @ unit)
        assert segment_signature(r, x, duration, 3).allclose(expected, atol=1e-11)


def test_two_segments_agree_with_the_magnus_expansion():
    r = Rates([1.0, 2.0])
    x1, x2 = np.array([1.0, -0.5]), np.array([-0.3, 1.2])
    h1 = h2 = 5e-4
    A1, A2 = generator_matrix(r, x1, 3), generator_matrix(r, x2, 3)
    unit = TensorSeq.unit(2, 3).to_flat()

    state = SigState(0.0, TensorSeq.unit(2, 3), np.zeros(2))
    state = chen_step(r, state, h1, h1 * x1)
    state = chen_step(r, state, h1 + h2, h1 * x1 + h2 * x2)
    chen = state.sig.to_flat()

    np.testing.assert_allclose(chen, expm(h2 * A2) @ expm(h1 * A1) @ unit, atol=1e-13)

    first = h1 * A1 + h2 * A2
    second = 0.5 * h1 * h2 * (A2 @ A1 - A1 @ A2)
    err_first = np.linalg.norm(expm(first) @ unit - chen)
    err_second = np.linalg.norm(expm(first + second) @ unit - chen)
    assert err_first > 1e-9
    assert err_second < 0.05 * err_first


@pytest.mark.slow
@pytest.mark.parametrize("dim, order", [(1, 5), (2, 5), (3, 4)])
def test_shuffle_and_chen_identities_on_many_paths(dim, order, make_path, rng):
    r = Rates(np.linspace(0.5, 2.0, dim + 1))
    for _ in range(100):
        path = make_path(samples=6, dim=dim, time_augmented=True, span=2.0)
        sig = signature_of_path(r, path, order).sig

        # random linear forms test every pair of words at once
        for p in range(1, order):
            a = TensorSeq.zeros(r.width, order)
            b = TensorSeq.zeros(r.width, order)
            for n in range(1, p + 1):
                a.levels[n][...] = rng.normal(size=r.width**n)
            for n in range(1, order - p + 1):
                b.levels[n][...] = rng.normal(size=r.width**n)
            left = bracket(a, sig) * bracket(b, sig)
            assert bracket(shuffle(a, b), sig) == pytest.approx(left, rel=1e-9, abs=1e-10)

        u = float(rng.uniform(0.2, 1.8))
        first = signature_of_path(r, path.restrict(0.0, u), order).sig
        second = signature_of_path(r, path.restrict(u, 2.0), order).sig
        assert sig.allclose(tensor_product(apply_D(r, 2.0 - u, first), second), atol=1e-10)
