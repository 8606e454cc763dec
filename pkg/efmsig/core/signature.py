"""
EFM-signatures of piecewise-linear paths.

A linear segment with slope x over a duration h contributes, for the word
i1...in, x^{i1}...x^{in} g_w(h), where g_w is obtained from g_empty = 1 by
nested step integrations at the partial-sum rates of the word. Segments are
glued with the discounted Chen identity sig(s, t) = D_{t-u} sig(s, u) (x) sig(u, t).
"""

import threading
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.signal import lfilter

from config.logging import core_logger as logger
from efmsig.core.exp_poly import ExpPoly
from efmsig.core.rates import Rates, apply_D, c_factor
from efmsig.core.tensor import (TensorSeq, level_norms, level_outer, norm,
                                tensor_exp, tensor_product, vector_tensor)
from shared.errors import (AlphabetMismatchError, DomainError,
                           TimeRegressionError)
from shared.flags import ORIGIN_FLAT_SPACE_PAST, ORIGIN_START, ORIGINS


@dataclass(frozen=True)
class PiecewisePath:
    """
    Samples of a path joined by straight lines. `values` has shape (..., K, d);
    leading axes index independent paths sharing the time grid. With
    `time_augmented` the clock becomes channel 0 and letters 1..d are space.
    """

    times: np.ndarray
    values: np.ndarray
    time_augmented: bool = False

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]

        if times.ndim != 1 or times.size == 0:
            raise DomainError("A path needs at least one sample")
        if values.shape[-2] != times.size:
            raise DomainError(f"{times.size} times but {values.shape[-2]} samples")
        if np.any(np.diff(times) <= 0):
            raise DomainError("Path times must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise DomainError("Path values must be finite")

        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def width(self) -> int:
        return self.dim + 1 if self.time_augmented else self.dim

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.values.shape[:-2]

    @property
    def channels(self) -> np.ndarray:
        """Values with the clock prepended when time-augmented, shape (..., K, width)."""
        if not self.time_augmented:
            return self.values
        clock = np.broadcast_to(self.times[:, None], self.batch_shape + (self.times.size, 1))
        return np.concatenate([clock, self.values], axis=-1)

    def value_at(self, t: float) -> np.ndarray:
        """Linear interpolation, constant extrapolation outside the sampled window."""
        times = self.times
        if t <= times[0]:
            return self.values[..., 0, :]
        if t >= times[-1]:
            return self.values[..., -1, :]

        k = int(np.searchsorted(times, t, side="right")) - 1
        weight = (t - times[k]) / (times[k + 1] - times[k])
        return (1.0 - weight) * self.values[..., k, :] + weight * self.values[..., k + 1, :]

    def restrict(self, t0: float, t1: float) -> "PiecewisePath":
        """The same path on [t0, t1], with interpolated endpoints."""
        if not t1 > t0:
            raise DomainError(f"Empty window [{t0}, {t1}]")

        inner = (self.times > t0) & (self.times < t1)
        times = np.concatenate([[t0], self.times[inner], [t1]])
        values = np.concatenate(
            [self.value_at(t0)[..., None, :], self.values[..., inner, :], self.value_at(t1)[..., None, :]],
            axis=-2,
        )
        return PiecewisePath(times, values, self.time_augmented)

    def shift(self, h: float) -> "PiecewisePath":
        return PiecewisePath(self.times + h, self.values, self.time_augmented)


@dataclass
class SigState:
    """
    Running signature at time `t`. `value` is the current path point in channel
    coordinates (clock included when time-augmented); chen_step needs it to form
    the next increment.
    """

    t: float
    sig: TensorSeq
    value: Optional[np.ndarray] = field(default=None)


class SegmentKernel:
    """
    Cached per-word functions g_w for one (rates, order) pair. Words sharing the
    same sequence of letter rates share one ExpPoly. Values at a duration h are
    computed from the ExpPoly closed form, or from the power series of the same
    functions when h times the largest word rate is at most 1, where the closed
    form would cancel.
    """

    SERIES_TERMS = 24
    MAX_CACHED_DURATIONS = 1024

    def __init__(self, rates: Rates, order: int):
        self.rates = rates
        self.order = order
        self.lock = threading.Lock()

        self._functions: Optional[List[List[ExpPoly]]] = None
        self._series: Optional[List[np.ndarray]] = None
        self._stationary: Optional[List[np.ndarray]] = None
        self._values: Dict[float, List[np.ndarray]] = {}

    def functions(self) -> List[List[ExpPoly]]:
        with self.lock:
            if self._functions is None:
                self._functions = self._build_functions()
            return self._functions

    def _build_functions(self) -> List[List[ExpPoly]]:
        width, rates = self.rates.width, self.rates.rates
        memo: Dict[Tuple[float, ...], ExpPoly] = {(): ExpPoly.constant(1.0)}
        keys: List[Tuple[float, ...]] = [()]
        levels = [[memo[()]]]

        for n in range(1, self.order + 1):
            table = self.rates.level_table(n)
            next_keys, level = [], []
            for index in range(width**n):
                parent = keys[index // width]
                key = parent + (float(rates[index % width]),)
                if key not in memo:
                    memo[key] = memo[parent].step_integrate(float(table[index]), max_degree=n)
                next_keys.append(key)
                level.append(memo[key])
            keys = next_keys
            levels.append(level)

        logger.debug(
            f"Segment functions built: order {self.order}, {len(memo)} distinct of "
            f"{sum(len(level) for level in levels)} words"
        )
        return levels

    def _series_coefficients(self) -> List[np.ndarray]:
        """
        g_w(t) = t^n sum_m a_m t^m for |w| = n. From g' = -nu g + g_parent:
        (n + m) a_m = b_m - nu a_{m-1}, b being the parent's coefficients.
        """
        width, terms = self.rates.width, self.SERIES_TERMS
        current = np.zeros((1, terms))
        current[0, 0] = 1.0
        levels = [current]

        for n in range(1, self.order + 1):
            table = self.rates.level_table(n)
            parent = current[np.arange(width**n) // width]
            coefficients = np.zeros((width**n, terms))
            coefficients[:, 0] = parent[:, 0] / n
            for m in range(1, terms):
                coefficients[:, m] = (parent[:, m] - table * coefficients[:, m - 1]) / (n + m)
            current = coefficients
            levels.append(current)

        return levels

    def values(self, duration: float) -> List[np.ndarray]:
        """g_w(duration) for every word, one array per level."""
        duration = float(duration)
        if duration < 0:
            raise DomainError(f"Segment duration must be non-negative, got {duration}")

        with self.lock:
            cached = self._values.get(duration)
        if cached is not None:
            return cached

        top_rate = float(self.rates.level_table(self.order).max()) if self.order else 0.0
        if duration * top_rate <= 1.0:
            with self.lock:
                if self._series is None:
                    self._series = self._series_coefficients()
            result = [
                duration**n * P.polyval(duration, coefficients.T)
                for n, coefficients in enumerate(self._series)
            ]
        else:
            result = [
                np.array([function.eval(duration) for function in level])
                for level in self.functions()
            ]

        with self.lock:
            if len(self._values) >= self.MAX_CACHED_DURATIONS:
                self._values.clear()
            self._values[duration] = result
        return result

    def stationary_weights(self) -> List[np.ndarray]:
        """prod_k 1 / mu_k over the partial-sum rates of each word."""
        with self.lock:
            if self._stationary is None:
                width = self.rates.width
                current = np.ones(1)
                weights = [current]
                for n in range(1, self.order + 1):
                    table = self.rates.level_table(n)
                    if np.any(table <= 0):
                        raise DomainError("Stationary signatures need positive rates")
                    current = current[np.arange(width**n) // width] / table
                    weights.append(current)
                self._stationary = weights
            return self._stationary


@lru_cache(maxsize=64)
def kernel_for(rates: Rates, order: int) -> SegmentKernel:
    return SegmentKernel(rates, order)


def _power_levels(x: np.ndarray, order: int) -> List[np.ndarray]:
    """x^{(x) n} for n = 0..order, batched over leading axes of x."""
    powers = [np.ones(x.shape[:-1] + (1,), dtype=x.dtype)]
    for _ in range(order):
        powers.append(level_outer(powers[-1], x))
    return powers


def _check_width(r: Rates, x: np.ndarray):
    if x.shape[-1] != r.width:
        raise AlphabetMismatchError(
            f"Vector has {x.shape[-1]} channels, rates cover {r.width} letters"
        )


def segment_signature(r: Rates, x, duration: float, order: int,
                      kernel: Optional[SegmentKernel] = None) -> TensorSeq:
    """EFM-signature of the linear path u -> x u over [0, duration]."""
    x = np.asarray(x, dtype=float)
    _check_width(r, x)
    kernel = kernel or kernel_for(r, order)

    g = kernel.values(duration)
    powers = _power_levels(x, order)
    return TensorSeq(r.width, order, [powers[n] * g[n] for n in range(order + 1)])


def stationary_linear_signature(r: Rates, x, order: int) -> TensorSeq:
    """Limit of segment_signature as the duration grows: prod x^{i_k} / mu_k."""
    x = np.asarray(x, dtype=float)
    _check_width(r, x)

    weights = kernel_for(r, order).stationary_weights()
    powers = _power_levels(x, order)
    return TensorSeq(r.width, order, [powers[n] * weights[n] for n in range(order + 1)])


def advance(r: Rates, state: SigState, duration: float, increment,
            kernel: Optional[SegmentKernel] = None) -> SigState:
    """
    Moves a state along one straight segment given its duration and increment.
    A zero-duration segment with a nonzero increment is a jump and contributes
    the tensor exponential of the increment.
    """
    increment = np.asarray(increment, dtype=float)
    order = state.sig.order

    if duration == 0:
        if not np.any(increment):
            return SigState(state.t, state.sig, state.value)
        segment = tensor_exp(vector_tensor(increment, order))
    else:
        segment = segment_signature(r, increment / duration, duration, order, kernel)

    sig = tensor_product(apply_D(r, duration, state.sig), segment)
    value = None if state.value is None else state.value + increment
    return SigState(state.t + duration, sig, value)


def chen_step(r: Rates, state: SigState, next_time: float, next_value) -> SigState:
    if next_time < state.t:
        raise TimeRegressionError(f"Cannot step from t={state.t} back to t={next_time}")
    if state.value is None:
        raise DomainError("chen_step needs a state that records its current path value")

    next_value = np.asarray(next_value, dtype=float)
    new_state = advance(r, state, next_time - state.t, next_value - state.value)
    new_state.t = next_time
    new_state.value = next_value
    return new_state


def initial_state(r: Rates, path: PiecewisePath, order: int, origin: str = ORIGIN_START) -> SigState:
    """
    State at path.times[0]. Both `start` and `flat_past` begin at the empty
    word: a path frozen before its first sample (clock included) carries no
    signature. `flat_space_past` keeps the clock running since -infinity, which
    starts from the stationary signature of pure time.
    """
    if origin not in ORIGINS:
        raise DomainError(f"Unknown origin '{origin}', expected one of {ORIGINS}")
    if path.width != r.width:
        raise AlphabetMismatchError(f"Path has {path.width} channels, rates cover {r.width}")

    channels = path.channels
    batch = path.batch_shape

    if origin == ORIGIN_FLAT_SPACE_PAST:
        if not path.time_augmented:
            raise DomainError("flat_space_past needs a time-augmented path")
        clock = np.zeros(r.width)
        clock[0] = 1.0
        past = stationary_linear_signature(r, clock, order)
        sig = past.map_levels(lambda level: np.broadcast_to(level, batch + level.shape).copy())
    else:
        sig = TensorSeq.unit(r.width, order, batch)

    return SigState(float(path.times[0]), sig, channels[..., 0, :].copy())


def signature_stream(r: Rates, path: PiecewisePath, order: int,
                     origin: str = ORIGIN_START, every: int = 1) -> Iterator[SigState]:
    """Yields the initial state and then the state after every `every` segments."""
    if every < 1:
        raise DomainError(f"every must be >= 1, got {every}")

    state = initial_state(r, path, order, origin)
    yield state

    kernel = kernel_for(r, order)
    channels = path.channels
    durations = np.diff(path.times)
    increments = np.diff(channels, axis=-2)

    for k, duration in enumerate(durations):
        state = advance(r, state, float(duration), increments[..., k, :], kernel)
        # pin time and value to the samples so rounding does not accumulate
        state.t = float(path.times[k + 1])
        state.value = channels[..., k + 1, :]
        if (k + 1) % every == 0 or k + 1 == durations.size:
            yield state


def signature_of_path(r: Rates, path: PiecewisePath, order: int,
                      origin: str = ORIGIN_START) -> SigState:
    state = None
    for state in signature_stream(r, path, order, origin, every=max(1, path.times.size - 1)):
        pass
    return state


@dataclass
class FadingMemoryReport:
    gap: float
    bound: float
    split_gap: float
    tail_norm: float
    elapsed: float


def fading_memory_gap(r: Rates, path_a: PiecewisePath, path_b: PiecewisePath,
                      split: float, order: int) -> FadingMemoryReport:
    """
    Distance at the common end time between the signatures of two paths that
    share their increments after `split`. By Chen, the difference is
    D_{T-split}(delta) (x) tail with delta having no empty-word part, so
    level-wise it is at most exp(-min rate (T - split)) sum_k |delta_k| |tail_{n-k}|.
    """
    end = float(path_a.times[-1])
    if float(path_b.times[-1]) != end:
        raise DomainError("Both paths must end at the same time")

    tail_a, tail_b = path_a.restrict(split, end), path_b.restrict(split, end)
    same_grid = tail_a.times.shape == tail_b.times.shape and np.array_equal(tail_a.times, tail_b.times)
    if not same_grid or not np.allclose(
        np.diff(tail_a.channels, axis=-2), np.diff(tail_b.channels, axis=-2), atol=1e-12
    ):
        raise DomainError(f"Paths differ after the split time {split}")

    sig_a = signature_of_path(r, path_a, order).sig
    sig_b = signature_of_path(r, path_b, order).sig

    before_a = signature_of_path(r, path_a.restrict(path_a.times[0], split), order).sig
    before_b = signature_of_path(r, path_b.restrict(path_b.times[0], split), order).sig
    tail = signature_of_path(r, tail_a, order).sig

    delta = level_norms(before_a - before_b)
    tail_levels = level_norms(tail)
    cross = np.array([
        sum(delta[..., k] * tail_levels[..., n - k] for k in range(1, n + 1))
        for n in range(order + 1)
    ])
    elapsed = end - split
    bound = float(np.exp(-r.min_rate * elapsed) * np.sqrt(np.sum(cross**2)))

    report = FadingMemoryReport(
        gap=float(norm(sig_a - sig_b)),
        bound=bound,
        split_gap=float(norm(before_a - before_b)),
        tail_norm=float(norm(tail)),
        elapsed=elapsed,
    )
    logger.debug(f"Fading memory gap {report.gap:.3e} <= {report.bound:.3e} after {elapsed}")
    return report


def weighted_variation(r: Rates, path: PiecewisePath, s: float, t: float):
    """
    sum_i int_s^t exp(-lambda^i (t - u)) |dX^i_u|, closed form on each segment
    [a, b] with slope x: |x^i| exp(-lambda^i (t - b)) (1 - exp(-lambda^i (b - a))) / lambda^i.
    """
    window = path.restrict(s, t)
    _check_width(r, window.channels)

    durations = np.diff(window.times)
    slopes = np.diff(window.channels, axis=-2) / durations[:, None]

    weights = c_factor(r.rates, durations) * np.exp(-np.outer(t - window.times[1:], r.rates))
    return np.sum(np.abs(slopes) * weights, axis=(-2, -1))[()]


@dataclass
class BVReport:
    variation: float
    norms: List[float]
    bounds: List[float]
    margins: List[float]
    passed: bool


def bv_bound_check(r: Rates, path: PiecewisePath, order: int) -> BVReport:
    """Checks |sig^n|_1 <= V^n / n! for each level, V the weighted variation."""
    s, t = float(path.times[0]), float(path.times[-1])
    variation = float(weighted_variation(r, path, s, t)) if path.times.size > 1 else 0.0
    sig = signature_of_path(r, path, order).sig

    norms = level_norms(sig, q=1).tolist()
    bounds, factorial = [], 1.0
    for n in range(order + 1):
        factorial *= max(n, 1)
        bounds.append(variation**n / factorial)

    margins = [bound - value for bound, value in zip(bounds, norms)]
    passed = all(m >= -1e-12 * max(1.0, b) for m, b in zip(margins, bounds))
    if not passed:
        logger.warning(f"Weighted variation bound violated, margins {margins}")

    return BVReport(variation, norms, bounds, margins, passed)


def ou_from_driver(path: PiecewisePath, mu: float, initial=0.0) -> PiecewisePath:
    """
    Level-one EFM coordinate of each channel at rate mu: the OU process driven
    by the path, exact for piecewise-linear drivers,
    U_{k+1} = exp(-mu h) U_k + dX (1 - exp(-mu h)) / (mu h).
    """
    if not mu > 0:
        raise DomainError(f"mu must be positive, got {mu}")

    durations = np.diff(path.times)
    increments = np.diff(path.values, axis=-2)
    start = np.broadcast_to(np.asarray(initial, dtype=float), path.batch_shape + (path.dim,))

    decay = np.exp(-mu * durations)
    gain = -np.expm1(-mu * durations) / (mu * durations)

    if durations.size and np.allclose(durations, durations[0], rtol=1e-12, atol=0.0):
        filtered, _ = lfilter(
            [gain[0]], [1.0, -decay[0]], increments, axis=-2, zi=(decay[0] * start)[..., None, :]
        )
        values = np.concatenate([start[..., None, :], filtered], axis=-2)
    else:
        values = np.empty(path.values.shape)
        values[..., 0, :] = start
        for k in range(durations.size):
            values[..., k + 1, :] = decay[k] * values[..., k, :] + gain[k] * increments[..., k, :]

    return PiecewisePath(path.times, values, path.time_augmented)
