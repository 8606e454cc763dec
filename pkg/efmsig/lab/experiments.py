"""
Monte Carlo experiments on EFM-signatures of time-augmented Brownian motion.

Every experiment splits its paths into streams (see efmsig.lab.rng), runs one
task per stream and reduces the per-stream sums in stream order, so the
numbers do not depend on the worker count. Signatures are advanced step by
step over blocks of increments; a stream never holds more than one block.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import expm
from scipy.stats import ks_2samp, linregress
from scipy.stats import norm as gaussian

from config.logging import core_logger as logger
from efmsig.core.expectation import predict
from efmsig.core.rates import Rates, lambda_of_word
from efmsig.core.signature import (PiecewisePath, SigState, advance,
                                   kernel_for, signature_stream)
from efmsig.core.tensor import (TensorSeq, bracket, norm, storage_size,
                                word_index, words)
from efmsig.lab.simulation import (BrownianStream, SimConfig, simulate_bm,
                                   stream_slices)
from efmsig.learning.ito import (ito_decompose, ou_coefficients,
                                 ou_remainder_bound, ou_representation_error)
from efmsig.manager import BatchManager, run_ordered
from shared.errors import AlphabetMismatchError, DomainError
from shared.flags import ORIGIN_FLAT_PAST, ORIGIN_START

KS_LEVEL = 0.01
DETERMINISTIC_ATOL = 1e-3
DECAY_TOLERANCE = 0.15
CHECKPOINTS = 200


def _check_alphabet(cfg: SimConfig, r: Rates):
    if r.width != cfg.d + 1:
        raise AlphabetMismatchError(
            f"Time-augmented {cfg.d}-dimensional Brownian motion needs {cfg.d + 1} rates, got {r.width}"
        )


def _check_paths(n_paths: int, minimum: int = 2):
    if n_paths < minimum:
        raise DomainError(f"Need at least {minimum} paths, got {n_paths}")


def _flat_index(word: Sequence[int], width: int) -> int:
    """Position of a word in TensorSeq.to_flat order."""
    return storage_size(width, len(word) - 1) + word_index(word, width)


def _with_clock(increments: np.ndarray, dt: float) -> np.ndarray:
    clock = np.full(increments.shape[:-1] + (1,), dt)
    return np.concatenate([clock, increments], axis=-1)


def _walk(r: Rates, state: SigState, stream: BrownianStream, k_start: int, k_end: int,
          on_step: Optional[Callable[[int, SigState], None]] = None) -> SigState:
    """
    Advances a (batched) state over grid steps k_start..k_end-1 of the stream.
    Leading batch axes of the state broadcast against the stream's path axis.
    on_step(k, state) sees the state at grid step k after each advance.
    """
    dt = stream.cfg.dt
    kernel = kernel_for(r, state.sig.order)

    for k_first, increments in stream.chunks(k_start, k_end):
        steps = _with_clock(increments, dt)
        for j in range(steps.shape[1]):
            state = advance(r, state, dt, steps[:, j], kernel)
            if on_step is not None:
                on_step(k_first + j + 1, state)
    return state


def _unit_state(r: Rates, order: int, k: int, dt: float, batch: Tuple[int, ...]) -> SigState:
    return SigState(k * dt, TensorSeq.unit(r.width, order, batch))


def _checkpoints(k_start: int, k_end: int, every: Optional[int]) -> np.ndarray:
    every = every or max(1, (k_end - k_start) // CHECKPOINTS)
    ks = np.arange(k_start, k_end + 1, every)
    return ks if ks[-1] == k_end else np.append(ks, k_end)


# Moments


def mc_signature_moments(cfg: SimConfig, r: Rates, order: int, n_paths: int, horizon: float,
                         manager: Optional[BatchManager] = None) -> Tuple[TensorSeq, TensorSeq]:
    """
    Empirical mean and standard error of the flat-past signature at t0 + horizon,
    started from the empty word at t0.
    """
    _check_alphabet(cfg, r)
    _check_paths(n_paths)
    if not horizon > 0:
        raise DomainError(f"horizon must be positive, got {horizon}")

    k0 = cfg.step_of(cfg.t0)
    k_end = k0 + max(1, int(round(horizon / cfg.dt)))

    def task(piece):
        stream_id, used = piece
        state = _unit_state(r, order, k0, cfg.dt, (used,))
        state = _walk(r, state, BrownianStream(cfg, stream_id, used), k0, k_end)
        flat = state.sig.to_flat()
        return flat.sum(axis=0), (flat**2).sum(axis=0)

    totals = run_ordered(task, stream_slices(n_paths), manager)
    first = np.sum([t[0] for t in totals], axis=0)
    second = np.sum([t[1] for t in totals], axis=0)

    mean = first / n_paths
    variance = np.maximum(second - n_paths * mean**2, 0.0) / (n_paths - 1)
    stderr = np.sqrt(variance / n_paths)

    logger.info(f"Signature moments over {n_paths} paths, horizon {horizon}, order {order}, {r}")
    return (
        TensorSeq.from_flat(r.width, order, mean),
        TensorSeq.from_flat(r.width, order, stderr),
    )


# Ergodic decay


@dataclass
class DecayReport:
    times: np.ndarray
    mean_square_gap: np.ndarray
    initial_gap: float
    rate: float
    rate_stderr: float
    expected_rate: float
    relative_error: float
    compensated_slope: float
    passed: bool


def ergodic_decay_experiment(cfg: SimConfig, r: Rates, order: int, n_paths: int,
                             fit_from: Optional[float] = None, every: Optional[int] = None,
                             manager: Optional[BatchManager] = None) -> DecayReport:
    """
    Couples a flat-past signature started at t0 with one burned in since
    t0 - burn_in. Both consume the same increments after t0, so the gap is
    D_t(gap at t0) tensored with the shared tail. The mean square gap is fitted
    by an exponential on t >= fit_from (default 2 / min rate) and its rate
    compared with 2 min rate.
    """
    _check_alphabet(cfg, r)
    _check_paths(n_paths)
    if cfg.burn_in <= 0:
        raise DomainError("The coupled decay experiment needs burn_in > 0")

    k_burn, k0, k1 = cfg.window
    ks = _checkpoints(k0, k1, every)
    slots = {int(k): index for index, k in enumerate(ks)}

    def task(piece):
        stream_id, used = piece
        stream = BrownianStream(cfg, stream_id, used)
        burned = _walk(r, _unit_state(r, order, k_burn, cfg.dt, (used,)), stream, k_burn, k0)
        cold = TensorSeq.unit(r.width, order, (used,))
        coupled = TensorSeq(
            r.width, order, [np.stack([a, b]) for a, b in zip(cold.levels, burned.sig.levels)]
        )

        sums = np.zeros(ks.size)

        def record(k, state):
            slot = slots.get(k)
            if slot is not None:
                gap = state.sig.batch_item(0) - state.sig.batch_item(1)
                sums[slot] = np.sum(norm(gap) ** 2)

        state = SigState(k0 * cfg.dt, coupled)
        record(k0, state)
        _walk(r, state, stream, k0, k1, record)
        return sums

    totals = np.sum(run_ordered(task, stream_slices(n_paths), manager), axis=0)
    mean_square = totals / n_paths
    times = (ks - k0) * cfg.dt

    fit_from = 2.0 / r.min_rate if fit_from is None else fit_from
    window = (times >= fit_from) & (mean_square > 0)
    if np.count_nonzero(window) < 3:
        raise DomainError(f"Fewer than 3 checkpoints after fit_from={fit_from}; extend t1")

    fit = linregress(times[window], np.log(mean_square[window]))
    expected = 2.0 * r.min_rate
    rate = -fit.slope
    relative = abs(rate - expected) / expected

    report = DecayReport(
        times=times,
        mean_square_gap=mean_square,
        initial_gap=float(mean_square[0]),
        rate=float(rate),
        rate_stderr=float(fit.stderr),
        expected_rate=expected,
        relative_error=float(relative),
        compensated_slope=float(fit.slope + expected),
        passed=bool(relative <= DECAY_TOLERANCE),
    )
    logger.info(f"Ergodic decay rate {rate:.4f} vs {expected:.4f} ({relative:.1%}) over {n_paths} paths")
    return report


# Stationarity


@dataclass
class WordTest:
    word: Tuple[int, ...]
    statistic: float
    pvalue: Optional[float]
    deterministic: bool
    rejected: bool


@dataclass
class StationarityReport:
    t_a: float
    t_b: float
    threshold: float
    tests: List[WordTest]

    @property
    def rejected(self) -> List[Tuple[int, ...]]:
        return [test.word for test in self.tests if test.rejected]

    @property
    def passed(self) -> bool:
        return not self.rejected


def stationarity_check(cfg: SimConfig, r: Rates, order: int, n_paths: int, t_a: float, t_b: float,
                       manager: Optional[BatchManager] = None) -> StationarityReport:
    """
    Compares the laws of the level-1 and level-2 coefficients at times t_a and
    t_b of signatures started cold at t0 - burn_in. Random words get a
    two-sample Kolmogorov-Smirnov test at level 0.01 / (number of random words);
    pure-time words are deterministic and are compared by value.
    """
    _check_alphabet(cfg, r)
    _check_paths(n_paths)

    k_burn, _, k1 = cfg.window
    k_a, k_b = cfg.step_of(t_a), cfg.step_of(t_b)
    for k, t in ((k_a, t_a), (k_b, t_b)):
        if not k_burn <= k <= k1:
            raise DomainError(f"Time {t} lies outside [{k_burn * cfg.dt}, {k1 * cfg.dt}]")

    warm_up = 10.0 / r.min_rate
    if min(k_a, k_b) - k_burn < warm_up / cfg.dt:
        logger.warning(
            f"Stationarity times {t_a}, {t_b} are within {warm_up:.3g} of the cold start; "
            "rejections are expected"
        )

    tested = [w for w in words(r.width, min(order, 2)) if w]
    columns = np.array([_flat_index(w, r.width) for w in tested])

    def task(piece):
        stream_id, used = piece
        captured: Dict[int, np.ndarray] = {}

        def capture(k, state):
            if k in (k_a, k_b):
                captured[k] = state.sig.to_flat()[:, columns]

        state = _unit_state(r, order, k_burn, cfg.dt, (used,))
        capture(k_burn, state)
        _walk(r, state, BrownianStream(cfg, stream_id, used), k_burn, max(k_a, k_b), capture)
        return captured[k_a], captured[k_b]

    pieces = run_ordered(task, stream_slices(n_paths), manager)
    sample_a = np.concatenate([p[0] for p in pieces])
    sample_b = np.concatenate([p[1] for p in pieces])

    deterministic = [all(letter == 0 for letter in w) for w in tested]
    random_count = max(1, deterministic.count(False))
    threshold = KS_LEVEL / random_count

    tests = []
    for j, word in enumerate(tested):
        if deterministic[j]:
            gap = float(abs(sample_a[:, j].mean() - sample_b[:, j].mean()))
            tests.append(WordTest(word, gap, None, True, gap > DETERMINISTIC_ATOL))
        else:
            result = ks_2samp(sample_a[:, j], sample_b[:, j])
            tests.append(
                WordTest(word, float(result.statistic), float(result.pvalue), False,
                         bool(result.pvalue < threshold))
            )

    report = StationarityReport(t_a, t_b, threshold, tests)
    logger.info(f"Stationarity check {t_a} vs {t_b}: {len(report.rejected)} rejected of {len(tests)}")
    return report


# L2 bound


def l2_word_bounds(r: Rates, order: int) -> Dict[Tuple[int, ...], float]:
    """
    Bounds on sup_t E[(sig^w_{0,t})^2] for time-augmented 1-d Brownian motion:
    B(v0) = B(v) / rate(v0)^2, B(v1) = B(v) / (2 rate(v1)) when v does not end
    in 1, and B(v11) = B(v1) / rate(v11) + B(v) / (2 rate(v11)^2), the last one
    from splitting off the Stratonovich correction.
    """
    if r.width != 2:
        raise AlphabetMismatchError(f"Word bounds cover (time, W) only, got {r.width} rates")

    bounds = {(): 1.0}
    for word in words(2, order):
        if not word:
            continue
        rate = lambda_of_word(r, word)
        head = word[:-1]
        if word[-1] == 0:
            bounds[word] = bounds[head] / rate**2
        elif head and head[-1] == 1:
            bounds[word] = bounds[head] / rate + bounds[head[:-1]] / (2.0 * rate**2)
        else:
            bounds[word] = bounds[head] / (2.0 * rate)
    return bounds


def l2_series_bound(r: Rates, order: int) -> float:
    """sum_{n<=N} 2^n (2C)^n / n! with C = max(1, 1 / min rate^2, 1 / (2 min rate))."""
    low = r.min_rate
    c = max(1.0, 1.0 / low**2, 1.0 / (2.0 * low))
    return float(sum((4.0 * c) ** n / math.factorial(n) for n in range(order + 1)))


@dataclass
class L2BoundReport:
    times: np.ndarray
    mean_square_norm: np.ndarray
    stderr: np.ndarray
    empirical_sup: float
    sup_time: float
    word_bound: float
    series_bound: float
    word_sup: Dict[Tuple[int, ...], float]
    word_bounds: Dict[Tuple[int, ...], float]
    passed: bool


def l2_bound_check(cfg: SimConfig, r: Rates, order: int, n_paths: int, every: Optional[int] = None,
                   manager: Optional[BatchManager] = None) -> L2BoundReport:
    """
    sup_t E|sig_{0,t}|_2^2 over [t0, t1] against the word-by-word and the series
    bound. Passes when the estimate minus 3 standard errors stays below both.
    """
    _check_alphabet(cfg, r)
    _check_paths(n_paths)
    if cfg.d != 1:
        raise DomainError("The L2 bound is stated for one-dimensional Brownian motion")

    k0, k1 = cfg.step_of(cfg.t0), cfg.step_of(cfg.t1)
    ks = _checkpoints(k0, k1, every)
    slots = {int(k): index for index, k in enumerate(ks)}
    size = storage_size(r.width, order)

    def task(piece):
        stream_id, used = piece
        squares = np.zeros((ks.size, size))
        fourth = np.zeros(ks.size)

        def record(k, state):
            slot = slots.get(k)
            if slot is not None:
                flat = state.sig.to_flat() ** 2
                squares[slot] = flat.sum(axis=0)
                fourth[slot] = np.sum(flat.sum(axis=1) ** 2)

        state = _unit_state(r, order, k0, cfg.dt, (used,))
        record(k0, state)
        _walk(r, state, BrownianStream(cfg, stream_id, used), k0, k1, record)
        return squares, fourth

    pieces = run_ordered(task, stream_slices(n_paths), manager)
    squares = np.sum([p[0] for p in pieces], axis=0) / n_paths
    fourth = np.sum([p[1] for p in pieces], axis=0) / n_paths

    mean_square = squares.sum(axis=1)
    stderr = np.sqrt(np.maximum(fourth - mean_square**2, 0.0) / (n_paths - 1))

    bounds = l2_word_bounds(r, order)
    word_bound = math.fsum(bounds.values())
    series = l2_series_bound(r, order)

    peak = int(np.argmax(mean_square))
    word_sup = {w: float(squares[:, _flat_index(w, r.width)].max()) for w in words(r.width, order)}
    passed = bool(np.max(mean_square - 3.0 * stderr) <= min(word_bound, series))

    if not passed:
        logger.warning(f"L2 bound exceeded: sup {mean_square[peak]:.4g} vs {min(word_bound, series):.4g}")
    return L2BoundReport(
        times=ks * cfg.dt,
        mean_square_norm=mean_square,
        stderr=stderr,
        empirical_sup=float(mean_square[peak]),
        sup_time=float(ks[peak] * cfg.dt),
        word_bound=word_bound,
        series_bound=series,
        word_sup=word_sup,
        word_bounds=bounds,
        passed=passed,
    )


# Integral identity


def exp_representation_coefficients(lambda0: float, k: int) -> np.ndarray:
    """b_{k,m} = (-lambda0)^(m-1) (k-1)! / (k-m)! for m = 1..k."""
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    return np.array([
        (-lambda0) ** (m - 1) * math.factorial(k - 1) / math.factorial(k - m) for m in range(1, k + 1)
    ])


@dataclass
class IdentityReport:
    k: int
    coefficients: np.ndarray
    lhs: float
    rhs: float
    residual: float


def exp_integral_identity_check(cfg: SimConfig, r: Rates, k: int, path: Optional[PiecewisePath] = None,
                              letter: int = 1) -> IdentityReport:
    """
    int exp(-(k rate(0) + rate(i)) (T - t)) <sig_t, i> dt, by the trapezoid rule on
    the path grid, against sum_m b_{k,m} <sig_T, i 0^m>. Both sides use the flat-past
    signature of the same path, so the residual is the quadrature error.
    """
    if path is None:
        _check_alphabet(cfg, r)
        simulated = simulate_bm(cfg)
        path = PiecewisePath(simulated.times, simulated.values, time_augmented=True)
    if not path.time_augmented:
        raise DomainError("The integral identity needs a time-augmented path")
    if not 1 <= letter < r.width:
        raise DomainError(f"letter must be a space letter in 1..{r.width - 1}, got {letter}")

    coefficients = exp_representation_coefficients(float(r.rates[0]), k)
    order = k + 1

    values, times, state = [], [], None
    for state in signature_stream(r, path, order, ORIGIN_FLAT_PAST):
        times.append(state.t)
        values.append(state.sig.levels[1][letter])

    times, values = np.array(times), np.array(values)
    T = times[-1]
    decay = np.exp(-(k * r.rates[0] + r.rates[letter]) * (T - times))
    lhs = float(trapezoid(decay * values, times))
    rhs = float(sum(
        b * state.sig.coefficient((letter,) + (0,) * m) for m, b in enumerate(coefficients, start=1)
    ))

    logger.debug(f"Integral identity k={k}: lhs {lhs:.12g}, rhs {rhs:.12g}")
    return IdentityReport(k, coefficients, lhs, rhs, abs(lhs - rhs))


# Characteristic function


@dataclass
class CharFuncEstimate:
    horizon: float
    phi: complex
    stderr_re: float
    stderr_im: float
    radius99: float


def mc_charfunc(cfg: SimConfig, r: Rates, ell: TensorSeq, order: int, n_paths: int,
                horizons: Sequence[float], manager: Optional[BatchManager] = None) -> List[CharFuncEstimate]:
    """Empirical E[exp(i <sig_{0,T}, ell>)] at each horizon, flat past at t0."""
    _check_alphabet(cfg, r)
    _check_paths(n_paths)
    r.check(ell)

    k0 = cfg.step_of(cfg.t0)
    steps = [k0 + max(1, int(round(h / cfg.dt))) for h in horizons]
    slots = {k: index for index, k in enumerate(steps)}
    ell = ell.with_order(order)

    def task(piece):
        stream_id, used = piece
        sums = np.zeros((len(steps), 4))

        def record(k, state):
            slot = slots.get(k)
            if slot is not None:
                value = np.asarray(bracket(ell, state.sig)).real
                c, s = np.cos(value), np.sin(value)
                sums[slot] = [c.sum(), s.sum(), (c**2).sum(), (s**2).sum()]

        state = _unit_state(r, order, k0, cfg.dt, (used,))
        _walk(r, state, BrownianStream(cfg, stream_id, used), k0, max(steps), record)
        return sums

    sums = np.sum(run_ordered(task, stream_slices(n_paths), manager), axis=0) / n_paths
    z = float(gaussian.ppf(0.995))

    estimates = []
    for index, k in enumerate(steps):
        re, im, re2, im2 = sums[index]
        se_re = math.sqrt(max(re2 - re**2, 0.0) / (n_paths - 1))
        se_im = math.sqrt(max(im2 - im**2, 0.0) / (n_paths - 1))
        estimates.append(
            CharFuncEstimate((k - k0) * cfg.dt, complex(re, im), se_re, se_im, z * math.hypot(se_re, se_im))
        )
    return estimates


# OU representation


@dataclass
class OURepresentationReport:
    orders: List[int]
    relative_errors: List[float]
    exact_relative_errors: List[float]
    relative_bounds: List[float]
    variance: float

    @property
    def decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.relative_errors, self.relative_errors[1:]))


def _hook_propagator(r: Rates, mu: float, top: int, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact one-step map of z_k = <sig, 1 0^k> (k <= top) together with the OU
    value Y at rate mu, over a step of length dt with constant Brownian slope:
    z' = A z + b w, so z(dt) = expm(A dt) z + (int_0^dt expm(A s) ds) b w.
    """
    lam0, lam1 = r.rates
    n = top + 2
    system = np.zeros((n + 1, n + 1))
    for k in range(top + 1):
        system[k, k] = -(lam1 + k * lam0)
        if k:
            system[k, k - 1] = 1.0
    system[top + 1, top + 1] = -mu
    system[0, n] = system[top + 1, n] = 1.0

    flow = expm(system * dt)
    return flow[:n, :n], flow[:n, n]


def ou_representation_experiment(cfg: SimConfig, r: Rates, mu: float, orders: Sequence[int], n_paths: int,
                                 manager: Optional[BatchManager] = None,
                                 with_bounds: bool = True) -> OURepresentationReport:
    """
    Relative L2 error E[(Y - Y^N)^2] / E[Y^2] over [t0, t1], Y the OU process at
    rate mu driven by the simulated Brownian motion, Y^N = <sig, ell^{mu,N}>,
    both started at zero at t0 - burn_in.
    """
    _check_alphabet(cfg, r)
    _check_paths(n_paths)
    if cfg.d != 1 or r.width != 2:
        raise DomainError("The OU representation uses one-dimensional Brownian motion")

    orders = sorted(set(int(n) for n in orders))
    top = orders[-1]
    c = ou_coefficients(r, mu, top + 1)
    weights = np.array([[c[k] if k <= n else 0.0 for n in orders] for k in range(top + 1)])
    flow, gain = _hook_propagator(r, mu, top, cfg.dt)

    k_burn, k0, k1 = cfg.window

    def task(piece):
        stream_id, used = piece
        z = np.zeros((used, top + 2))
        errors, energy = np.zeros(len(orders)), 0.0

        for k_first, increments in BrownianStream(cfg, stream_id, used).chunks(k_burn, k1):
            slopes = increments[:, :, 0] / cfg.dt
            for j in range(slopes.shape[1]):
                z = z @ flow.T + slopes[:, j, None] * gain
                if k_first + j + 1 > k0:
                    y = z[:, -1]
                    errors += np.sum((y[:, None] - z[:, :-1] @ weights) ** 2, axis=0)
                    energy += float(np.sum(y**2))
        return errors, energy

    pieces = run_ordered(task, stream_slices(n_paths), manager)
    errors = np.sum([p[0] for p in pieces], axis=0)
    energy = math.fsum(p[1] for p in pieces)

    stationary_variance = 1.0 / (2.0 * mu)
    exact = [ou_representation_error(r, mu, n) / stationary_variance for n in orders]
    bounds = [ou_remainder_bound(r, mu, n) / stationary_variance for n in orders] if with_bounds else []

    report = OURepresentationReport(
        orders=orders,
        relative_errors=(errors / energy).tolist(),
        exact_relative_errors=exact,
        relative_bounds=bounds,
        variance=energy / (n_paths * (k1 - k0)),
    )
    logger.info(f"OU representation errors {report.relative_errors} for orders {orders}")
    return report


# Prediction


@dataclass
class PredictionReport:
    t: float
    horizon: float
    predicted_mean: float
    predicted_variance: float
    empirical_mean: float
    empirical_variance: float
    stderr: float
    z_score: float
    passed: bool
    state: SigState = field(repr=False, default=None)


def conditional_mean_check(cfg: SimConfig, r: Rates, ell: TensorSeq, order: int, n_continuations: int,
                           t: float, h: float, manager: Optional[BatchManager] = None) -> PredictionReport:
    """
    Freezes the past of path 0 up to t (flat past at t0 - burn_in) and compares
    predict() with the empirical law of <sig_{t+h}, ell> over continuations.
    Continuations use the increments of paths 0..n-1 on [t, t + h], which are
    independent of the frozen past.
    """
    _check_alphabet(cfg, r)
    _check_paths(n_continuations)

    k_burn, _, _ = cfg.window
    k_t = cfg.step_of(t)
    steps = max(1, int(round(h / cfg.dt)))
    if k_t < k_burn:
        raise DomainError(f"t={t} precedes the start of the simulated past")

    past = _walk(r, _unit_state(r, order, k_burn, cfg.dt, (1,)), BrownianStream(cfg, 0, 1), k_burn, k_t)
    state = SigState(k_t * cfg.dt, past.sig.batch_item(0))

    horizon = steps * cfg.dt
    mean, variance = predict(r, ell, state, horizon)
    ell = ell.with_order(order)

    def task(piece):
        stream_id, used = piece
        start = SigState(state.t, state.sig.map_levels(lambda level: np.broadcast_to(level, (used,) + level.shape)))
        final = _walk(r, start, BrownianStream(cfg, stream_id, used), k_t, k_t + steps)
        values = np.asarray(bracket(ell, final.sig)).real
        return values.sum(), (values**2).sum()

    sums = np.sum(run_ordered(task, stream_slices(n_continuations), manager), axis=0) / n_continuations
    empirical_mean = float(sums[0])
    empirical_variance = float(max(sums[1] - sums[0] ** 2, 0.0) * n_continuations / (n_continuations - 1))
    stderr = math.sqrt(empirical_variance / n_continuations)
    z = (empirical_mean - float(np.real(mean))) / stderr if stderr > 0 else 0.0

    return PredictionReport(
        t=state.t,
        horizon=horizon,
        predicted_mean=float(np.real(mean)),
        predicted_variance=float(variance),
        empirical_mean=empirical_mean,
        empirical_variance=empirical_variance,
        stderr=stderr,
        z_score=float(z),
        passed=bool(abs(z) <= 4.0),
        state=state,
    )


# Ito decomposition


@dataclass
class ItoResidualReport:
    dts: List[float]
    rms: List[float]
    slope: float


def ito_residual_check(cfg: SimConfig, r: Rates, ell: TensorSeq, order: int, dts: Sequence[float],
                       n_paths: int = 16) -> ItoResidualReport:
    """
    Per-step RMS of the realized increment of <sig, ell> minus the left-point
    (Ito) sums of the drift and vol integrands, for each step size, and the
    slope of log RMS against log dt.
    """
    _check_alphabet(cfg, r)
    ell = ell.with_order(order)
    decomposition = ito_decompose(r, ell)

    flat_ell = ell.to_flat()
    flat_drift = decomposition.drift.to_flat()
    flat_vol = np.stack([v.to_flat() for v in decomposition.vol], axis=-1)

    rms = []
    for dt in dts:
        simulated = simulate_bm(replace(cfg, dt=dt, burn_in=0.0), n_paths)
        path = PiecewisePath(simulated.times, simulated.values, time_augmented=True)
        flats = np.stack([s.sig.to_flat() for s in signature_stream(r, path, order, ORIGIN_START)], axis=-2)

        values = flats @ flat_ell
        drift = flats[..., :-1, :] @ flat_drift
        vol = flats[..., :-1, :] @ flat_vol
        dW = np.diff(path.values, axis=-2)

        residual = np.diff(values, axis=-1) - drift * np.diff(path.times) - np.sum(vol * dW, axis=-1)
        rms.append(float(np.sqrt(np.mean(residual**2))))

    slope = float(linregress(np.log(dts), np.log(rms)).slope) if len(dts) > 1 else float("nan")
    logger.info(f"Ito residual RMS {rms} for dt {list(dts)}, slope {slope:.3f}")
    return ItoResidualReport(list(dts), rms, slope)
