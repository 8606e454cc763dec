"""
Expected EFM-signature of time-augmented Brownian motion started from a flat
past, and the conditional prediction formula built on it.

The expectation solves E_t = int_0^t D_{t-u}(E_u (x) drift) du with
drift = letter 0 + 1/2 sum_i letter i (x) letter i. Nonzero coefficients sit
on words tiled by the blocks "0" (weight 1) and "ii" (weight 1/2); along such
a word the expectation is the block weights times the iterated integral of a
linear path whose rates are the word rates at block boundaries.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Sequence, Tuple

import numpy as np

from config.logging import core_logger as logger
from config.settings import VARIANCE_CLIP_TOL
from efmsig.core.exp_poly import ExpPoly
from efmsig.core.rates import Rates, apply_D, lambda_of_word
from efmsig.core.signature import SigState
from efmsig.core.tensor import (TensorSeq, bracket, degree, shuffle,
                                tensor_product)
from shared.errors import (AlphabetMismatchError, BlowUpError, DomainError,
                           TruncationError)


@dataclass(frozen=True)
class ExpectedSig:
    horizon: float
    value: TensorSeq

    @property
    def stationary(self) -> bool:
        return math.isinf(self.horizon)


def _check_dims(r: Rates, d: int, order: int):
    if d < 1:
        raise DomainError(f"Spatial dimension must be >= 1, got {d}")
    if r.width != d + 1:
        raise AlphabetMismatchError(
            f"Time-augmented alphabet of dimension {d} needs {d + 1} rates, got {r.width}"
        )
    if order < 0:
        raise DomainError(f"Order must be >= 0, got {order}")


def drift_tensor(d: int, order: int) -> TensorSeq:
    """letter 0 + 1/2 sum_i letter i (x) letter i."""
    coefficients = {(0,): 1.0}
    coefficients.update({(i, i): 0.5 for i in range(1, d + 1)})
    return TensorSeq.from_words(d + 1, order, coefficients)


def _block_targets(width: int, n: int) -> List[Tuple[int, int, np.ndarray]]:
    """
    For level n, the (source level, block letter, target indices) triples:
    a word v at level n-1 extends to v0, a word v at level n-2 to vii.
    """
    targets = [(n - 1, 0, np.arange(width ** (n - 1)) * width)]
    if n >= 2:
        base = np.arange(width ** (n - 2)) * width**2
        for i in range(1, width):
            targets.append((n - 2, i, base + i * width + i))
    return targets


@lru_cache(maxsize=64)
def expected_signature_stationary(r: Rates, d: int, order: int) -> ExpectedSig:
    """
    E^{v0} = E^v / rate(v0) and E^{vii} = E^v / (2 rate(vii)); every other
    extension vanishes.
    """
    _check_dims(r, d, order)
    width = d + 1

    levels = [np.ones(1)]
    for n in range(1, order + 1):
        table = r.level_table(n)
        level = np.zeros(width**n)
        for source, letter, target in _block_targets(width, n):
            weight = 1.0 if letter == 0 else 0.5
            level[target] += weight * levels[source] / table[target]
        levels.append(level)

    logger.debug(f"Stationary expected signature built: d={d}, order={order}, {r}")
    return ExpectedSig(math.inf, TensorSeq(width, order, levels))


def _block_functions(r: Rates, d: int, order: int) -> List[Dict[int, Tuple[float, ExpPoly]]]:
    """Per level, {word index: (block weight, iterated integral in the horizon)}."""
    width = d + 1
    memo: Dict[Tuple[float, ...], ExpPoly] = {(): ExpPoly.constant(1.0)}
    levels: List[Dict[int, Tuple[float, ExpPoly, Tuple[float, ...]]]] = [{0: (1.0, memo[()], ())}]

    for n in range(1, order + 1):
        table = r.level_table(n)
        level: Dict[int, Tuple[float, ExpPoly, Tuple[float, ...]]] = {}
        for source, letter, target in _block_targets(width, n):
            block_weight = 1.0 if letter == 0 else 0.5
            for index, (weight, _, key) in levels[source].items():
                target_index = int(target[index])
                rate = float(table[target_index])
                new_key = key + (rate,)
                if new_key not in memo:
                    memo[new_key] = memo[key].step_integrate(rate, max_degree=len(new_key))
                level[target_index] = (weight * block_weight, memo[new_key], new_key)
        levels.append(level)

    return [{index: (w, f) for index, (w, f, _) in level.items()} for level in levels]


@lru_cache(maxsize=256)
def expected_signature_transient(r: Rates, d: int, order: int, h: float) -> ExpectedSig:
    """Expected signature over a horizon h, started from the empty word at h = 0."""
    _check_dims(r, d, order)
    if h < 0:
        raise DomainError(f"Horizon must be >= 0, got {h}")
    if math.isinf(h):
        return expected_signature_stationary(r, d, order)

    width = d + 1
    result = TensorSeq.unit(width, order)
    if h == 0:
        return ExpectedSig(0.0, result)

    for n, level in enumerate(_block_functions(r, d, order)):
        for index, (weight, function) in level.items():
            if n:
                result.levels[n][index] = weight * function.eval(h)

    return ExpectedSig(float(h), result)


def expected_coefficient(r: Rates, word: Sequence[int]) -> float:
    """Stationary expected coefficient of a single word, by peeling blocks off its end."""
    word = tuple(word)
    if not word:
        return 1.0

    rate = lambda_of_word(r, word)
    if word[-1] == 0:
        return expected_coefficient(r, word[:-1]) / rate
    if len(word) >= 2 and word[-2] == word[-1]:
        return 0.5 * expected_coefficient(r, word[:-2]) / rate
    return 0.0


def predict(r: Rates, ell: TensorSeq, state: SigState, h: float,
            with_variance: bool = True):
    """
    Conditional mean and variance of <ell, sig_{t+h}> given the signature at t:
    mean = <ell, D_h(sig_t) (x) E_h>, second moment from ell shuffled with itself.
    Returns (mean, variance); variance is None when not requested.
    """
    if h < 0:
        raise DomainError(f"Horizon must be >= 0, got {h}")
    r.check(ell)
    r.check(state.sig)

    order = state.sig.order
    ell_degree = degree(ell)
    if ell_degree > order:
        raise TruncationError(f"Functional of degree {ell_degree} exceeds order {order}")

    expected = expected_signature_transient(r, r.width - 1, order, float(h)).value
    future = tensor_product(apply_D(r, h, state.sig), expected)

    ell = ell.with_order(order)
    mean = bracket(ell, future)
    if not with_variance:
        return mean, None

    if 2 * ell_degree > order:
        raise TruncationError(
            f"Variance of a degree {ell_degree} functional needs order >= {2 * ell_degree}, got {order}"
        )

    variance = np.asarray(bracket(shuffle(ell, ell), future) - mean**2)
    if np.iscomplexobj(variance):
        variance = variance.real

    if np.any(variance < -VARIANCE_CLIP_TOL):
        raise BlowUpError(f"Negative predicted variance {variance.min():.3e}")
    if np.any(variance < 0):
        logger.warning(f"Clipping predicted variance {variance.min():.3e} to 0")
        variance = np.maximum(variance, 0.0)

    return mean, variance[()]
