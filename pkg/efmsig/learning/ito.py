"""
Calculus of linear functionals <sig, ell> of the time-augmented Brownian
EFM-signature, and the representation of an OU process as such a functional.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional

import numpy as np
from scipy.integrate import quad

from config.logging import core_logger as logger
from efmsig.core.expectation import expected_coefficient
from efmsig.core.rates import Rates, apply_Lambda
from efmsig.core.tensor import TensorSeq, project, shuffle_words
from shared.errors import AlphabetMismatchError, DomainError


@dataclass
class FunctionalDecomposition:
    """d<sig, ell> = <sig, drift> dt + sum_i <sig, vol[i-1]> dW^i (Ito form)."""

    drift: TensorSeq
    vol: List[TensorSeq]


@dataclass
class StratonovichDecomposition:
    """d<sig, ell> = <sig, drift> dt + sum_i <sig, integrands[i]> o dX^i, one integrand per letter."""

    drift: TensorSeq
    integrands: List[TensorSeq]


def _rate_of_change(ell: TensorSeq, ell_dot: Optional[TensorSeq]) -> TensorSeq:
    if ell_dot is None:
        return TensorSeq.zeros(ell.width, ell.order, ell.batch_shape, ell.dtype)
    if ell_dot.width != ell.width:
        raise AlphabetMismatchError(f"ell has {ell.width} letters, ell_dot {ell_dot.width}")
    return ell_dot.with_order(ell.order)


def stratonovich_decompose(r: Rates, ell: TensorSeq,
                           ell_dot: Optional[TensorSeq] = None) -> StratonovichDecomposition:
    """General-path form: drift = ell_dot - Lambda ell, integrand of letter i = ell|_i."""
    r.check(ell)
    drift = _rate_of_change(ell, ell_dot) - apply_Lambda(r, ell)
    return StratonovichDecomposition(drift, [project(ell, (i,)) for i in range(ell.width)])


def ito_decompose(r: Rates, ell: TensorSeq, ell_dot: Optional[TensorSeq] = None) -> FunctionalDecomposition:
    """
    Ito decomposition for time-augmented Brownian motion (letter 0 is time):
    drift = ell_dot - Lambda ell + ell|_0 + 1/2 sum_i ell|_ii and vol[i-1] = ell|_i.
    """
    r.check(ell)
    if ell.width < 2:
        raise DomainError("Ito decomposition needs a time letter and at least one Brownian letter")

    strat = stratonovich_decompose(r, ell, ell_dot)
    drift = strat.drift + strat.integrands[0]
    for i in range(1, ell.width):
        drift = drift + 0.5 * project(ell, (i, i))

    return FunctionalDecomposition(drift, strat.integrands[1:])


def _check_ou_alphabet(r: Rates, mu: float, order: int):
    if r.width != 2:
        raise AlphabetMismatchError(f"The OU representation lives on (time, W): 2 rates, got {r.width}")
    if not mu > 0:
        raise DomainError(f"mu must be positive, got {mu}")
    if order < 0:
        raise DomainError(f"Order must be >= 0, got {order}")


def ou_coefficients(r: Rates, mu: float, count: int) -> np.ndarray:
    """c_0 = 1 and c_{k+1} = (k lambda^0 + lambda^1 - mu) c_k, for k < count."""
    lam0, lam1 = r.rates
    c = np.ones(count)
    for k in range(count - 1):
        c[k + 1] = (k * lam0 + lam1 - mu) * c[k]
    return c


def hook_word(k: int):
    """The word 1 0...0 with k zeros."""
    return (1,) + (0,) * k


def ou_representation(r: Rates, mu: float, N: int) -> TensorSeq:
    """
    sum_{k<=N} c_k <1 0^k>, the functional tracking the OU process
    dY = -mu Y dt + dW. Its words reach length N + 1, so the tensor has that order.
    """
    _check_ou_alphabet(r, mu, N)
    c = ou_coefficients(r, mu, N + 1)
    return TensorSeq.from_words(2, N + 1, {hook_word(k): c[k] for k in range(N + 1)})


@lru_cache(maxsize=4096)
def _expected(r: Rates, word) -> float:
    return expected_coefficient(r, word)


def ou_remainder_bound(r: Rates, mu: float, N: int) -> float:
    """
    Stationary bound on E[(Y - Y^N)^2]. Y - Y^N = c_{N+1} int exp(-mu(t - s)) <sig_s, 1 0^N> ds,
    so it is at most c_{N+1}^2 / mu^2 times E<sig, 1 0^N>^2 = <(1 0^N) shuffled twice, E>.
    """
    _check_ou_alphabet(r, mu, N)
    c_next = ou_coefficients(r, mu, N + 2)[-1]
    if c_next == 0:
        return 0.0

    word = hook_word(N)
    second_moment = math.fsum(_expected(r, w) for w in shuffle_words(word, word))
    return float(c_next**2 / mu**2 * second_moment)


def ou_kernel(r: Rates, mu: float, N: int, s):
    """Kernel of Y^N against dW at lag s: exp(-lambda^1 s) sum_k c_k ((1 - exp(-lambda^0 s)) / lambda^0)^k / k!."""
    lam0, lam1 = r.rates
    s = np.asarray(s, dtype=float)
    c = ou_coefficients(r, mu, N + 1)

    base = -np.expm1(-lam0 * s) / lam0
    total = np.zeros_like(s)
    power = np.ones_like(s)
    for k in range(N + 1):
        total = total + c[k] * power
        power = power * base / (k + 1)
    return (np.exp(-lam1 * s) * total)[()]


def ou_representation_error(r: Rates, mu: float, N: int) -> float:
    """Exact stationary E[(Y - Y^N)^2] = int_0^inf (exp(-mu s) - K^N(s))^2 ds."""
    _check_ou_alphabet(r, mu, N)

    value, abserr = quad(
        lambda s: (math.exp(-mu * s) - ou_kernel(r, mu, N, s)) ** 2, 0.0, np.inf, limit=200
    )
    logger.debug(f"OU representation error at N={N}: {value:.6e} (quadrature error {abserr:.1e})")
    return float(value)
