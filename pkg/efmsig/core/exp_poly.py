"""
Exponential polynomials f(t) = sum_j p_j(t) exp(-mu_j t).

The family is closed under g(t) = int_0^t exp(-nu (t - u)) f(u) du, which is
all the iterated integrals of a linear segment need. Equal rates are merged
(relative tolerance MU_MERGE_RTOL) and integrated on the confluent branch, so
no partial fraction ever divides by a vanishing rate gap.
"""

from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as P

from config.settings import MU_MERGE_RTOL
from shared.errors import DivergenceError, DomainError

Term = Tuple[float, np.ndarray]


def _trim(poly: np.ndarray) -> np.ndarray:
    poly = np.trim_zeros(np.asarray(poly, dtype=float), "b")
    return poly if poly.size else np.zeros(1)


class ExpPoly:
    """Immutable sum of polynomial-times-exponential terms, sorted by rate."""

    __slots__ = ("terms",)

    def __init__(self, terms: Iterable[Tuple[float, Sequence[float]]] = ()):
        self.terms: List[Term] = _merge(
            [(float(mu), np.asarray(poly, dtype=float)) for mu, poly in terms]
        )

    @classmethod
    def constant(cls, value: float = 1.0) -> "ExpPoly":
        return cls([(0.0, [value])])

    @classmethod
    def exponential(cls, mu: float, value: float = 1.0) -> "ExpPoly":
        return cls([(mu, [value])])

    @property
    def mus(self) -> List[float]:
        return [mu for mu, _ in self.terms]

    @property
    def degree(self) -> int:
        return max((len(_trim(poly)) - 1 for _, poly in self.terms), default=0)

    def eval(self, t) -> np.ndarray | float:
        """Horner evaluation of each polynomial times its exponential."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError(f"ExpPoly is evaluated on t >= 0 only, got {t}")

        total = np.zeros_like(t)
        for mu, poly in self.terms:
            total = total + P.polyval(t, poly) * np.exp(-mu * t)
        return total[()]

    __call__ = eval

    def limit_at_infinity(self) -> float:
        for mu, poly in self.terms:
            if mu == 0.0 and len(_trim(poly)) > 1:
                raise DivergenceError(
                    f"Polynomial growth of degree {len(_trim(poly)) - 1} at rate 0"
                )
        return float(sum(poly[0] for mu, poly in self.terms if mu == 0.0))

    def step_integrate(self, mu_new: float, max_degree: Optional[int] = None) -> "ExpPoly":
        """
        g(t) = int_0^t exp(-mu_new (t - u)) f(u) du.

        For a term p(u) exp(-mu u) with mu != mu_new and delta = mu_new - mu, the
        antiderivative of p(u) exp(delta u) is Q(u) exp(delta u) where
        Q = sum_k (-1)^k p^(k) / delta^(k+1); hence the term contributes
        Q(t) exp(-mu t) - Q(0) exp(-mu_new t). When mu == mu_new it contributes
        (int_0^t p) exp(-mu_new t) instead.

        max_degree caps the polynomial degree of g: n nested integrations of a
        constant stay within degree n, so anything above the cap is malformed.
        """
        if mu_new < 0:
            raise DomainError(f"Rates are non-negative, got {mu_new}")

        scale = max([abs(mu_new)] + [abs(mu) for mu, _ in self.terms])
        out: List[Tuple[float, np.ndarray]] = []

        for mu, poly in self.terms:
            if abs(mu - mu_new) <= MU_MERGE_RTOL * scale:
                out.append((mu_new, P.polyint(poly)))
                continue

            delta = mu_new - mu
            q = np.zeros_like(poly)
            derivative = poly
            sign = 1.0
            for k in range(len(poly)):
                q[: len(derivative)] += sign * derivative / delta ** (k + 1)
                derivative = P.polyder(derivative) if len(derivative) > 1 else np.zeros(1)
                sign = -sign

            out.append((mu, q))
            out.append((mu_new, np.array([-q[0]])))

        result = ExpPoly(out)
        if max_degree is not None and result.degree > max_degree:
            raise DomainError(
                f"Step integration reached polynomial degree {result.degree}, above the cap {max_degree}"
            )
        return result

    def __add__(self, other: "ExpPoly") -> "ExpPoly":
        return ExpPoly(self.terms + other.terms)

    def __mul__(self, scalar: float) -> "ExpPoly":
        return ExpPoly([(mu, poly * scalar) for mu, poly in self.terms])

    __rmul__ = __mul__

    def __repr__(self) -> str:
        parts = [f"({np.round(poly, 6).tolist()})e^(-{mu:g}t)" for mu, poly in self.terms]
        return "ExpPoly(" + " + ".join(parts or ["0"]) + ")"


def _merge(terms: List[Term]) -> List[Term]:
    """Sorts by rate and adds up polynomials whose rates agree within tolerance."""
    if not terms:
        return []

    terms = sorted(terms, key=lambda term: term[0])
    tolerance = MU_MERGE_RTOL * max(abs(mu) for mu, _ in terms)

    merged: List[Term] = [terms[0]]
    for mu, poly in terms[1:]:
        last_mu, last_poly = merged[-1]
        if abs(mu - last_mu) <= tolerance:
            merged[-1] = (last_mu, P.polyadd(last_poly, poly))
        else:
            merged.append((mu, poly))

    return [(mu, _trim(poly)) for mu, poly in merged if np.any(poly)]


def step_integrate(f: ExpPoly, mu_new: float, max_degree: Optional[int] = None) -> ExpPoly:
    return f.step_integrate(mu_new, max_degree)


def limit_at_infinity(f: ExpPoly) -> float:
    return f.limit_at_infinity()
