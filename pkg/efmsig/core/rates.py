import threading
from typing import Dict, Sequence

import numpy as np

from config.logging import core_logger as logger
from config.settings import C_TAYLOR_THRESHOLD
from efmsig.core.tensor import TensorSeq, tensor_product
from shared.errors import AlphabetMismatchError, DomainError


class Rates:
    """
    Per-letter mean-reversion rates. Index 0 is the time letter on time-augmented
    alphabets. Word rates are additive: rate(uw) = rate(u) + rate(w), rate(empty) = 0.
    """

    def __init__(self, rates: Sequence[float], allow_zero: bool = False):
        rates = np.asarray(rates, dtype=float)

        if rates.ndim != 1 or rates.size == 0:
            raise DomainError(f"Rates must be a non-empty list, got {rates!r}")
        if not np.all(np.isfinite(rates)):
            raise DomainError(f"Rates must be finite, got {rates.tolist()}")
        if allow_zero:
            if np.any(rates < 0):
                raise DomainError(f"Rates must be non-negative, got {rates.tolist()}")
        elif np.any(rates <= 0):
            raise DomainError(f"Rates must be positive, got {rates.tolist()}")

        self.rates = rates
        self.rates.setflags(write=False)
        self.width = rates.size

        self._tables: Dict[int, np.ndarray] = {0: np.zeros(1)}
        self.lock = threading.Lock()

    @classmethod
    def plain(cls, width: int) -> "Rates":
        """Zero rates: the unweighted signature, with D acting as the identity."""
        return cls(np.zeros(width), allow_zero=True)

    @classmethod
    def from_json(cls, data: dict) -> "Rates":
        return cls(data["lambda"])

    def to_json(self) -> dict:
        return {"lambda": self.rates.tolist()}

    @property
    def min_rate(self) -> float:
        return float(self.rates.min())

    @property
    def is_plain(self) -> bool:
        return not np.any(self.rates)

    def level_table(self, n: int) -> np.ndarray:
        """Word rates of level n, in TensorSeq index order. Built once per level."""
        with self.lock:
            if n not in self._tables:
                top = max(self._tables)
                for level in range(top + 1, n + 1):
                    table = self._tables[level - 1][:, None] + self.rates[None, :]
                    table = table.ravel()
                    table.setflags(write=False)
                    self._tables[level] = table
                logger.debug(f"Rate tables built up to level {n} for lambda={self.rates.tolist()}")
            return self._tables[n]

    def check(self, a: TensorSeq):
        if a.width != self.width:
            raise AlphabetMismatchError(
                f"Rates cover {self.width} letters, tensor has {a.width}"
            )

    def __eq__(self, other) -> bool:
        return isinstance(other, Rates) and np.array_equal(self.rates, other.rates)

    def __hash__(self) -> int:
        return hash(tuple(self.rates.tolist()))

    def __repr__(self) -> str:
        return f"Rates({self.rates.tolist()})"


def lambda_of_word(r: Rates, word: Sequence[int]) -> float:
    for letter in word:
        if not 0 <= letter < r.width:
            raise DomainError(f"Letter {letter} outside alphabet of size {r.width}")
    return float(sum(r.rates[letter] for letter in word))


def _diagonal(r: Rates, a: TensorSeq, factor) -> TensorSeq:
    """Multiplies level n by factor(n, table_n), broadcasting over batch axes."""
    r.check(a)
    return TensorSeq(
        a.width,
        a.order,
        [level * factor(n, r.level_table(n)) for n, level in enumerate(a.levels)],
    )


def apply_Lambda(r: Rates, a: TensorSeq) -> TensorSeq:
    return _diagonal(r, a, lambda n, table: table)


def apply_Lambda_dagger(r: Rates, a: TensorSeq) -> TensorSeq:
    """Generalized inverse of Lambda; zero on the empty word and on zero-rate words."""

    def inverse(n, table):
        out = np.zeros_like(table)
        np.divide(1.0, table, out=out, where=table > 0)
        return out

    return _diagonal(r, a, inverse)


def apply_D(r: Rates, h, a: TensorSeq) -> TensorSeq:
    """
    Dilation semigroup, coefficient v times exp(-rate(v) h). `h` may be negative,
    or an array matching the tensor's batch shape.
    """
    h = np.asarray(h, dtype=float)
    return _diagonal(r, a, lambda n, table: np.exp(-np.multiply.outer(h, table)))


def c_factor(table: np.ndarray, h) -> np.ndarray:
    """(1 - exp(-rate h)) / rate, equal to h at rate 0, Taylor branch for tiny rate*h."""
    h = np.asarray(h, dtype=float)
    rate_h = np.multiply.outer(h, table)

    with np.errstate(divide="ignore", invalid="ignore"):
        exact = -np.expm1(-rate_h) / table
    series = h[..., None] * (1.0 - rate_h / 2.0) if h.ndim else h * (1.0 - rate_h / 2.0)

    return np.where(rate_h < C_TAYLOR_THRESHOLD, series, exact)


def apply_C(r: Rates, h, a: TensorSeq) -> TensorSeq:
    """Integrated semigroup: coefficient v times (1 - exp(-rate(v) h)) / rate(v)."""
    if np.any(np.asarray(h) < 0):
        raise DomainError(f"C_h needs h >= 0, got {h}")
    return _diagonal(r, a, lambda n, table: c_factor(table, h))


def stationary_series_H(r: Rates, x: TensorSeq, max_terms: int) -> TensorSeq:
    """
    Sum of H_x^k applied to the empty word for k = 0..max_terms, with
    H_x(l) = Lambda_dagger(l (x) x). Stops early once a term vanishes.
    """
    r.check(x)
    if np.any(x.levels[0]):
        raise DomainError("stationary_series_H needs x without empty-word part")

    result = TensorSeq.unit(x.width, x.order, x.batch_shape, x.dtype)
    term = result
    for k in range(1, max_terms + 1):
        term = apply_Lambda_dagger(r, tensor_product(term, x))
        if not any(np.any(level) for level in term.levels):
            break
        result = result + term

    return result
