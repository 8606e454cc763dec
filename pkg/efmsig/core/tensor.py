"""
Truncated tensor algebra over the alphabet {0, ..., d}.

A TensorSeq stores one dense array per level n = 0..N; level n holds (d+1)**n
coefficients indexed by words in base-(d+1), most significant letter first, so
word (i1, ..., in) lives at i1*(d+1)**(n-1) + ... + in. Every level may carry
leading batch axes, shape (..., (d+1)**n); all products broadcast over them.
"""

import itertools
from functools import lru_cache
from typing import Callable, Dict, Iterator, List, Sequence, Tuple

import numpy as np
from scipy import sparse

from config.settings import COEFFICIENT_BUDGET
from shared.errors import AlphabetMismatchError, BudgetExceededError, DomainError

Word = Tuple[int, ...]


def storage_size(width: int, order: int) -> int:
    """Number of coefficients of one unbatched tensor: sum of width**n for n <= order."""
    return sum(width**n for n in range(order + 1))


def check_budget(width: int, order: int):
    if width < 1 or order < 0:
        raise DomainError(f"Invalid alphabet size {width} or order {order}")

    size = storage_size(width, order)
    if size > COEFFICIENT_BUDGET:
        raise BudgetExceededError(
            f"Order {order} over {width} letters needs {size} coefficients, "
            f"budget is {COEFFICIENT_BUDGET}"
        )


def word_index(word: Sequence[int], width: int) -> int:
    """Position of a word inside its level."""
    index = 0
    for letter in word:
        if not 0 <= letter < width:
            raise DomainError(f"Letter {letter} outside alphabet of size {width}")
        index = index * width + int(letter)
    return index


def index_word(index: int, level: int, width: int) -> Word:
    """Inverse of word_index for a given level."""
    letters = []
    for _ in range(level):
        index, letter = divmod(index, width)
        letters.append(letter)
    return tuple(reversed(letters))


def level_digits(width: int, level: int) -> np.ndarray:
    """All words of a level as an integer array of shape (width**level, level)."""
    index = np.arange(width**level)
    powers = width ** np.arange(level - 1, -1, -1)
    return (index[:, None] // powers[None, :]) % width


def words(width: int, order: int) -> Iterator[Word]:
    """Every word up to `order`, level by level, in index order."""
    for n in range(order + 1):
        for word in itertools.product(range(width), repeat=n):
            yield word


class TensorSeq:
    """
    Truncated element of the tensor algebra. Values are treated as immutable:
    every operation returns a new TensorSeq.
    """

    __slots__ = ("width", "order", "levels")

    def __init__(self, width: int, order: int, levels: Sequence[np.ndarray]):
        check_budget(width, order)
        if len(levels) != order + 1:
            raise DomainError(f"Expected {order + 1} levels, got {len(levels)}")

        self.width = int(width)
        self.order = int(order)
        self.levels: List[np.ndarray] = [np.asarray(level) for level in levels]

        for n, level in enumerate(self.levels):
            if level.shape[-1:] != (width**n,):
                raise DomainError(
                    f"Level {n} must end with axis {width**n}, got shape {level.shape}"
                )

    # Construction

    @classmethod
    def zeros(cls, width: int, order: int, batch_shape: Tuple[int, ...] = (), dtype=float):
        check_budget(width, order)
        return cls(
            width,
            order,
            [np.zeros(tuple(batch_shape) + (width**n,), dtype=dtype) for n in range(order + 1)],
        )

    @classmethod
    def unit(cls, width: int, order: int, batch_shape: Tuple[int, ...] = (), dtype=float):
        """The empty word with coefficient 1."""
        result = cls.zeros(width, order, batch_shape, dtype)
        result.levels[0][..., 0] = 1
        return result

    @classmethod
    def letter(cls, width: int, order: int, letter: int, scale: complex | float = 1.0):
        return cls.from_words(width, order, {(letter,): scale})

    @classmethod
    def from_words(cls, width: int, order: int, coefficients: Dict[Sequence[int], complex | float]):
        """Builds an unbatched tensor from a {word: value} mapping. Words above `order` are dropped."""
        dtype = complex if any(isinstance(v, complex) for v in coefficients.values()) else float
        result = cls.zeros(width, order, dtype=dtype)
        for word, value in coefficients.items():
            word = tuple(word)
            if len(word) > order:
                continue
            result.levels[len(word)][word_index(word, width)] += value
        return result

    @classmethod
    def from_flat(cls, width: int, order: int, flat: np.ndarray):
        """Inverse of to_flat: splits the last axis into levels."""
        flat = np.asarray(flat)
        sizes = [width**n for n in range(order + 1)]
        if flat.shape[-1] != sum(sizes):
            raise DomainError(f"Flat array of length {flat.shape[-1]} does not match order {order}")
        offsets = np.cumsum([0] + sizes)
        return cls(width, order, [flat[..., offsets[n]:offsets[n + 1]] for n in range(order + 1)])

    # Inspection

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.levels[0].shape[:-1]

    @property
    def dtype(self):
        return np.result_type(*self.levels)

    def coefficient(self, word: Sequence[int]):
        """Coefficient of a word; zero for words longer than the truncation."""
        word = tuple(word)
        if len(word) > self.order:
            return np.zeros(self.batch_shape, dtype=self.dtype)[()]
        return self.levels[len(word)][..., word_index(word, self.width)]

    def items(self) -> Iterator[Tuple[Word, complex | float]]:
        """(word, value) pairs in index order. Only for unbatched tensors."""
        if self.batch_shape:
            raise DomainError("items() needs an unbatched tensor")
        for n, level in enumerate(self.levels):
            for index, value in enumerate(level):
                yield index_word(index, n, self.width), value.item()

    def to_flat(self) -> np.ndarray:
        return np.concatenate(self.levels, axis=-1)

    def map_levels(self, fn: Callable[[np.ndarray], np.ndarray]) -> "TensorSeq":
        return TensorSeq(self.width, self.order, [fn(level) for level in self.levels])

    def batch_item(self, index) -> "TensorSeq":
        return self.map_levels(lambda level: level[index])

    def with_order(self, order: int) -> "TensorSeq":
        """Truncates to, or zero-pads up to, another order."""
        if order <= self.order:
            return TensorSeq(self.width, order, self.levels[: order + 1])
        extra = [
            np.zeros(self.batch_shape + (self.width**n,), dtype=self.dtype)
            for n in range(self.order + 1, order + 1)
        ]
        return TensorSeq(self.width, order, self.levels + extra)

    def astype(self, dtype) -> "TensorSeq":
        return self.map_levels(lambda level: level.astype(dtype))

    def allclose(self, other: "TensorSeq", atol: float = 1e-12, rtol: float = 0.0) -> bool:
        _check_alphabet(self, other)
        order = max(self.order, other.order)
        left, right = self.with_order(order), other.with_order(order)
        return all(
            np.allclose(a, b, atol=atol, rtol=rtol) for a, b in zip(left.levels, right.levels)
        )

    # Linear structure

    def __add__(self, other: "TensorSeq") -> "TensorSeq":
        _check_alphabet(self, other)
        order = min(self.order, other.order)
        return TensorSeq(
            self.width, order, [self.levels[n] + other.levels[n] for n in range(order + 1)]
        )

    def __sub__(self, other: "TensorSeq") -> "TensorSeq":
        return self + (-other)

    def __neg__(self) -> "TensorSeq":
        return self.map_levels(np.negative)

    def __mul__(self, scalar) -> "TensorSeq":
        """Scalar multiplication; an array scalar multiplies batch-wise."""
        scalar = np.asarray(scalar)
        return self.map_levels(lambda level: level * scalar[..., None])

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "TensorSeq":
        return self * (1.0 / np.asarray(scalar))

    def __repr__(self) -> str:
        return f"TensorSeq(width={self.width}, order={self.order}, batch={self.batch_shape})"


def _check_alphabet(a: TensorSeq, b: TensorSeq):
    if a.width != b.width:
        raise AlphabetMismatchError(f"Alphabet sizes differ: {a.width} vs {b.width}")


def level_outer(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    term = x[..., :, None] * y[..., None, :]
    return term.reshape(term.shape[:-2] + (-1,))


def tensor_product(a: TensorSeq, b: TensorSeq) -> TensorSeq:
    """Concatenation product, truncated at the smaller order."""
    _check_alphabet(a, b)
    order = min(a.order, b.order)

    levels = []
    for n in range(order + 1):
        level = level_outer(a.levels[0], b.levels[n])
        for k in range(1, n + 1):
            level = level + level_outer(a.levels[k], b.levels[n - k])
        levels.append(level)

    return TensorSeq(a.width, order, levels)


@lru_cache(maxsize=None)
def _shuffle_plan(width: int, p: int, q: int) -> sparse.csr_matrix:
    """
    Sparse map from the outer product of a level-p and a level-q array onto
    level p+q. Each choice of positions for the left word's letters is one
    interleaving; coincident targets add up, which gives the multiplicities.
    """
    n = p + q
    left, right = level_digits(width, p), level_digits(width, q)
    powers = width ** np.arange(n - 1, -1, -1)
    pairs = np.arange(width ** (p + q)).reshape(width**p, width**q)

    rows, cols = [], []
    for positions in itertools.combinations(range(n), p):
        mask = np.zeros(n, dtype=bool)
        mask[list(positions)] = True

        digits = np.empty((width**p, width**q, n), dtype=np.int64)
        digits[:, :, mask] = left[:, None, :]
        digits[:, :, ~mask] = right[None, :, :]

        rows.append((digits @ powers).ravel())
        cols.append(pairs.ravel())

    rows, cols = np.concatenate(rows), np.concatenate(cols)
    plan = sparse.coo_matrix(
        (np.ones(rows.size), (rows, cols)), shape=(width**n, width ** (p + q))
    )
    return plan.tocsr()


def _shuffle_levels(x: np.ndarray, y: np.ndarray, p: int, q: int, width: int) -> np.ndarray:
    outer = level_outer(x, y)
    batch = outer.shape[:-1]
    flat = outer.reshape(-1, outer.shape[-1])
    result = np.asarray(_shuffle_plan(width, p, q).dot(flat.T)).T
    return result.reshape(batch + (width ** (p + q),))


def shuffle(a: TensorSeq, b: TensorSeq) -> TensorSeq:
    """Shuffle product, truncated at the smaller order."""
    _check_alphabet(a, b)
    order = min(a.order, b.order)

    levels = []
    for n in range(order + 1):
        level = None
        for p in range(n + 1):
            x, y = a.levels[p], b.levels[n - p]
            if not (np.any(x) and np.any(y)):
                continue
            term = _shuffle_levels(x, y, p, n - p, a.width)
            level = term if level is None else level + term
        if level is None:
            batch = np.broadcast_shapes(a.batch_shape, b.batch_shape)
            level = np.zeros(batch + (a.width**n,), dtype=np.result_type(a.dtype, b.dtype))
        levels.append(level)

    return TensorSeq(a.width, order, levels)


def shuffle_words(u: Sequence[int], w: Sequence[int]) -> Iterator[Word]:
    """
    Given two words, yields every interleaving of them, with multiplicity.
    """
    u, w = tuple(u), tuple(w)
    if len(u) == 0:
        yield w
    elif len(w) == 0:
        yield u
    else:
        for tail in shuffle_words(u[:-1], w):
            yield tail + (u[-1],)
        for tail in shuffle_words(u, w[:-1]):
            yield tail + (w[-1],)


def project(a: TensorSeq, suffix: Sequence[int]) -> TensorSeq:
    """(a|_u)^v = a^{vu}. Keeps the order; the top |u| levels come out zero."""
    suffix = tuple(suffix)
    m = len(suffix)
    column = word_index(suffix, a.width)

    levels = []
    for n in range(a.order + 1):
        if n + m <= a.order:
            source = a.levels[n + m]
            source = source.reshape(source.shape[:-1] + (a.width**n, a.width**m))
            levels.append(source[..., column])
        else:
            levels.append(np.zeros(a.batch_shape + (a.width**n,), dtype=a.dtype))

    return TensorSeq(a.width, a.order, levels)


def bracket(a: TensorSeq, b: TensorSeq):
    """Bilinear pairing over the shared truncation (no complex conjugation)."""
    _check_alphabet(a, b)
    order = min(a.order, b.order)
    total = sum(np.sum(a.levels[n] * b.levels[n], axis=-1) for n in range(order + 1))
    return total[()]


def norm(a: TensorSeq, q: int = 2):
    """l1 or l2 norm over all coefficients."""
    if q not in (1, 2):
        raise DomainError(f"Only q in (1, 2) is supported, got {q}")

    total = sum(np.sum(np.abs(level) ** q, axis=-1) for level in a.levels)
    return (total ** (1.0 / q))[()]


def level_norms(a: TensorSeq, q: int = 2) -> np.ndarray:
    """Per-level norms, last axis indexed by level."""
    if q not in (1, 2):
        raise DomainError(f"Only q in (1, 2) is supported, got {q}")
    return np.stack(
        [np.sum(np.abs(level) ** q, axis=-1) ** (1.0 / q) for level in a.levels], axis=-1
    )


def degree(a: TensorSeq) -> int:
    """Highest level holding a nonzero coefficient, -1 for the zero tensor."""
    for n in range(a.order, -1, -1):
        if np.any(a.levels[n]):
            return n
    return -1


def tensor_exp(a: TensorSeq) -> TensorSeq:
    """Truncated exponential sum_k a^k / k!, defined for a with no empty-word part."""
    if np.any(a.levels[0]):
        raise DomainError("tensor_exp needs a tensor with zero empty-word coefficient")

    result = TensorSeq.unit(a.width, a.order, a.batch_shape, a.dtype)
    term = result
    for k in range(1, a.order + 1):
        term = tensor_product(term, a) / k
        result = result + term
    return result


def vector_tensor(x, order: int) -> TensorSeq:
    """Embeds a vector (..., width) as a level-one tensor."""
    x = np.asarray(x)
    width = x.shape[-1]
    result = TensorSeq.zeros(width, order, x.shape[:-1], x.dtype if np.iscomplexobj(x) else float)
    if order >= 1:
        result.levels[1][...] = x
    return result
