from typing import Optional

from efmsig.core.rates import Rates
from efmsig.core.signature import PiecewisePath
from efmsig.core.tensor import TensorSeq
from shared.errors import AlphabetMismatchError, DomainError
from shared.protocol import (read_coefficients, read_path_csv,
                             write_coefficients, write_path_csv)
from utils.helpers import load_json, save_json


def save_tensor(path: str, tensor: TensorSeq):
    """Writes every coefficient, zeros included, in word index order."""
    write_coefficients(path, tensor.items())


def load_tensor(path: str, width: Optional[int] = None, order: Optional[int] = None) -> TensorSeq:
    """
    Reads a coefficient CSV. Missing words are zero; the alphabet size and order
    default to the smallest ones covering the file.
    """
    rows = read_coefficients(path)
    if not rows:
        raise DomainError(f"{path} holds no coefficients")

    needed_width = 1 + max((max(word) for word, _ in rows if word), default=0)
    needed_order = max(len(word) for word, _ in rows)

    width = needed_width if width is None else width
    if needed_width > width:
        raise AlphabetMismatchError(f"{path} uses {needed_width} letters, expected {width}")
    order = needed_order if order is None else order

    return TensorSeq.from_words(width, order, dict(rows))


def save_path(path: str, piecewise: PiecewisePath):
    write_path_csv(path, piecewise.times, piecewise.values)


def load_path(path: str, time_augmented: bool = False) -> PiecewisePath:
    times, values = read_path_csv(path)
    return PiecewisePath(times, values, time_augmented)


def save_rates(path: str, rates: Rates):
    save_json(path, rates.to_json())


def load_rates(path: str) -> Optional[Rates]:
    data = load_json(path)
    return None if data is None else Rates.from_json(data)
