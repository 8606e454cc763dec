import hashlib
import json
from typing import List

from config.logging import core_logger as logger
from shared.errors import DomainError


def parse_lambda(text: str, width: int | None = None) -> List[float]:
    """
    Parses a comma-separated list of rates such as "1,0.5".
    Every rate must be positive; when `width` is given the arity must match it.
    """
    try:
        rates = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise DomainError(f"Invalid rate list '{text}': {e}") from e

    if not rates:
        raise DomainError("Rate list is empty.")

    if any(not rate > 0 for rate in rates):
        raise DomainError(f"Rates must be positive, got {rates}")

    if width is not None and len(rates) != width:
        raise DomainError(f"Expected {width} rates, got {len(rates)} in '{text}'")

    return rates


def parse_float_list(text: str) -> List[float]:
    """Parses "1e-6,1e-3" style lists."""
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise DomainError(f"Invalid number list '{text}': {e}") from e


def file_digest(file_path: str) -> str:
    """Returns the sha256 hex digest of a file, read in chunks."""
    digest = hashlib.sha256()
    with open(file_path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def load_json(file_path: str):
    """
    Loads and returns the contents of a JSON file.
    Returns the parsed data or None on failure, logging errors as needed.
    """
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            data = json.load(f)
            return data
    except FileNotFoundError:
        logger.error(f"File not found: {file_path}")
    except json.JSONDecodeError:
        logger.error(f"Invalid JSON content in {file_path}")
    except Exception as e:
        logger.error(f"Error loading JSON file: {e}")

    return None


def save_json(file_path: str, data: dict | list):
    """
    Saves a Python object to a specified file as formatted JSON.
    Raises OSError if the file cannot be written.
    """
    try:
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=4)
            f.write("\n")
    except OSError as e:
        logger.error(f"Failed to save JSON: {e}")
        raise
