import csv
from dataclasses import fields, is_dataclass
from datetime import datetime
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from config.logging import cli_logger as logger

EMPTY_WORD = "e"
WORD_SEPARATOR = "-"
COEFFICIENT_HEADER = ["word", "value"]


def format_word(word: Sequence[int]) -> str:
    """Renders a word as letters joined by '-', the empty word as 'e'."""
    if len(word) == 0:
        return EMPTY_WORD
    return WORD_SEPARATOR.join(str(int(letter)) for letter in word)


def parse_word(text: str) -> Tuple[int, ...]:
    """Inverse of format_word. Raises ValueError on malformed letters."""
    text = text.strip()
    if text in (EMPTY_WORD, ""):
        return ()
    return tuple(int(letter) for letter in text.split(WORD_SEPARATOR))


def format_value(value: complex | float) -> str:
    """17 significant digits, complex values as 're+imj'."""
    if isinstance(value, complex) or np.iscomplexobj(value):
        value = complex(value)
        return f"{value.real:.17g}{value.imag:+.17g}j"
    return f"{float(value):.17g}"


def parse_value(text: str) -> complex | float:
    text = text.strip()
    if text.endswith("j"):
        return complex(text)
    return float(text)


def write_coefficients(file_path: str, rows: Iterable[Tuple[Sequence[int], complex | float]]):
    """Writes `word,value` rows in word index order as given by the caller."""
    with open(file_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(COEFFICIENT_HEADER)
        for word, value in rows:
            writer.writerow([format_word(word), format_value(value)])


def read_coefficients(file_path: str) -> List[Tuple[Tuple[int, ...], complex | float]]:
    """
    Reads a coefficient CSV back into (word, value) pairs.
    Raises OSError when the file cannot be opened and ValueError on a bad header or row.
    """
    with open(file_path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != COEFFICIENT_HEADER:
            raise ValueError(f"{file_path}: expected header 'word,value', got {header}")

        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{file_path}:{line_no}: expected 2 fields, got {len(row)}")
            rows.append((parse_word(row[0]), parse_value(row[1])))

    logger.info(f"Read {len(rows)} coefficients from {file_path}")
    return rows


def write_table(file_path: str, header: Sequence[str], columns: Sequence[np.ndarray]):
    """Numeric CSV with one column per array, 17 significant digits."""
    table = np.column_stack([np.asarray(column, dtype=float) for column in columns])
    np.savetxt(file_path, table, delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def write_path_csv(file_path: str, times: np.ndarray, values: np.ndarray):
    """Path CSV: header `t,x1,...,xd`, one sample per row."""
    values = np.asarray(values, dtype=float).reshape(len(times), -1)
    header = ["t"] + [f"x{i + 1}" for i in range(values.shape[1])]
    write_table(file_path, header, [times, values])


def read_path_csv(file_path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (times, values) with values shaped (samples, d)."""
    with open(file_path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
    if not header or header[0].strip() != "t":
        raise ValueError(f"{file_path}: path CSV must start with a 't' column")

    table = np.loadtxt(file_path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] != len(header):
        raise ValueError(f"{file_path}: {len(header)} header fields but {table.shape[1]} columns")
    return table[:, 0], table[:, 1:]


def to_jsonable(value):
    """
    Converts numpy scalars/arrays, complex numbers and report dataclasses into
    JSON friendly values. Word keys (tuples) are rendered with format_word and
    dataclass fields hidden from repr are left out.
    """
    if is_dataclass(value) and not isinstance(value, type):
        return to_jsonable({f.name: getattr(value, f.name) for f in fields(value) if f.repr})
    if isinstance(value, dict):
        return {
            format_word(k) if isinstance(k, tuple) else str(k): to_jsonable(v) for k, v in value.items()
        }
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": float(value.real), "im": float(value.imag)}
    if isinstance(value, np.generic):
        return value.item()
    return value


def build_report(kind: str, **payload) -> dict:
    """
    Constructs the JSON report emitted by a command or experiment.

    Args:
        kind (str): The command or experiment name (e.g., "ergodic").
        **payload: Result fields; numpy values are converted to plain JSON types.

    Returns:
        dict: A JSON-serializable report. Reports carry no wall-clock data so that
        equal seeds give byte-identical files; timestamps belong in the manifest.
    """
    report = {"kind": kind}
    report.update(to_jsonable(payload))
    return report


def build_manifest(command: str, flags: dict, seed: int | None, versions: dict,
                   digests: dict, wall_time: float) -> dict:
    """Constructs the run manifest written next to every command's outputs."""
    return {
        "command": command,
        "flags": to_jsonable(flags),
        "seed": seed,
        "versions": versions,
        "input_digests": digests,
        "wall_time_seconds": wall_time,
        "timestamp": datetime.now().strftime("%d %b %Y, %H:%M"),
    }
