import csv
import io
from pathlib import Path
from typing import Iterable, Iterator

from .exception import DataError
from .files import atomic_write_text, read_text


def read_csv_rows(
    path: str | Path, required: Iterable[str], what: str = "CSV file"
) -> Iterator[tuple[int, dict]]:
    """CSV Reader

    Args:
        path (str | Path): file to read
        required (Iterable[str]): header columns that must be present
        what (str): name used in error messages

    Raises:
        DataError: if the file is missing, unreadable or lacks a required column

    Yields:
        tuple[int, dict]: 1-based data row number and the raw row
    """
    content = read_text(path, what)

    # Use DictReader as it allows to directly map CSV headers to dictionary keys
    csv_reader = csv.DictReader(io.StringIO(content, newline=""))

    header = csv_reader.fieldnames or []
    missing = [column for column in required if column not in header]
    if missing:
        raise DataError(f"{what} {path} is missing required column(s): {', '.join(missing)}")

    for number, row in enumerate(csv_reader, start=1):
        yield number, {k: v.strip() if isinstance(v, str) else v for k, v in row.items()}


def to_csv_text(columns: list[str], rows: Iterable[Iterable[object]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)

    for row in rows:
        writer.writerow([format_cell(value) for value in row])

    return buffer.getvalue()


def write_csv(path: str | Path, columns: list[str], rows: Iterable[Iterable[object]]) -> Path:
    return atomic_write_text(path, to_csv_text(columns, rows))


def format_cell(value: object) -> object:
    # repr keeps floats round-trippable and platform independent
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return value
