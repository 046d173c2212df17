"""
JSON-lines reading and writing.

One pydantic record per line. Parse failures are reported as
RecordFormatError naming the file, the 1-based line number and the dotted
location of the offending field.
"""

from contextlib import contextmanager
from typing import IO, Iterable, Iterator, List, Optional, Type, TypeVar, Union
import logging
import sys

from pydantic import BaseModel, ValidationError

from app.back.exceptions import RecordFormatError
from app.back.schemas import DetectionRecord

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)

STDIO = "-"


def _field_path(error: ValidationError) -> Optional[str]:
    first = error.errors()[0]
    loc = ".".join(str(part) for part in first.get("loc", ()))
    return loc or None


def parse_lines(lines: Iterable[Union[str, bytes]], model: Type[M], path: str = "<input>") -> List[M]:
    """
    Parses JSON-lines text into records.

    Lines may be text or raw bytes; bytes are decoded as UTF-8 one line at a
    time. Blank lines are skipped but still counted for line numbers.

    Raises:
        RecordFormatError: On the first malformed line, including invalid UTF-8.
    """
    records: List[M] = []
    for number, line in enumerate(lines, start=1):
        if isinstance(line, bytes):
            try:
                line = line.decode("utf-8")
            except UnicodeDecodeError as e:
                raise RecordFormatError(
                    f"invalid UTF-8 at byte {e.start}", path=path, line=number
                ) from e
        if not line.strip():
            continue
        try:
            records.append(model.model_validate_json(line))
        except ValidationError as e:
            first = e.errors()[0]
            raise RecordFormatError(first["msg"], path=path, line=number, field=_field_path(e)) from e
    return records


@contextmanager
def open_input(path: str) -> Iterator[IO[bytes]]:
    """Opens ``path`` for binary reading; ``-`` is stdin. Lines are decoded by :func:`parse_lines`."""
    if path == STDIO:
        yield sys.stdin.buffer
    else:
        with open(path, "rb") as handle:
            yield handle


@contextmanager
def open_output(path: Optional[str]) -> Iterator[IO[str]]:
    """Opens ``path`` for writing as UTF-8; ``None`` or ``-`` is stdout."""
    if path is None or path == STDIO:
        yield sys.stdout
        sys.stdout.flush()
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            yield handle


def read_jsonl(path: str, model: Type[M]) -> List[M]:
    """Reads every record of a JSON-lines file (``-`` for stdin)."""
    with open_input(path) as handle:
        records = parse_lines(handle, model, path="<stdin>" if path == STDIO else path)
    logger.debug(f"Read {len(records)} {model.__name__} records from {path}")
    return records


def dump_lines(records: Iterable[BaseModel]) -> str:
    """Serialises records as JSON-lines text, one line per record."""
    return "".join(record.model_dump_json() + "\n" for record in records)


def write_jsonl(path: Optional[str], records: Iterable[BaseModel]) -> None:
    """Writes records to ``path`` (stdout for ``None`` or ``-``) in input order."""
    with open_output(path) as handle:
        handle.write(dump_lines(records))


def check_embedding_dims(records: List[DetectionRecord], path: str = "<input>") -> Optional[int]:
    """
    Verifies that every embedding in a detections file has the same length m.

    Returns:
        int | None: m, or None when no detection carries an embedding.

    Raises:
        RecordFormatError: Naming the first line whose embedding length differs.
    """
    m: Optional[int] = None
    for number, record in enumerate(records, start=1):
        for j, box in enumerate(record.boxes):
            if box.embedding is None:
                continue
            if m is None:
                m = len(box.embedding)
            elif len(box.embedding) != m:
                raise RecordFormatError(
                    f"embedding length {len(box.embedding)} differs from {m} used earlier in the file",
                    path=path,
                    line=number,
                    field=f"boxes.{j}.embedding",
                )
    return m
