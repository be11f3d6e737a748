"""Tab-separated run logs: fixed header, 9 significant digits, flushed per row."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

DELIM = "\t"


class LogError(OSError):
    pass


def fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, ".9g")
    return str(value)


def parse(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


class LogWriter:
    """Appends rows to a delimited file, writing the header for new files."""

    def __init__(self, path, columns: Sequence[str]):
        self.path = Path(path)
        self.columns = list(columns)
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            fresh = not self.path.exists() or self.path.stat().st_size == 0
            self._fh = open(self.path, "a", newline="", encoding="utf-8")
        except OSError as e:
            raise LogError(f"cannot open log {self.path}: {e}") from e
        if fresh:
            self._write(self.columns)

    def _write(self, cells: Iterable[str]) -> None:
        try:
            self._fh.write(DELIM.join(cells) + "\n")
            self._fh.flush()
        except OSError as e:
            raise LogError(f"write to {self.path} failed: {e}") from e

    def write(self, record: Mapping) -> None:
        missing = [c for c in self.columns if c not in record]
        if missing:
            raise ValueError(f"record lacks columns {missing}")
        self._write(fmt(record[c]) for c in self.columns)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def emit_logs(records: Sequence[Mapping], path, columns: Sequence[str] | None = None) -> Path:
    if columns is None:
        if not records:
            raise ValueError("columns are required for an empty record list")
        columns = list(records[0])
    path = Path(path)
    if path.exists():
        path.unlink()  # a table is rewritten whole, unlike a training log
    with LogWriter(path, columns) as w:
        for r in records:
            w.write(r)
    return Path(path)


def read_logs(path) -> list[dict]:
    """Parse a log back into dicts; a truncated last line is dropped."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines(keepends=True)
    if lines and not lines[-1].endswith("\n"):
        lines = lines[:-1]
    reader = csv.reader(io.StringIO("".join(lines)), delimiter=DELIM)
    rows = list(reader)
    if not rows:
        return []
    header = rows[0]
    return [dict(zip(header, map(parse, r))) for r in rows[1:] if len(r) == len(header)]
