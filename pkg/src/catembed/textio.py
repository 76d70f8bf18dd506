"""Line-oriented UTF-8 readers used by every file format in the package."""

from __future__ import annotations

import hashlib
import os
from typing import Iterator

from .errors import MissingInputError, ParseError


def iter_lines(path: str | os.PathLike) -> Iterator[tuple[int, str]]:
    """Yield ``(line_number, text)`` for non-blank, non-comment lines.

    Lines are decoded one at a time so a bad byte sequence is reported with
    the line it occurs on.
    """
    try:
        fh = open(path, "rb")
    except FileNotFoundError as exc:
        raise MissingInputError(f"no such file: {path}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ParseError(f"invalid UTF-8 ({exc.reason})", path, lineno) from exc
            text = text.rstrip("\r\n")
            stripped = text.strip()
            if not stripped or stripped.startswith("#"):
                continue
            yield lineno, text


def split_fields(text: str, n: int, path, lineno: int, min_fields: int | None = None) -> list[str]:
    fields = text.split("\t")
    lo = n if min_fields is None else min_fields
    if not lo <= len(fields) <= n or any(not f.strip() for f in fields[:lo]):
        raise ParseError(f"expected {n} tab-separated fields, got {len(fields)}", path, lineno)
    return [f.strip() for f in fields]


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_key_values(path: str | os.PathLike) -> dict[str, str]:
    """Parse a ``key=value`` file (comments with ``#`` allowed)."""
    out = {}
    for lineno, text in iter_lines(path):
        key, sep, value = text.partition("=")
        if not sep or not key.strip():
            raise ParseError("expected key=value", path, lineno)
        out[key.strip()] = value.strip()
    return out


def write_key_values(path: str | os.PathLike, items: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in items.items():
            fh.write(f"{key}={value}\n")
