"""Line-oriented key/value files with section headers, plus canonical digests.

All ``.acx``-family files share this surface syntax::

    # comment
    [section.name]
    key = value

Values run to the end of the line and are stripped. Keys are unique within a
section, section names are unique within a file. List-valued keys are stored
as JSON arrays; the owning module decides which keys are lists.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable

from .errors import ParseError

_SECTION_RE = re.compile(r"^\[([A-Za-z0-9_.:\-]+)\]$")
_KEY_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


@dataclass
class Section:
    name: str
    line: int
    entries: dict[str, str] = field(default_factory=dict)
    lines: dict[str, tuple[int, int]] = field(default_factory=dict)  # key -> (line, value column)

    def where(self, key: str) -> tuple[int | None, int | None]:
        return self.lines.get(key, (self.line, None))


@dataclass
class Document:
    sections: list[Section] = field(default_factory=list)

    def get(self, name: str) -> Section | None:
        for s in self.sections:
            if s.name == name:
                return s
        return None

    def with_prefix(self, prefix: str) -> list[Section]:
        return [s for s in self.sections if s.name.startswith(prefix)]


def parse(data: bytes | str) -> Document:
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"not valid UTF-8 ({exc.reason})") from None
    else:
        text = data
    if text.startswith("﻿"):
        raise ParseError("byte-order mark not allowed", 1, 1)
    doc = Document()
    current: Section | None = None
    for lineno, raw in enumerate(text.split("\n"), start=1):
        if "\r" in raw:
            raise ParseError("carriage return found; files must use LF line endings", lineno, raw.index("\r") + 1)
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            m = _SECTION_RE.match(line)
            if not m:
                raise ParseError(f"malformed section header {line!r}", lineno, raw.index("[") + 1)
            if doc.get(m.group(1)) is not None:
                raise ParseError(f"duplicate section [{m.group(1)}]", lineno, raw.index("[") + 1)
            current = Section(m.group(1), lineno)
            doc.sections.append(current)
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", lineno, len(raw) - len(raw.lstrip()) + 1)
        if current is None:
            raise ParseError("key outside of any section", lineno, 1)
        key, _, value = raw.partition("=")
        key = key.strip()
        if not _KEY_RE.match(key):
            raise ParseError(f"invalid key {key!r}", lineno, len(raw) - len(raw.lstrip()) + 1)
        if key in current.entries:
            raise ParseError(f"duplicate key {key!r} in [{current.name}]", lineno, raw.index(key) + 1)
        vcol = raw.index("=") + 2 + (len(value) - len(value.lstrip()))
        current.entries[key] = value.strip()
        current.lines[key] = (lineno, vcol)
    return doc


def render(sections: Iterable[tuple[str, Iterable[tuple[str, str]]]]) -> bytes:
    """Render ``(name, [(key, value), ...])`` pairs in the order given."""
    chunks = []
    for name, entries in sections:
        lines = [f"[{name}]"]
        for key, value in entries:
            if "\n" in value or "\r" in value:
                raise ValueError(f"value for {key!r} contains a line break")
            lines.append(f"{key} = {value}".rstrip())
        chunks.append("\n".join(lines))
    return ("\n\n".join(chunks) + "\n").encode("utf-8")


def format_number(x: float | int) -> str:
    """Shortest round-trip decimal form."""
    if isinstance(x, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(x, int):
        return str(x)
    if not math.isfinite(x):
        raise ValueError(f"non-finite number {x!r}")
    return repr(float(x))


def parse_number(text: str) -> float | int:
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_bool(text: str, where: tuple[int | None, int | None] = (None, None)) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ParseError(f"expected true|false, got {text!r}", *where)


def parse_list(text: str, where: tuple[int | None, int | None] = (None, None)) -> list[str]:
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"expected a JSON array of strings: {exc.msg}", *where) from None
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ParseError("expected a JSON array of strings", *where)
    return value


def format_list(items: Iterable[str]) -> str:
    return json.dumps(list(items), ensure_ascii=False)


def canonical_bytes(obj: Any) -> bytes:
    """UTF-8 JSON with sorted keys, no insignificant whitespace, LF terminated.

    Python's float repr is already the shortest round-trip form.
    """
    return (json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False) + "\n").encode(
        "utf-8"
    )


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest(obj: Any) -> str:
    return sha256_hex(canonical_bytes(obj))
