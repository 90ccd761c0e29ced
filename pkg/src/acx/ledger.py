"""Append-only, hash-chained record of every lock, audit, estimate and note.

File layout (``*.acxl``)::

    acxl-genesis-v1
    {"index":1,"kind":"Audit",...,"prev_digest":"<sha256 of previous line>"}\tdigest=<sha256 of the JSON text>
    ...

Line 0 is the fixed genesis constant; its digest is the SHA-256 of the constant
itself. Each later line is a canonical JSON object followed by a tab and the
digest of that JSON text, so any byte change breaks either the line's own
digest or the next line's ``prev_digest``.
"""

from __future__ import annotations

import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping

from . import kvfile
from .errors import ChainMismatch, ConcurrentWriter, GateRefused

GENESIS = "acxl-genesis-v1"
GENESIS_DIGEST = kvfile.sha256_hex(GENESIS.encode("ascii"))
KINDS = ("Lock", "Estimate", "Audit", "Note")
CONFIRMATORY, EXPLORATORY = "confirmatory", "exploratory"
_SEP = "\tdigest="


@dataclass(frozen=True)
class LedgerEntry:
    index: int
    kind: str
    timestamp: str
    payload: Mapping[str, Any]
    payload_digest: str
    taint: str
    prev_digest: str

    def body(self) -> dict:
        return {
            "index": self.index,
            "kind": self.kind,
            "timestamp": self.timestamp,
            "payload": self.payload,
            "payload_digest": self.payload_digest,
            "taint": self.taint,
            "prev_digest": self.prev_digest,
        }

    def text(self) -> str:
        return kvfile.canonical_bytes(self.body()).decode("utf-8").rstrip("\n")

    @property
    def digest(self) -> str:
        return kvfile.sha256_hex(self.text().encode("utf-8"))

    def line(self) -> str:
        return f"{self.text()}{_SEP}{self.digest}\n"


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    entries: int  # verified entries after genesis
    first_broken: int | None = None
    detail: str = ""


def utc_now() -> str:
    """Current UTC time, or ``SOURCE_DATE_EPOCH`` when set (reproducible builds)."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def make_entry(index: int, kind: str, payload: Mapping[str, Any], taint: str, prev_digest: str, timestamp: str | None = None) -> LedgerEntry:
    if kind not in KINDS:
        raise ValueError(f"unknown entry kind {kind!r}")
    if taint not in (CONFIRMATORY, EXPLORATORY):
        raise ValueError(f"unknown taint {taint!r}")
    payload = json.loads(kvfile.canonical_bytes(payload))  # normalize to plain JSON values
    return LedgerEntry(index, kind, timestamp or utc_now(), payload, kvfile.digest(payload), taint, prev_digest)


def _parse_line(line: str, index: int, prev: str) -> tuple[LedgerEntry | None, str]:
    text, sep, digest = line.partition(_SEP)
    if not sep:
        return None, "missing digest field"
    try:
        body = json.loads(text)
    except json.JSONDecodeError:
        return None, "entry is not valid JSON"
    if not isinstance(body, dict) or set(body) != {"index", "kind", "timestamp", "payload", "payload_digest", "taint", "prev_digest"}:
        return None, "entry has the wrong fields"
    try:
        entry = LedgerEntry(**body)
    except TypeError:
        return None, "entry has the wrong fields"
    if entry.text() != text:
        return None, "entry text is not in canonical form"
    if kvfile.sha256_hex(text.encode("utf-8")) != digest:
        return None, "entry digest does not match its content"
    if entry.index != index:
        return None, f"expected index {index}, found {entry.index!r}"
    if entry.prev_digest != prev:
        return None, "prev_digest does not match the previous entry"
    if not isinstance(entry.payload, dict) or kvfile.digest(entry.payload) != entry.payload_digest:
        return None, "payload digest mismatch"
    if entry.kind not in KINDS or entry.taint not in (CONFIRMATORY, EXPLORATORY):
        return None, "unknown kind or taint"
    return entry, ""


def scan(data: bytes) -> tuple[list[LedgerEntry], VerifyResult]:
    """Parse and verify in one O(n) pass; entries are those before the first break."""
    entries: list[LedgerEntry] = []
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as err:
        broken = data[: err.start].count(b"\n")
        return entries, VerifyResult(False, 0, broken, "invalid UTF-8")
    lines = text.split("\n")
    if not lines or lines[0] != GENESIS or len(lines) < 2:
        return entries, VerifyResult(False, 0, 0, "genesis line missing or altered")
    trailing = lines[-1]
    body = lines[1:-1]
    prev = GENESIS_DIGEST
    for i, line in enumerate(body, start=1):
        entry, problem = _parse_line(line, i, prev)
        if entry is None:
            return entries, VerifyResult(False, len(entries), i, problem)
        entries.append(entry)
        prev = entry.digest
    if trailing != "":
        return entries, VerifyResult(False, len(entries), len(body) + 1, "truncated or unterminated final entry")
    return entries, VerifyResult(True, len(entries))


def verify(data: bytes) -> VerifyResult:
    return scan(data)[1]


class Ledger:
    """A ledger file with a single-writer discipline enforced by an exclusive lock file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.lock_path = self.path.with_name(self.path.name + ".lock")

    @classmethod
    def create(cls, path: str | Path) -> "Ledger":
        led = cls(path)
        if not led.path.exists():
            led.path.parent.mkdir(parents=True, exist_ok=True)
            _atomic_write(led.path, (GENESIS + "\n").encode("ascii"))
        return led

    def read_bytes(self) -> bytes:
        return self.path.read_bytes()

    def verify(self) -> VerifyResult:
        return verify(self.read_bytes())

    def entries(self) -> list[LedgerEntry]:
        entries, res = scan(self.read_bytes())
        if not res.ok:
            raise ChainMismatch(f"ledger {self.path} broken at entry {res.first_broken}: {res.detail}")
        return entries

    @contextmanager
    def writer(self) -> Iterator[None]:
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
        except FileExistsError:
            raise ConcurrentWriter(f"another writer holds {self.lock_path}") from None
        try:
            os.write(fd, str(os.getpid()).encode("ascii"))
            os.close(fd)
            yield
        finally:
            try:
                os.unlink(self.lock_path)
            except FileNotFoundError:
                pass

    def append_entry(self, entry: LedgerEntry) -> LedgerEntry:
        """Persist a pre-built entry; it must chain from the verified tip."""
        with self.writer():
            data = self.read_bytes()
            entries, res = scan(data)
            if not res.ok:
                raise ChainMismatch(f"ledger broken at entry {res.first_broken}: {res.detail}")
            tip = entries[-1].digest if entries else GENESIS_DIGEST
            if entry.index != len(entries) + 1 or entry.prev_digest != tip:
                raise ChainMismatch(f"entry does not chain from tip (index {len(entries)})")
            _atomic_write(self.path, data + entry.line().encode("utf-8"))
        return entry

    def append(self, kind: str, payload: Mapping[str, Any], taint: str = EXPLORATORY, timestamp: str | None = None) -> LedgerEntry:
        entries = self.entries()
        tip = entries[-1].digest if entries else GENESIS_DIGEST
        return self.append_entry(make_entry(len(entries) + 1, kind, payload, taint, tip, timestamp))


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


# --- typed records -------------------------------------------------------------------


def lock_entry(entries: list[LedgerEntry]) -> LedgerEntry | None:
    for e in entries:
        if e.kind == "Lock":
            return e
    return None


def record_audit(led: Ledger, audit_digest: str, gate: str) -> LedgerEntry:
    return led.append("Audit", {"audit_digest": audit_digest, "gate": gate}, EXPLORATORY)


def record_note(led: Ledger, text: str) -> LedgerEntry:
    return led.append("Note", {"text": text}, EXPLORATORY)


def record_estimate(led: Ledger, summary: Mapping[str, Any], confirmatory: bool, label: str = "") -> LedgerEntry:
    """Append an estimate summary (see ``EstimateResult.summary``).

    A confirmatory record must follow a Lock entry and carry that lock's
    primary specification; it stores the lock entry's digest as its link.
    """
    payload = dict(summary)
    payload["label"] = label
    if confirmatory:
        lock = lock_entry(led.entries())
        if lock is None:
            raise GateRefused("confirmatory estimation requires a locked commitment")
        if lock.payload.get("primary_fingerprint") != summary.get("fingerprint"):
            raise GateRefused("confirmatory estimation must use the locked primary specification")
        payload["lock_entry_digest"] = lock.digest
        return led.append("Estimate", payload, CONFIRMATORY)
    return led.append("Estimate", payload, EXPLORATORY)


def order_problems(entries: list[LedgerEntry]) -> list[str]:
    """Confirmatory estimates that do not follow, and reference, the lock."""
    problems = []
    lock = lock_entry(entries)
    for e in entries:
        if e.kind != "Estimate" or e.taint != CONFIRMATORY:
            continue
        if lock is None or e.index < lock.index:
            problems.append(f"confirmatory estimate {e.index} precedes any lock")
        elif e.payload.get("lock_entry_digest") != lock.digest:
            problems.append(f"confirmatory estimate {e.index} does not reference the lock")
        elif e.payload.get("fingerprint") != lock.payload.get("primary_fingerprint"):
            problems.append(f"confirmatory estimate {e.index} is not the locked primary")
    return problems


# --- multiplicity ----------------------------------------------------------------------


@dataclass(frozen=True)
class ChronologyItem:
    index: int
    fingerprint: str
    p_value: float
    effect: float
    taint: str
    label: str
    spec_text: str


@dataclass(frozen=True)
class MultiplicityReport:
    total_specs: int
    distinct_specs: int
    confirmatory: int
    exploratory: int
    selection_flag: bool
    chronology: tuple[ChronologyItem, ...] = field(default_factory=tuple)
    reported_fingerprint: str | None = None


def multiplicity(entries: list[LedgerEntry], reported_fingerprint: str | None = None) -> MultiplicityReport:
    """Count every estimate in insertion order; no entry is ever filtered out.

    ``selection_flag`` is raised when more than one distinct specification was
    run and the reported one (default: the most recent) is not the locked
    primary, or when the locked primary had already been run exploratorily
    before the lock.
    """
    estimates = [e for e in entries if e.kind == "Estimate"]
    chronology = tuple(
        ChronologyItem(
            e.index,
            e.payload.get("fingerprint", ""),
            float(e.payload.get("p_value", float("nan"))),
            float(e.payload.get("effect", float("nan"))),
            e.taint,
            e.payload.get("label", ""),
            kvfile.canonical_bytes(e.payload.get("spec", {})).decode("utf-8").rstrip("\n"),
        )
        for e in estimates
    )
    distinct = len({c.fingerprint for c in chronology})
    lock = lock_entry(entries)
    primary = lock.payload.get("primary_fingerprint") if lock else None
    if reported_fingerprint is None and chronology:
        reported_fingerprint = chronology[-1].fingerprint
    flag = distinct > 1 and reported_fingerprint != primary
    if lock is not None:
        flag = flag or any(
            c.index < lock.index and c.taint == EXPLORATORY and c.fingerprint == primary for c in chronology
        )
    return MultiplicityReport(
        total_specs=len(chronology),
        distinct_specs=distinct,
        confirmatory=sum(c.taint == CONFIRMATORY for c in chronology),
        exploratory=sum(c.taint == EXPLORATORY for c in chronology),
        selection_flag=bool(flag),
        chronology=chronology,
        reported_fingerprint=reported_fingerprint,
    )
