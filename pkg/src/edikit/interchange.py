"""Simplified X12-style interchange grammar.

An interchange is a flat sequence of segments::

    ISA*<sender>*<receiver>*<YYYYMMDD>*<HHMM>*<control:9>*<ack:0|1>~
      GS*<doc type>*<group control:4>~
        ST*<txn type>*<txn control:4>~
          ...body segments...
        SE*<segments ST..SE inclusive>*<txn control>~
      GE*<transaction count>*<group control>~
    IEA*<group count>*<control>~

This grammar borrows the X12 envelope shape but makes no claim of X12
conformance.  See docs/interchange-grammar.md.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Iterator

from .errors import EdiError

ENVELOPE_TAGS = frozenset({"ISA", "IEA", "GS", "GE", "ST", "SE"})
KNOWN_BODY_TAGS = frozenset({"BEG", "IT1", "CTT", "REF", "ACK", "N1", "DTM", "PID", "BIG", "TDS"})
CONTROL_LIMIT = 10**9 - 1

_TAG_RE = re.compile(r"[A-Z][A-Z0-9]{1,2}\Z")
_PARTNER_RE = re.compile(r"[A-Za-z0-9_.-]{1,32}\Z")


class MalformedSegment(EdiError):
    code = "MALFORMED_SEGMENT"


class EnvelopeMismatch(EdiError):
    code = "ENVELOPE_MISMATCH"


class Truncated(EdiError):
    code = "TRUNCATED"


class InvariantViolation(EdiError):
    code = "INVARIANT_VIOLATION"


class UnknownTxnControl(EdiError):
    code = "UNKNOWN_TXN_CONTROL"


class CounterExhausted(EdiError):
    code = "COUNTER_EXHAUSTED"


@dataclass(frozen=True)
class Delimiters:
    element_sep: str = "*"
    segment_term: str = "~"
    subelement_sep: str = ":"

    def __post_init__(self):
        chars = (self.element_sep, self.segment_term, self.subelement_sep)
        if any(len(c) != 1 or not (0x20 < ord(c) < 0x7F) or c.isalnum() for c in chars):
            raise InvariantViolation(f"delimiters must be single printable punctuation bytes: {chars!r}")
        if len(set(chars)) != 3:
            raise InvariantViolation(f"delimiters must be pairwise distinct: {chars!r}")

    @property
    def reserved(self) -> frozenset[str]:
        return frozenset((self.element_sep, self.segment_term, self.subelement_sep))


DEFAULT_DELIMITERS = Delimiters()


@dataclass
class Segment:
    tag: str
    elements: list[str] = field(default_factory=list)


@dataclass
class TransactionSet:
    txn_type: str
    txn_control: str
    body: list[Segment] = field(default_factory=list)


@dataclass
class FunctionalGroup:
    doc_type: str
    group_control: str
    transactions: list[TransactionSet] = field(default_factory=list)


@dataclass
class Interchange:
    sender_id: str
    receiver_id: str
    date: str
    time: str
    control_number: str
    ack_requested: bool = False
    groups: list[FunctionalGroup] = field(default_factory=list)
    delimiters: Delimiters = DEFAULT_DELIMITERS

    def transactions(self) -> Iterator[TransactionSet]:
        for group in self.groups:
            yield from group.transactions

    @property
    def doc_types(self) -> list[str]:
        return sorted({g.doc_type for g in self.groups})


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" | "warning"
    segment_index: int
    code: str
    message: str


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(f.severity == "error" for f in self.findings)

    def codes(self, severity: str | None = None) -> list[str]:
        return [f.code for f in self.findings if severity is None or f.severity == severity]


class ControlCounter:
    """Issues strictly increasing control numbers per (sender, scope).

    Callers must serialize access to one counter; nothing here locks.
    """

    def __init__(self, last_issued: dict[tuple[str, str], int] | None = None):
        self.last_issued: dict[tuple[str, str], int] = dict(last_issued or {})

    def peek(self, sender: str = "", scope: str = "interchange") -> int:
        return self.last_issued.get((sender, scope), 0)


def next_control_number(
    counter: ControlCounter, sender: str = "", scope: str = "interchange", width: int = 9
) -> str:
    limit = 10**width - 1
    last = counter.peek(sender, scope)
    if last >= limit:
        raise CounterExhausted(f"control counter for {sender!r}/{scope} exhausted at {last}")
    counter.last_issued[(sender, scope)] = last + 1
    return str(last + 1).zfill(width)


# -- parsing -----------------------------------------------------------------


def _digits(value: str, n: int) -> bool:
    return len(value) == n and value.isascii() and value.isdigit()


def _check_element(value: str, delims: Delimiters) -> bool:
    return all(0x20 <= ord(ch) < 0x7F and ch not in delims.reserved for ch in value)


def _split_segments(data: bytes, delims: Delimiters) -> list[tuple[int, Segment]]:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedSegment(f"non-ASCII byte at offset {exc.start}") from None

    pieces = text.split(delims.segment_term)
    tail = pieces.pop()
    if tail.strip("\r\n"):
        raise Truncated("input does not end with a segment terminator")

    out = []
    for index, raw in enumerate(pieces):
        # line breaks between segments are tolerated, not preserved
        raw = raw.lstrip("\r\n")
        if not raw:
            raise MalformedSegment(f"empty segment at index {index}")
        tag, *elements = raw.split(delims.element_sep)
        if not _TAG_RE.match(tag):
            raise MalformedSegment(f"bad segment tag {tag!r} at index {index}")
        for value in elements:
            if not _check_element(value, delims):
                raise MalformedSegment(f"illegal character in element of {tag} at index {index}")
        out.append((index, Segment(tag, elements)))
    return out


def _expect(seg: Segment, index: int, n_elements: int) -> None:
    if len(seg.elements) != n_elements:
        raise MalformedSegment(
            f"{seg.tag} at index {index} needs {n_elements} elements, got {len(seg.elements)}"
        )


def _count(seg: Segment, index: int, value: str) -> int:
    if not value.isdigit():
        raise MalformedSegment(f"{seg.tag} count {value!r} at index {index} is not numeric")
    return int(value)


def parse_interchange(data: bytes, delimiters: Delimiters = DEFAULT_DELIMITERS) -> Interchange:
    """Parse one interchange, checking every trailer count and control."""
    if not data:
        raise Truncated("empty input")
    segments = _split_segments(data, delimiters)
    if not segments:
        raise Truncated("no segments")

    it = iter(segments)
    index, isa = next(it)
    if isa.tag != "ISA":
        raise MalformedSegment(f"first segment must be ISA, got {isa.tag}")
    _expect(isa, index, 6)
    sender, receiver, date, time, control, ack = isa.elements
    if not sender or not receiver:
        raise MalformedSegment("ISA sender and receiver must be non-empty")
    if not _digits(date, 8) or not _digits(time, 4):
        raise MalformedSegment(f"ISA date/time shape invalid: {date!r} {time!r}")
    if not _digits(control, 9):
        raise MalformedSegment(f"ISA control must be 9 digits: {control!r}")
    if ack not in ("0", "1"):
        raise MalformedSegment(f"ISA ack flag must be 0 or 1: {ack!r}")

    doc = Interchange(sender, receiver, date, time, control, ack == "1", [], delimiters)
    group: FunctionalGroup | None = None
    txn: TransactionSet | None = None
    txn_start = 0

    for index, seg in it:
        if txn is not None:
            if seg.tag == "SE":
                _expect(seg, index, 2)
                declared = _count(seg, index, seg.elements[0])
                actual = index - txn_start + 1
                if declared != actual:
                    raise EnvelopeMismatch(
                        f"SE at index {index} declares {declared} segments, found {actual}"
                    )
                if seg.elements[1] != txn.txn_control:
                    raise EnvelopeMismatch(
                        f"SE control {seg.elements[1]!r} != ST control {txn.txn_control!r}"
                    )
                group.transactions.append(txn)
                txn = None
            elif seg.tag in ENVELOPE_TAGS:
                raise MalformedSegment(f"{seg.tag} at index {index} inside open transaction")
            else:
                txn.body.append(seg)
        elif group is not None:
            if seg.tag == "ST":
                _expect(seg, index, 2)
                if not _digits(seg.elements[1], 4):
                    raise MalformedSegment(f"ST control must be 4 digits at index {index}")
                txn = TransactionSet(seg.elements[0], seg.elements[1], [])
                txn_start = index
            elif seg.tag == "GE":
                _expect(seg, index, 2)
                declared = _count(seg, index, seg.elements[0])
                if declared != len(group.transactions):
                    raise EnvelopeMismatch(
                        f"GE declares {declared} transactions, group has {len(group.transactions)}"
                    )
                if seg.elements[1] != group.group_control:
                    raise EnvelopeMismatch(
                        f"GE control {seg.elements[1]!r} != GS control {group.group_control!r}"
                    )
                doc.groups.append(group)
                group = None
            else:
                raise MalformedSegment(f"expected ST or GE at index {index}, got {seg.tag}")
        else:
            if seg.tag == "GS":
                _expect(seg, index, 2)
                if not _digits(seg.elements[1], 4):
                    raise MalformedSegment(f"GS control must be 4 digits at index {index}")
                group = FunctionalGroup(seg.elements[0], seg.elements[1], [])
            elif seg.tag == "IEA":
                _expect(seg, index, 2)
                declared = _count(seg, index, seg.elements[0])
                if declared != len(doc.groups):
                    raise EnvelopeMismatch(
                        f"IEA declares {declared} groups, interchange has {len(doc.groups)}"
                    )
                if seg.elements[1] != doc.control_number:
                    raise EnvelopeMismatch(
                        f"IEA control {seg.elements[1]!r} != ISA control {doc.control_number!r}"
                    )
                if index != len(segments) - 1:
                    raise MalformedSegment("data after IEA (one interchange per file)")
                return doc
            else:
                raise MalformedSegment(f"expected GS or IEA at index {index}, got {seg.tag}")

    raise Truncated("input ended before IEA")


# -- serialization ------------------------------------------------------------


def _emit(tag: str, elements: Iterable[str], delims: Delimiters, out: list[str]) -> None:
    if not _TAG_RE.match(tag):
        raise InvariantViolation(f"bad segment tag {tag!r}")
    parts = [tag]
    for value in elements:
        if not isinstance(value, str) or not _check_element(value, delims):
            raise InvariantViolation(f"element {value!r} of {tag} contains a delimiter or control byte")
        parts.append(value)
    out.append(delims.element_sep.join(parts) + delims.segment_term)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise InvariantViolation(message)


def serialize_interchange(doc: Interchange) -> bytes:
    """Serialize ``doc``; trailer counts and controls are always recomputed."""
    d = doc.delimiters
    _require(bool(doc.sender_id) and bool(doc.receiver_id), "sender and receiver must be non-empty")
    _require(_digits(doc.date, 8), f"date must be YYYYMMDD: {doc.date!r}")
    _require(_digits(doc.time, 4), f"time must be HHMM: {doc.time!r}")
    _require(_digits(doc.control_number, 9), f"control must be 9 digits: {doc.control_number!r}")

    out: list[str] = []
    _emit(
        "ISA",
        [doc.sender_id, doc.receiver_id, doc.date, doc.time, doc.control_number,
         "1" if doc.ack_requested else "0"],
        d, out,
    )
    for group in doc.groups:
        _require(_digits(group.group_control, 4), f"group control must be 4 digits: {group.group_control!r}")
        _emit("GS", [group.doc_type, group.group_control], d, out)
        for txn in group.transactions:
            _require(_digits(txn.txn_control, 4), f"txn control must be 4 digits: {txn.txn_control!r}")
            _emit("ST", [txn.txn_type, txn.txn_control], d, out)
            for seg in txn.body:
                if seg.tag in ENVELOPE_TAGS:
                    raise InvariantViolation(f"envelope tag {seg.tag} inside transaction body")
                _emit(seg.tag, seg.elements, d, out)
            _emit("SE", [str(len(txn.body) + 2), txn.txn_control], d, out)
        _emit("GE", [str(len(group.transactions)), group.group_control], d, out)
    _emit("IEA", [str(len(doc.groups)), doc.control_number], d, out)
    return "".join(out).encode("ascii")


# -- validation ---------------------------------------------------------------


def validate(
    doc: Interchange,
    allowed_doc_types: Iterable[str],
    known_tags: Iterable[str] = KNOWN_BODY_TAGS,
) -> ValidationReport:
    allowed = set(allowed_doc_types)
    known = set(known_tags)
    report = ValidationReport()

    def add(severity, index, code, message):
        report.findings.append(Finding(severity, index, code, message))

    if not _digits(doc.control_number, 9):
        add("error", 0, "CONTROL_FORMAT", f"interchange control {doc.control_number!r}")
    if not doc.groups:
        add("warning", 0, "NO_GROUPS", "interchange carries no functional groups")

    index = 1
    seen_groups: set[str] = set()
    for group in doc.groups:
        if group.doc_type not in allowed:
            add("error", index, "DOC_TYPE_NOT_ALLOWED", f"doc type {group.doc_type!r} not in {sorted(allowed)}")
        if group.group_control in seen_groups:
            add("error", index, "DUPLICATE_GROUP_CONTROL", f"group control {group.group_control} repeated")
        seen_groups.add(group.group_control)
        if not _digits(group.group_control, 4):
            add("error", index, "CONTROL_FORMAT", f"group control {group.group_control!r}")
        index += 1

        seen_txns: set[str] = set()
        for txn in group.transactions:
            if txn.txn_type != group.doc_type:
                add("error", index, "TXN_TYPE_MISMATCH",
                    f"transaction type {txn.txn_type!r} inside {group.doc_type!r} group")
            if txn.txn_control in seen_txns:
                add("error", index, "DUPLICATE_TXN_CONTROL", f"txn control {txn.txn_control} repeated")
            seen_txns.add(txn.txn_control)
            if not _digits(txn.txn_control, 4):
                add("error", index, "CONTROL_FORMAT", f"txn control {txn.txn_control!r}")
            if not txn.body:
                add("error", index, "EMPTY_TXN", f"transaction {txn.txn_control} has no body segments")
            index += 1
            for seg in txn.body:
                if seg.tag in ENVELOPE_TAGS:
                    add("error", index, "ENVELOPE_TAG_IN_BODY", f"{seg.tag} inside transaction body")
                elif seg.tag not in known:
                    add("warning", index, "UNKNOWN_SEGMENT", f"unrecognised segment tag {seg.tag}")
                index += 1
            index += 1  # SE
        index += 1  # GE
    return report


# -- functional acknowledgments -------------------------------------------------


def build_functional_ack(
    original: Interchange,
    statuses: Iterable[tuple[str, bool, str]],
    control_number: str,
    *,
    date: str | None = None,
    time: str | None = None,
) -> Interchange:
    """Build the FA interchange answering ``original``.

    The FA is addressed back to the original sender, carries one
    ``REF*<original control>`` segment followed by one
    ``ACK*<txn control>*<A|R>*<reason>`` segment per status, and never
    requests an acknowledgment itself.
    """
    present = {txn.txn_control for txn in original.transactions()}
    body = [Segment("REF", [original.control_number])]
    for txn_control, accepted, reason in statuses:
        if txn_control not in present:
            raise UnknownTxnControl(f"txn control {txn_control!r} not in interchange {original.control_number}")
        body.append(Segment("ACK", [txn_control, "A" if accepted else "R", reason or ("OK" if accepted else "")]))

    now = datetime.now()
    return Interchange(
        sender_id=original.receiver_id,
        receiver_id=original.sender_id,
        date=date or now.strftime("%Y%m%d"),
        time=time or now.strftime("%H%M"),
        control_number=control_number,
        ack_requested=False,
        groups=[FunctionalGroup("FA", "0001", [TransactionSet("FA", "0001", body)])],
        delimiters=original.delimiters,
    )


@dataclass
class AckSummary:
    ref_control: str
    statuses: list[tuple[str, bool, str]]


def read_functional_ack(fa: Interchange) -> AckSummary:
    """Extract the referenced control and per-transaction statuses from an FA."""
    ref = None
    statuses = []
    for txn in fa.transactions():
        if txn.txn_type != "FA":
            raise InvariantViolation(f"not a functional acknowledgment: {txn.txn_type}")
        for seg in txn.body:
            if seg.tag == "REF" and seg.elements:
                ref = seg.elements[0]
            elif seg.tag == "ACK" and len(seg.elements) == 3:
                statuses.append((seg.elements[0], seg.elements[1] == "A", seg.elements[2]))
    if ref is None:
        raise InvariantViolation("functional acknowledgment carries no REF segment")
    return AckSummary(ref, statuses)


def is_partner_id(value: str) -> bool:
    return bool(_PARTNER_RE.match(value))
