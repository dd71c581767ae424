"""Map-driven translation between internal documents and interchanges.

A mapping file has three sections.  ``header`` templates are emitted once
and bind fields of the document header, ``items.segments`` are emitted
once per item and bind item fields, and ``summary`` templates close the
transaction.  Each template element is exactly one of ``{"field": name}``,
``{"literal": text}`` or ``{"count": "items"}``.

The same map drives both directions.  Loading refuses any map whose
inbound reading would be ambiguous, so inbound translation never needs a
second hand-written map.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable

from .errors import EdiError
from .interchange import (
    DEFAULT_DELIMITERS,
    ENVELOPE_TAGS,
    FunctionalGroup,
    Interchange,
    Segment,
    TransactionSet,
)

_FIELD_RE = re.compile(r"[a-zA-Z][a-zA-Z0-9_]*\Z")
_TAG_RE = re.compile(r"[A-Z][A-Z0-9]{1,2}\Z")


class MapParseError(EdiError):
    code = "MAP_PARSE_ERROR"


class MapNotInvertible(EdiError):
    code = "MAP_NOT_INVERTIBLE"


class ReservedTag(EdiError):
    code = "RESERVED_TAG"


class MissingField(EdiError):
    code = "MISSING_FIELD"

    def __init__(self, field_name: str, where: str = "header"):
        super().__init__(f"MissingField({field_name})", field=field_name, where=where)
        self.field = field_name

    def __str__(self):
        return f"MissingField({self.field})"


class DocTypeMismatch(EdiError):
    code = "DOC_TYPE_MISMATCH"


class TemplateMismatch(EdiError):
    code = "TEMPLATE_MISMATCH"


class CountMismatch(EdiError):
    code = "COUNT_MISMATCH"


class InvalidDocument(EdiError):
    code = "INVALID_DOCUMENT"


@dataclass
class InternalDocument:
    doc_type: str
    header: dict[str, str] = field(default_factory=dict)
    items: list[dict[str, str]] = field(default_factory=list)

    def __post_init__(self):
        for scope in [self.header, *self.items]:
            for name, value in scope.items():
                if not _FIELD_RE.match(name):
                    raise InvalidDocument(f"bad field name {name!r}")
                if not isinstance(value, str):
                    raise InvalidDocument(f"field {name!r} must be a string, got {type(value).__name__}")
                if any(not (0x20 <= ord(c) < 0x7F) or c in DEFAULT_DELIMITERS.reserved for c in value):
                    raise InvalidDocument(f"field {name!r} contains a delimiter or non-printable byte")

    @classmethod
    def from_json(cls, data: bytes | str) -> "InternalDocument":
        try:
            obj = json.loads(data)
            return cls(obj["docType"], dict(obj.get("header", {})), [dict(i) for i in obj.get("items", [])])
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise InvalidDocument(f"not an internal document: {exc}") from None

    def to_json(self) -> str:
        return json.dumps({"docType": self.doc_type, "header": self.header, "items": self.items}, indent=2)


@dataclass(frozen=True)
class ElementSource:
    kind: str  # "field" | "literal" | "count"
    value: str


@dataclass(frozen=True)
class SegmentTemplate:
    tag: str
    elements: tuple[ElementSource, ...]


@dataclass(frozen=True)
class MappingSpec:
    doc_type: str
    header_segments: tuple[SegmentTemplate, ...]
    item_segments: tuple[SegmentTemplate, ...]
    summary_segments: tuple[SegmentTemplate, ...]
    items_path: str = "items"


def _parse_source(obj, where: str) -> ElementSource:
    if not isinstance(obj, dict) or len(obj) != 1:
        raise MapParseError(f"{where}: element source must have exactly one of field/literal/count")
    (kind, value), = obj.items()
    if kind not in ("field", "literal", "count") or not isinstance(value, str):
        raise MapParseError(f"{where}: unknown element source {obj!r}")
    if kind == "field" and not _FIELD_RE.match(value):
        raise MapParseError(f"{where}: bad field name {value!r}")
    return ElementSource(kind, value)


def _parse_templates(objs, where: str) -> tuple[SegmentTemplate, ...]:
    if not isinstance(objs, list):
        raise MapParseError(f"{where} must be a list of segment templates")
    out = []
    for n, obj in enumerate(objs):
        if not isinstance(obj, dict) or not isinstance(obj.get("tag"), str):
            raise MapParseError(f"{where}[{n}] needs a tag")
        tag = obj["tag"]
        if tag in ENVELOPE_TAGS:
            raise ReservedTag(f"{where}[{n}] uses reserved envelope tag {tag}")
        if not _TAG_RE.match(tag):
            raise MapParseError(f"{where}[{n}] bad tag {tag!r}")
        elements = obj.get("elements", [])
        if not isinstance(elements, list):
            raise MapParseError(f"{where}[{n}].elements must be a list")
        out.append(SegmentTemplate(tag, tuple(_parse_source(e, f"{where}[{n}]") for e in elements)))
    return tuple(out)


def _check_invertible(spec: MappingSpec) -> None:
    def bindings(templates, scope):
        seen: set[str] = set()
        for tpl in templates:
            for src in tpl.elements:
                if src.kind == "field":
                    if src.value in seen:
                        raise MapNotInvertible(f"field {src.value!r} bound more than once in {scope}")
                    seen.add(src.value)
                elif src.kind == "count" and src.value != spec.items_path:
                    raise MapParseError(f"count source {src.value!r} must name {spec.items_path!r}")

    bindings(spec.header_segments + spec.summary_segments, "header/summary")
    bindings(spec.item_segments, "items")
    if any(src.kind == "count" for tpl in spec.item_segments for src in tpl.elements):
        raise MapParseError("item templates cannot carry an item count")

    if spec.item_segments:
        first = spec.item_segments[0].tag
        if any(t.tag == first for t in spec.item_segments[1:]):
            raise MapNotInvertible(f"item start tag {first} repeats inside the item templates")
        if spec.summary_segments and spec.summary_segments[0].tag == first:
            raise MapNotInvertible(f"summary start tag {first} is also the item start tag")


def load_map(data: bytes | str | Path) -> MappingSpec:
    if isinstance(data, Path):
        data = data.read_bytes()
    try:
        obj = json.loads(data)
    except ValueError as exc:
        raise MapParseError(f"mapping file is not JSON: {exc}") from None
    if not isinstance(obj, dict) or not isinstance(obj.get("docType"), str):
        raise MapParseError("mapping file needs a docType string")

    items = obj.get("items", {"path": "items", "segments": []})
    if not isinstance(items, dict):
        raise MapParseError("items must be an object with path and segments")
    spec = MappingSpec(
        doc_type=obj["docType"],
        header_segments=_parse_templates(obj.get("header", []), "header"),
        item_segments=_parse_templates(items.get("segments", []), "items.segments"),
        summary_segments=_parse_templates(obj.get("summary", []), "summary"),
        items_path=items.get("path", "items"),
    )
    if not spec.header_segments and not spec.summary_segments:
        # a document with no items would otherwise render an empty transaction
        raise MapParseError("a map needs at least one header or summary segment")
    _check_invertible(spec)
    return spec


# -- outbound -----------------------------------------------------------------


def _render(tpl: SegmentTemplate, scope: dict[str, str], n_items: int, where: str) -> Segment:
    elements = []
    for src in tpl.elements:
        if src.kind == "field":
            if src.value not in scope:
                raise MissingField(src.value, where)
            elements.append(scope[src.value])
        elif src.kind == "literal":
            elements.append(src.value)
        else:
            elements.append(str(n_items))
    return Segment(tpl.tag, elements)


def render_body(doc: InternalDocument, spec: MappingSpec) -> list[Segment]:
    if doc.doc_type != spec.doc_type:
        raise DocTypeMismatch(f"document is {doc.doc_type!r}, map is {spec.doc_type!r}")
    n = len(doc.items)
    body = [_render(t, doc.header, n, "header") for t in spec.header_segments]
    for k, item in enumerate(doc.items):
        body.extend(_render(t, item, n, f"items[{k}]") for t in spec.item_segments)
    body.extend(_render(t, doc.header, n, "header") for t in spec.summary_segments)
    return body


def translate_batch(
    docs: Iterable[InternalDocument],
    spec: MappingSpec,
    sender: str,
    receiver: str,
    control_number: str,
    *,
    group_control: str = "0001",
    date: str | None = None,
    time: str | None = None,
    ack_requested: bool = False,
) -> Interchange:
    """Translate several documents of one type into a single functional group."""
    txns = [
        TransactionSet(spec.doc_type, str(k).zfill(4), render_body(doc, spec))
        for k, doc in enumerate(docs, start=1)
    ]
    now = datetime.now()
    return Interchange(
        sender_id=sender,
        receiver_id=receiver,
        date=date or now.strftime("%Y%m%d"),
        time=time or now.strftime("%H%M"),
        control_number=control_number,
        ack_requested=ack_requested,
        groups=[FunctionalGroup(spec.doc_type, group_control, txns)],
    )


def translate_outbound(
    doc: InternalDocument,
    spec: MappingSpec,
    sender: str,
    receiver: str,
    control_number: str,
    **kwargs,
) -> Interchange:
    return translate_batch([doc], spec, sender, receiver, control_number, **kwargs)


# -- inbound ------------------------------------------------------------------


def _absorb(tpl: SegmentTemplate, seg: Segment, scope: dict[str, str], counts: list[int]) -> None:
    if seg.tag != tpl.tag:
        raise TemplateMismatch(f"expected {tpl.tag}, found {seg.tag}")
    if len(seg.elements) != len(tpl.elements):
        raise TemplateMismatch(
            f"{seg.tag} has {len(seg.elements)} elements, template expects {len(tpl.elements)}"
        )
    for pos, (src, value) in enumerate(zip(tpl.elements, seg.elements), start=1):
        if src.kind == "field":
            scope[src.value] = value
        elif src.kind == "literal":
            if value != src.value:
                raise TemplateMismatch(f"{seg.tag}{pos:02d} is {value!r}, map fixes {src.value!r}")
        else:
            if not value.isdigit():
                raise CountMismatch(f"{seg.tag}{pos:02d} count {value!r} is not numeric")
            counts.append(int(value))


def _read_transaction(txn: TransactionSet, spec: MappingSpec) -> InternalDocument:
    body = txn.body
    pos = 0
    header: dict[str, str] = {}
    counts: list[int] = []

    def take(tpl: SegmentTemplate, scope: dict[str, str]) -> None:
        nonlocal pos
        if pos >= len(body):
            raise TemplateMismatch(f"transaction {txn.txn_control} ended, expected {tpl.tag}")
        _absorb(tpl, body[pos], scope, counts)
        pos += 1

    for tpl in spec.header_segments:
        take(tpl, header)

    items = []
    if spec.item_segments:
        start = spec.item_segments[0].tag
        while pos < len(body) and body[pos].tag == start:
            item: dict[str, str] = {}
            for tpl in spec.item_segments:
                take(tpl, item)
            items.append(item)

    for tpl in spec.summary_segments:
        take(tpl, header)
    if pos != len(body):
        raise TemplateMismatch(f"unexpected {body[pos].tag} after summary in transaction {txn.txn_control}")

    for declared in counts:
        if declared != len(items):
            raise CountMismatch(f"summary declares {declared} items, transaction {txn.txn_control} has {len(items)}")
    return InternalDocument(spec.doc_type, header, items)


def translate_inbound(doc: Interchange, spec: MappingSpec) -> list[InternalDocument]:
    out = []
    for group in doc.groups:
        if group.doc_type != spec.doc_type:
            raise DocTypeMismatch(f"group is {group.doc_type!r}, map is {spec.doc_type!r}")
        for txn in group.transactions:
            if txn.txn_type != spec.doc_type:
                raise DocTypeMismatch(f"transaction is {txn.txn_type!r}, map is {spec.doc_type!r}")
            out.append(_read_transaction(txn, spec))
    return out
