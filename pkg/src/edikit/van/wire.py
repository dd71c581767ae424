"""multipart/mixed framing for mailbox listings.

Each part carries its own Content-Length, so payload bytes are never
scanned for the boundary on decode.
"""

from __future__ import annotations

import re
import secrets

from .models import MailItem

_BOUNDARY_RE = re.compile(r'boundary="?([A-Za-z0-9_-]+)"?')


def item_headers(item: MailItem) -> dict[str, str]:
    headers = {
        "X-EDI-Message-Id": str(item.message_id),
        "X-EDI-Sender": item.sender,
        "X-EDI-Recipient": item.recipient,
        "X-EDI-Control": item.control,
        "X-EDI-DocTypes": ",".join(item.doc_types),
        "X-EDI-AckRequested": "1" if item.ack_requested else "0",
        "X-EDI-Origin": item.origin,
    }
    if item.ref_control:
        headers["X-EDI-Ref-Control"] = item.ref_control
    return headers


def item_from_headers(headers, payload: bytes) -> MailItem:
    h = {k.lower(): v for k, v in headers.items()}
    return MailItem(
        message_id=int(h["x-edi-message-id"]),
        payload=payload,
        sender=h["x-edi-sender"],
        recipient=h["x-edi-recipient"],
        control=h["x-edi-control"],
        doc_types=tuple(t for t in h["x-edi-doctypes"].split(",") if t),
        ack_requested=h.get("x-edi-ackrequested") == "1",
        ref_control=h.get("x-edi-ref-control"),
        origin=h.get("x-edi-origin", "partner"),
    )


def encode_mailbox(items: list[MailItem]) -> tuple[str, bytes]:
    boundary = secrets.token_hex(16)
    out = []
    for item in items:
        lines = [f"--{boundary}", "Content-Type: application/octet-stream",
                 f"Content-Length: {len(item.payload)}"]
        lines += [f"{k}: {v}" for k, v in item_headers(item).items()]
        out.append(("\r\n".join(lines) + "\r\n\r\n").encode("ascii") + item.payload + b"\r\n")
    out.append(f"--{boundary}--\r\n".encode("ascii"))
    return f"multipart/mixed; boundary={boundary}", b"".join(out)


def decode_mailbox(content_type: str, body: bytes) -> list[MailItem]:
    m = _BOUNDARY_RE.search(content_type or "")
    if not m:
        raise ValueError(f"not a multipart body: {content_type!r}")
    delim = f"--{m.group(1)}".encode("ascii")
    items = []
    pos = 0
    while True:
        if not body.startswith(delim, pos):
            raise ValueError(f"expected boundary at offset {pos}")
        pos += len(delim)
        if body.startswith(b"--", pos):
            return items
        head_end = body.index(b"\r\n\r\n", pos)
        headers = {}
        for line in body[pos:head_end].decode("ascii").split("\r\n"):
            if line:
                key, _, value = line.partition(":")
                headers[key.strip()] = value.strip()
        length = int(headers["Content-Length"])
        start = head_end + 4
        payload = body[start:start + length]
        if len(payload) != length or body[start + length:start + length + 2] != b"\r\n":
            raise ValueError("truncated multipart part")
        items.append(item_from_headers(headers, payload))
        pos = start + length + 2
