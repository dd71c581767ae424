from __future__ import annotations

import hashlib
import hmac
import re
import secrets
from dataclasses import asdict, dataclass, field
from typing import Any

from ..errors import EdiError

ROLES = ("user", "admin", "peer")
DELIVERY_MODES = ("retrieve", "forward")

RECEIVED = "RECEIVED"
REJECTED = "REJECTED"
QUEUED = "QUEUED"
FORWARDED_REMOTE = "FORWARDED_REMOTE"
DELIVERED = "DELIVERED"
ACKNOWLEDGED = "ACKNOWLEDGED"

TRANSITIONS: dict[str | None, frozenset[str]] = {
    None: frozenset({RECEIVED}),
    RECEIVED: frozenset({REJECTED, QUEUED}),
    QUEUED: frozenset({DELIVERED, FORWARDED_REMOTE}),
    DELIVERED: frozenset({ACKNOWLEDGED}),
    FORWARDED_REMOTE: frozenset({ACKNOWLEDGED}),
    REJECTED: frozenset(),
    ACKNOWLEDGED: frozenset(),
}
STATUSES = frozenset(s for s in TRANSITIONS if s)

_CODE_RE = re.compile(r"[A-Z0-9]{1,8}\Z")
_ID_RE = re.compile(r"[A-Za-z0-9_.-]{1,32}\Z")

# scrypt cost; ~50 ms per hash on a laptop
_SCRYPT = {"n": 2**14, "r": 8, "p": 1}


class VanError(EdiError):
    code = "VAN_ERROR"


class AuthFailed(VanError):
    code = "AUTH_FAILED"


class SessionInvalid(VanError):
    code = "SESSION_INVALID"


class Forbidden(VanError):
    code = "FORBIDDEN"


class SenderMismatch(VanError):
    code = "SENDER_MISMATCH"


class DuplicateControl(VanError):
    code = "DUPLICATE_CONTROL"

    def __init__(self, message: str, message_id: int):
        super().__init__(message, message_id=message_id)
        self.message_id = message_id


class UnknownPartner(VanError):
    code = "UNKNOWN_PARTNER"


class UnknownMessage(VanError):
    code = "UNKNOWN_MESSAGE"


class WrongState(VanError):
    code = "WRONG_STATE"


class AlreadyAcknowledged(VanError):
    code = "ALREADY_ACKNOWLEDGED"


class BadRequest(VanError):
    code = "BAD_REQUEST"


class Conflict(VanError):
    code = "CONFLICT"


def is_partner_id(value: str) -> bool:
    return isinstance(value, str) and bool(_ID_RE.match(value))


def is_doc_code(value: str) -> bool:
    return isinstance(value, str) and bool(_CODE_RE.match(value))


def hash_password(password: str, salt: bytes | None = None) -> str:
    salt = salt or secrets.token_bytes(16)
    digest = hashlib.scrypt(password.encode(), salt=salt, dklen=32, **_SCRYPT)
    return f"scrypt${salt.hex()}${digest.hex()}"


def check_password(password: str, stored: str) -> bool:
    try:
        scheme, salt_hex, digest_hex = stored.split("$")
        salt = bytes.fromhex(salt_hex)
    except ValueError:
        return False
    digest = hashlib.scrypt(password.encode(), salt=salt, dklen=32, **_SCRYPT)
    return scheme == "scrypt" and hmac.compare_digest(digest.hex(), digest_hex)


@dataclass(frozen=True)
class Notification:
    endpoint: str
    doc_types: frozenset[str] = frozenset()

    def matches(self, doc_types) -> bool:
        return bool(self.doc_types & set(doc_types))


@dataclass
class PartnerProfile:
    partner_id: str
    password_hash: str
    role: str = "user"
    authorized_senders: set[str] = field(default_factory=set)
    allowed_doc_types: set[str] = field(default_factory=set)
    delivery_mode: str = "retrieve"
    endpoint: str | None = None
    notification: Notification | None = None
    auto_ack: bool = False
    public_key: str | None = None  # hex, 64 bytes; lets the VAN sign acks to this partner

    def __post_init__(self):
        if not is_partner_id(self.partner_id):
            raise BadRequest(f"bad partner id {self.partner_id!r}")
        if self.role not in ROLES:
            raise BadRequest(f"bad role {self.role!r}")
        if self.delivery_mode not in DELIVERY_MODES:
            raise BadRequest(f"bad delivery mode {self.delivery_mode!r}")
        if self.delivery_mode == "forward" and not self.endpoint:
            raise BadRequest("forward delivery needs an endpoint")
        if not self.password_hash.startswith("scrypt$"):
            raise BadRequest("password_hash must be a salted scrypt hash")
        if self.public_key is not None:
            try:
                ok = len(bytes.fromhex(self.public_key)) == 64
            except ValueError:
                ok = False
            if not ok:
                raise BadRequest("public_key must be 64 bytes of hex")

    @property
    def has_mailbox(self) -> bool:
        return self.role in ("user", "admin")

    def to_record(self) -> dict[str, Any]:
        d = asdict(self)
        d["authorized_senders"] = sorted(self.authorized_senders)
        d["allowed_doc_types"] = sorted(self.allowed_doc_types)
        if self.notification:
            d["notification"] = {
                "endpoint": self.notification.endpoint,
                "doc_types": sorted(self.notification.doc_types),
            }
        return d

    @classmethod
    def from_record(cls, d: dict[str, Any]) -> "PartnerProfile":
        d = dict(d)
        d["authorized_senders"] = set(d.get("authorized_senders", ()))
        d["allowed_doc_types"] = set(d.get("allowed_doc_types", ()))
        n = d.get("notification")
        d["notification"] = Notification(n["endpoint"], frozenset(n.get("doc_types", ()))) if n else None
        return cls(**d)

    def public_view(self) -> dict[str, Any]:
        d = self.to_record()
        d.pop("password_hash")
        return d


@dataclass
class SessionToken:
    token: str
    partner_id: str
    expires: float


@dataclass
class VanMessage:
    message_id: int
    sender_id: str
    recipient_id: str
    interchange_control: str
    doc_types: tuple[str, ...]
    size: int
    ack_requested: bool = False
    hop_count: int = 0
    origin: str = "partner"  # partner | peer | van | ack
    ref_control: str | None = None
    status: str | None = None
    timestamps: dict[str, float] = field(default_factory=dict)
    reason: str | None = None
    local: bool = True
    # delivery bookkeeping, rebuilt from audit events on replay
    attempts: int = 0
    next_attempt: float = 0.0
    parked: bool = False
    notify_state: str | None = None  # None | retry | sent | parked
    fa_message_id: int | None = None

    def summary(self) -> dict[str, Any]:
        return {
            "messageId": self.message_id,
            "sender": self.sender_id,
            "recipient": self.recipient_id,
            "control": self.interchange_control,
            "docTypes": list(self.doc_types),
            "bytes": self.size,
            "ackRequested": self.ack_requested,
            "hops": self.hop_count,
            "status": self.status,
            "reason": self.reason,
            "refControl": self.ref_control,
            "faMessageId": self.fa_message_id,
            "timestamps": dict(self.timestamps),
        }


@dataclass(frozen=True)
class AuditEvent:
    seq: int
    ts: float
    message_id: int | None
    actor: str
    action: str
    detail: dict[str, Any] = field(default_factory=dict)

    def to_record(self) -> dict[str, Any]:
        return {
            "seq": self.seq, "ts": self.ts, "message_id": self.message_id,
            "actor": self.actor, "action": self.action, "detail": self.detail,
        }

    @classmethod
    def from_record(cls, d: dict[str, Any]) -> "AuditEvent":
        return cls(d["seq"], d["ts"], d["message_id"], d["actor"], d["action"], d.get("detail", {}))

    @property
    def is_transition(self) -> bool:
        return self.action in STATUSES


@dataclass
class AccountingReport:
    partner_id: str
    start: float
    end: float
    messages_in: int = 0
    messages_out: int = 0
    bytes_in: int = 0
    bytes_out: int = 0


@dataclass(frozen=True)
class InterconnectRoute:
    pattern: str
    endpoint: str
    max_hops: int = 3

    def matches(self, partner_id: str) -> bool:
        if self.pattern.endswith("*"):
            return partner_id.startswith(self.pattern[:-1])
        return partner_id == self.pattern


@dataclass(frozen=True)
class DepositHeader:
    sender: str
    recipient: str
    control: str
    doc_types: tuple[str, ...]
    ack_requested: bool = False
    hop_count: int = 0

    def __post_init__(self):
        if not is_partner_id(self.sender) or not is_partner_id(self.recipient):
            raise BadRequest("sender and recipient must be partner ids")
        if not (len(self.control) == 9 and self.control.isascii() and self.control.isdigit()):
            raise BadRequest(f"control must be 9 digits: {self.control!r}")
        if not self.doc_types or not all(is_doc_code(t) for t in self.doc_types):
            raise BadRequest(f"bad doc types {self.doc_types!r}")
        if not 0 <= self.hop_count < 100:
            raise BadRequest(f"bad hop count {self.hop_count}")


@dataclass(frozen=True)
class DepositOutcome:
    message_id: int
    status: str
    reason: str | None = None


@dataclass(frozen=True)
class MailItem:
    message_id: int
    payload: bytes
    sender: str
    recipient: str
    control: str
    doc_types: tuple[str, ...]
    ack_requested: bool
    ref_control: str | None = None
    origin: str = "partner"
