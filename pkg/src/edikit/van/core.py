"""Transport-agnostic Value-Added Network logic.

Every mutation is expressed as a list of *facts* (audit events, partner
records, routes, counter positions).  A list of facts is appended to the
journal as one record and only then applied to memory, so the in-memory
state is always a fold over the journal and replay rebuilds it exactly.
Message state is never stored directly: it is derived from the audit
events that record each transition.

All state sits behind one re-entrant lock.  That serializes every
mailbox and message mutation and gives the audit log a single append
point; the cost is that slow journal writes stall other sessions.
"""

from __future__ import annotations

import logging
import os
import secrets
import threading
import time
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable

from ..interchange import (
    ControlCounter,
    Interchange,
    build_functional_ack,
    next_control_number,
    serialize_interchange,
)
from ..secenv.envelope import SUITES, EnvelopeError, SecureEnvelope, wrap
from ..secenv.keystore import KeyRecord, Keystore, MissingKey
from .models import (
    ACKNOWLEDGED,
    DELIVERED,
    FORWARDED_REMOTE,
    QUEUED,
    RECEIVED,
    REJECTED,
    STATUSES,
    TRANSITIONS,
    AccountingReport,
    AlreadyAcknowledged,
    AuditEvent,
    AuthFailed,
    BadRequest,
    Conflict,
    DepositHeader,
    DepositOutcome,
    DuplicateControl,
    Forbidden,
    InterconnectRoute,
    MailItem,
    PartnerProfile,
    SenderMismatch,
    SessionInvalid,
    SessionToken,
    UnknownMessage,
    UnknownPartner,
    VanMessage,
    WrongState,
    check_password,
    hash_password,
)

logger = logging.getLogger(__name__)

DEFAULT_BACKOFF = (5.0, 25.0, 125.0)
_DUMMY_HASH = hash_password("not-a-password", salt=b"\0" * 16)


# -- payload storage -----------------------------------------------------------


class MemoryBlobs:
    def __init__(self):
        self._data: dict[int, bytes] = {}

    def put(self, message_id: int, payload: bytes) -> None:
        self._data[message_id] = payload

    def get(self, message_id: int) -> bytes:
        return self._data[message_id]


class DirBlobs:
    """One file per payload; written and fsynced before its journal record."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, message_id: int) -> Path:
        return self.root / f"{message_id:012d}.sec"

    def put(self, message_id: int, payload: bytes) -> None:
        tmp = self._path(message_id).with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self._path(message_id))

    def get(self, message_id: int) -> bytes:
        return self._path(message_id).read_bytes()


# -- pure decisions --------------------------------------------------------------


@dataclass(frozen=True)
class Screening:
    accepted: bool
    reason: str | None = None
    route: InterconnectRoute | None = None


def screen(message: VanMessage, recipient: PartnerProfile | None, payload: bytes) -> Screening:
    """Decide whether ``recipient`` accepts ``message``.

    Only the header and the envelope's cleartext framing are inspected;
    the VAN never decrypts customer payloads.
    """
    if recipient is None or not recipient.has_mailbox:
        return Screening(False, "NO_SUCH_MAILBOX")
    if message.sender_id not in recipient.authorized_senders:
        return Screening(False, "UNAUTHORIZED_PARTNER")
    if not set(message.doc_types) <= recipient.allowed_doc_types:
        return Screening(False, "DOC_TYPE_NOT_ALLOWED")
    try:
        env = SecureEnvelope.from_bytes(payload)
    except EnvelopeError:
        return Screening(False, "MALFORMED_ENVELOPE")
    if env.suite not in SUITES:
        return Screening(False, "MALFORMED_ENVELOPE")
    return Screening(True)


def route_remote(message: VanMessage, routes: Iterable[InterconnectRoute]) -> Screening:
    """Pick the first route for a recipient with no local mailbox."""
    for route in routes:
        if route.matches(message.recipient_id):
            if message.hop_count >= route.max_hops:
                return Screening(False, "HOP_LIMIT", route)
            return Screening(True, None, route)
    return Screening(False, "NO_SUCH_MAILBOX")


# -- delivery actions --------------------------------------------------------------


@dataclass(frozen=True)
class PushAction:
    message_id: int
    endpoint: str
    payload: bytes
    item: MailItem


@dataclass(frozen=True)
class RelayAction:
    message_id: int
    endpoint: str
    payload: bytes
    header: DepositHeader


@dataclass(frozen=True)
class NotifyAction:
    message_id: int
    endpoint: str
    notice: dict[str, Any]


# -- transactions --------------------------------------------------------------------


class _Tx:
    """Facts collected for one journal record, with projected message status."""

    def __init__(self, core: "VanCore"):
        self.core = core
        self.facts: list[dict[str, Any]] = []
        self.seq = core._seq
        self.status: dict[int, str | None] = {}
        self.keys: set[tuple[str, str]] = set()

    def status_of(self, message_id: int) -> str | None:
        if message_id in self.status:
            return self.status[message_id]
        m = self.core.messages.get(message_id)
        return m.status if m else None

    def event(self, message_id: int | None, actor: str, action: str, detail: dict | None = None) -> None:
        if action in STATUSES:
            current = self.status_of(message_id)
            if action not in TRANSITIONS[current]:
                raise WrongState(f"message {message_id}: {current} -> {action} is not allowed")
            self.status[message_id] = action
        self.seq += 1
        ev = AuditEvent(self.seq, self.core.clock(), message_id, actor, action, detail or {})
        self.facts.append({"kind": "event", **ev.to_record()})

    def fact(self, kind: str, **data) -> None:
        self.facts.append({"kind": kind, **data})

    def commit(self) -> None:
        if self.facts:
            self.core._commit(self.facts)
            self.facts = []


def _base(m: VanMessage | DepositHeader, size: int | None = None) -> dict[str, Any]:
    if isinstance(m, VanMessage):
        return {"sender": m.sender_id, "recipient": m.recipient_id, "bytes": m.size}
    return {"sender": m.sender, "recipient": m.recipient, "bytes": size}


class VanCore:
    def __init__(
        self,
        van_id: str = "VAN",
        *,
        journal=None,
        blobs=None,
        clock=time.time,
        session_ttl: float = 3600.0,
        max_hops: int = 3,
        backoff: tuple[float, ...] = DEFAULT_BACKOFF,
        van_key: KeyRecord | None = None,
    ):
        self.van_id = van_id
        self.journal = journal
        self.blobs = blobs if blobs is not None else MemoryBlobs()
        self.clock = clock
        self.session_ttl = session_ttl
        self.max_hops = max_hops
        self.backoff = tuple(backoff)
        self.van_key = van_key

        self.lock = threading.RLock()
        self.partners: dict[str, PartnerProfile] = {}
        self.bootstrap: dict[str, PartnerProfile] = {}
        self.routes: list[InterconnectRoute] = []
        self.static_routes: list[InterconnectRoute] = []
        self.messages: dict[int, VanMessage] = {}
        self.audit: list[AuditEvent] = []
        self.counters = ControlCounter()
        self.sessions: dict[str, SessionToken] = {}
        self._by_key: dict[tuple[str, str], int] = {}
        self._seq = 0
        self._next_id = 1
        self._in_flight: set[tuple[int, str]] = set()

        if journal is not None:
            self.replay(journal.recovered)

    # -- journal plumbing --

    def replay(self, records: Iterable[dict[str, Any]]) -> None:
        with self.lock:
            for record in records:
                for fact in record["facts"]:
                    self._apply(fact)

    def _commit(self, facts: list[dict[str, Any]]) -> None:
        if self.journal is not None:
            self.journal.append({"facts": facts})
        for fact in facts:
            self._apply(fact)

    def _apply(self, fact: dict[str, Any]) -> None:
        kind = fact["kind"]
        if kind == "partner":
            profile = PartnerProfile.from_record(fact["profile"])
            self.partners[profile.partner_id] = profile
        elif kind == "route":
            self.routes.append(InterconnectRoute(fact["pattern"], fact["endpoint"], fact["max_hops"]))
        elif kind == "counter":
            key = (fact["sender"], fact["scope"])
            self.counters.last_issued[key] = max(self.counters.last_issued.get(key, 0), fact["last"])
        elif kind == "event":
            ev = AuditEvent.from_record(fact)
            self.audit.append(ev)
            self._seq = ev.seq
            if ev.message_id is not None:
                self._apply_message_event(ev)
        else:
            raise ValueError(f"unknown fact kind {kind!r}")

    def _apply_message_event(self, ev: AuditEvent) -> None:
        d = ev.detail
        mid = ev.message_id
        if ev.action == RECEIVED:
            m = VanMessage(
                message_id=mid,
                sender_id=d["sender"],
                recipient_id=d["recipient"],
                interchange_control=d["control"],
                doc_types=tuple(d["doc_types"]),
                size=d["bytes"],
                ack_requested=d["ack_requested"],
                hop_count=d["hops"],
                origin=d["origin"],
                ref_control=d.get("ref_control"),
            )
            self.messages[mid] = m
            self._next_id = max(self._next_id, mid + 1)
            self._by_key.setdefault((m.sender_id, m.interchange_control), mid)
        m = self.messages[mid]
        if ev.action in STATUSES:
            m.status = ev.action
            m.timestamps[ev.action] = ev.ts
        if ev.action == REJECTED:
            m.reason = d.get("reason")
            if self._by_key.get((m.sender_id, m.interchange_control)) == mid:
                del self._by_key[(m.sender_id, m.interchange_control)]
        elif ev.action == QUEUED:
            m.local = d.get("route", "local") == "local"
        elif ev.action == ACKNOWLEDGED:
            m.fa_message_id = d.get("fa_message_id")
        elif ev.action in ("PUSH_FAILED", "RELAY_FAILED"):
            m.attempts = d["attempt"]
            m.parked = d["parked"]
            m.next_attempt = d.get("retry_at") or 0.0
        elif ev.action == "RETRY_RESET":
            m.attempts, m.parked, m.next_attempt = 0, False, 0.0
            if m.notify_state == "parked":
                m.notify_state = None
        elif ev.action == "NOTIFY_SENT":
            m.notify_state = "sent"
        elif ev.action == "NOTIFY_FAILED":
            m.notify_state = "parked" if d.get("parked") else "retry"

    def _alloc_id(self) -> int:
        mid = self._next_id
        self._next_id += 1
        return mid

    # -- sessions and profiles --

    def add_bootstrap_admin(self, partner_id: str, password: str) -> None:
        """Config-level admin credential; never journaled."""
        self.bootstrap[partner_id] = PartnerProfile(partner_id, hash_password(password), role="admin")

    def _profile(self, partner_id: str) -> PartnerProfile | None:
        return self.partners.get(partner_id) or self.bootstrap.get(partner_id)

    def authenticate(self, partner_id: str, password: str) -> SessionToken:
        with self.lock:
            profile = self._profile(partner_id)
        # hash outside the lock; unknown ids pay the same cost as wrong passwords
        ok = check_password(password, profile.password_hash if profile else _DUMMY_HASH) and profile is not None
        actor = str(partner_id)[:64]
        with self.lock:
            tx = _Tx(self)
            if ok:
                tx.event(None, actor, "LOGIN_OK")
            else:
                tx.event(None, actor, "LOGIN_FAIL", {"why": "bad_password" if profile else "unknown_partner"})
            tx.commit()
            if not ok:
                raise AuthFailed("authentication failed")
            token = SessionToken(secrets.token_hex(32), partner_id, self.clock() + self.session_ttl)
            self.sessions[token.token] = token
            return token

    def session(self, token: str) -> PartnerProfile:
        with self.lock:
            sess = self.sessions.get(token or "")
            if sess is None or sess.expires <= self.clock():
                self.sessions.pop(token or "", None)
                raise SessionInvalid("session missing or expired")
            profile = self._profile(sess.partner_id)
            if profile is None:
                raise SessionInvalid("session partner no longer exists")
            return profile

    def _admin(self, token: str | None) -> str:
        if token is None:
            return "system"
        caller = self.session(token)
        if caller.role != "admin":
            raise Forbidden(f"{caller.partner_id} is not an administrator")
        return caller.partner_id

    def add_partner(self, profile: PartnerProfile, token: str | None = None) -> None:
        with self.lock:
            actor = self._admin(token)
            if profile.partner_id in self.partners or profile.partner_id in self.bootstrap \
                    or profile.partner_id == self.van_id:
                raise Conflict(f"partner {profile.partner_id} already exists")
            tx = _Tx(self)
            tx.fact("partner", profile=profile.to_record())
            tx.event(None, actor, "PARTNER_ADDED", {"partner": profile.partner_id, "role": profile.role})
            tx.commit()

    def update_partner(self, partner_id: str, changes: dict[str, Any], token: str | None = None) -> PartnerProfile:
        with self.lock:
            if token is None:
                actor, is_admin = "system", True
            else:
                caller = self.session(token)
                actor, is_admin = caller.partner_id, caller.role == "admin"
                if not is_admin and caller.partner_id != partner_id:
                    raise Forbidden("partners may only update their own profile")
            current = self.partners.get(partner_id)
            if current is None:
                raise UnknownPartner(f"no partner {partner_id!r}")
            changes = dict(changes)
            if "password" in changes:
                changes["password_hash"] = hash_password(changes.pop("password"))
            if not is_admin and "role" in changes and changes["role"] != current.role:
                raise Forbidden("only an administrator may change roles")
            if changes.get("partner_id", partner_id) != partner_id:
                raise BadRequest("partner id cannot change")
            record = current.to_record()
            record.update(changes)
            updated = PartnerProfile.from_record(record)
            tx = _Tx(self)
            tx.fact("partner", profile=updated.to_record())
            fields = sorted(k for k in changes if k != "password_hash") + (["password"] if "password_hash" in changes else [])
            tx.event(None, actor, "PARTNER_UPDATED", {"partner": partner_id, "fields": fields})
            tx.commit()
            return updated

    def get_partner(self, partner_id: str, token: str | None = None) -> PartnerProfile:
        with self.lock:
            if token is not None:
                caller = self.session(token)
                if caller.role != "admin" and caller.partner_id != partner_id:
                    raise Forbidden("partners may only view their own profile")
            profile = self.partners.get(partner_id)
            if profile is None:
                raise UnknownPartner(f"no partner {partner_id!r}")
            return profile

    def add_route(self, route: InterconnectRoute, token: str | None = None, persist: bool = True) -> None:
        with self.lock:
            if not persist:
                self.static_routes.append(route)
                return
            actor = self._admin(token)
            tx = _Tx(self)
            tx.fact("route", pattern=route.pattern, endpoint=route.endpoint, max_hops=route.max_hops)
            tx.event(None, actor, "ROUTE_ADDED", {"pattern": route.pattern, "endpoint": route.endpoint})
            tx.commit()

    def all_routes(self) -> list[InterconnectRoute]:
        return self.routes + self.static_routes

    # -- deposit ----------------------------------------------------------------

    def deposit(self, token: str, payload: bytes, header: DepositHeader) -> DepositOutcome:
        """Store and screen one deposit atomically.

        Screening rejections are returned as an outcome with status
        REJECTED; a duplicate (sender, control) raises DuplicateControl
        after the rejected attempt has been audited.
        """
        caller = self.session(token)
        origin = "partner"
        if caller.role == "peer":
            origin = "peer"
        else:
            if header.sender != caller.partner_id:
                raise SenderMismatch(f"session {caller.partner_id} cannot deposit as {header.sender}")
            if header.hop_count:
                header = replace(header, hop_count=0)
        with self.lock:
            tx = _Tx(self)
            outcome = self._accept(tx, payload, header, origin, caller.partner_id)
            tx.commit()
        if outcome.reason == "DUPLICATE_CONTROL":
            raise DuplicateControl(
                f"({header.sender}, {header.control}) already deposited", outcome.message_id
            )
        return outcome

    def _accept(
        self,
        tx: _Tx,
        payload: bytes,
        header: DepositHeader,
        origin: str,
        actor: str,
        ref_control: str | None = None,
    ) -> DepositOutcome:
        mid = self._alloc_id()
        self.blobs.put(mid, payload)
        msg = VanMessage(
            mid, header.sender, header.recipient, header.control, tuple(sorted(set(header.doc_types))),
            len(payload), header.ack_requested, header.hop_count, origin, ref_control,
        )
        base = _base(msg)
        tx.event(mid, actor, RECEIVED, {
            **base, "control": msg.interchange_control, "doc_types": list(msg.doc_types),
            "ack_requested": msg.ack_requested, "hops": msg.hop_count, "origin": origin,
            "ref_control": ref_control,
        })

        recipient = self.partners.get(header.recipient)
        local = recipient is not None and recipient.has_mailbox
        key = (header.sender, header.control)
        duplicate = key in self._by_key or key in tx.keys

        if local:
            verdict = Screening(True) if origin in ("van", "ack") else screen(msg, recipient, payload)
        else:
            verdict = route_remote(msg, self.all_routes())
        # an over-hopped echo of a message we relayed is a hop-limit rejection, not a duplicate
        if duplicate and verdict.reason != "HOP_LIMIT":
            verdict = Screening(False, "DUPLICATE_CONTROL")

        if verdict.accepted:
            detail = {**base, "route": "local" if local else "remote"}
            if verdict.route is not None:
                detail["peer"] = verdict.route.endpoint
            tx.event(mid, "van", QUEUED, detail)
            tx.keys.add(key)
            return DepositOutcome(mid, QUEUED)
        tx.event(mid, "van", REJECTED, {**base, "reason": verdict.reason})
        return DepositOutcome(mid, REJECTED, verdict.reason)

    # -- retrieval ----------------------------------------------------------------

    def _item(self, m: VanMessage) -> MailItem:
        return MailItem(
            m.message_id, self.blobs.get(m.message_id), m.sender_id, m.recipient_id,
            m.interchange_control, m.doc_types, m.ack_requested, m.ref_control, m.origin,
        )

    def retrieve(
        self,
        token: str,
        since: float | None = None,
        doc_type: str | None = None,
        redeliver: bool = False,
    ) -> list[MailItem]:
        caller = self.session(token)
        with self.lock:
            fresh, again = [], []
            for m in self.messages.values():
                if m.recipient_id != caller.partner_id or not m.local:
                    continue
                if m.status == QUEUED and (m.message_id, "push") not in self._in_flight:
                    bucket = fresh
                elif redeliver and m.status in (DELIVERED, ACKNOWLEDGED):
                    bucket = again
                else:
                    continue
                if since is not None and m.timestamps.get(QUEUED, 0.0) < since:
                    continue
                if doc_type is not None and doc_type not in m.doc_types:
                    continue
                bucket.append(m)

            tx = _Tx(self)
            for m in fresh:
                tx.event(m.message_id, caller.partner_id, DELIVERED, {**_base(m), "via": "retrieve"})
            for m in fresh:
                self._auto_ack(tx, m)
            tx.commit()
            return [self._item(m) for m in sorted(fresh + again, key=lambda m: m.message_id)]

    # -- delivery loop ---------------------------------------------------------------

    def deliver_pending(self, now: float | None = None) -> list[PushAction | RelayAction | NotifyAction]:
        now = self.clock() if now is None else now
        actions: list[PushAction | RelayAction | NotifyAction] = []
        with self.lock:
            for m in self.messages.values():
                if m.status != QUEUED:
                    continue
                if not m.local:
                    if (m.message_id, "relay") in self._in_flight or m.parked or now < m.next_attempt:
                        continue
                    verdict = route_remote(m, self.all_routes())
                    if verdict.route is None or verdict.reason == "HOP_LIMIT":
                        continue
                    header = DepositHeader(
                        m.sender_id, m.recipient_id, m.interchange_control, m.doc_types,
                        m.ack_requested, m.hop_count + 1,
                    )
                    actions.append(RelayAction(m.message_id, verdict.route.endpoint, self.blobs.get(m.message_id), header))
                    self._in_flight.add((m.message_id, "relay"))
                    continue

                rcpt = self.partners.get(m.recipient_id)
                if rcpt is None:
                    continue
                if (rcpt.delivery_mode == "forward" and (m.message_id, "push") not in self._in_flight
                        and not m.parked and now >= m.next_attempt):
                    item = self._item(m)
                    actions.append(PushAction(m.message_id, rcpt.endpoint, item.payload, item))
                    self._in_flight.add((m.message_id, "push"))
                if (rcpt.notification is not None and rcpt.notification.matches(m.doc_types)
                        and m.notify_state in (None, "retry")
                        and (m.message_id, "notify") not in self._in_flight):
                    notice = {
                        "message_id": m.message_id,
                        "sender": m.sender_id,
                        "doc_types": list(m.doc_types),
                        "queued_at": m.timestamps.get(QUEUED),
                    }
                    actions.append(NotifyAction(m.message_id, rcpt.notification.endpoint, notice))
                    self._in_flight.add((m.message_id, "notify"))
        return actions

    def _failure_detail(self, m: VanMessage, error: str) -> dict[str, Any]:
        attempt = m.attempts + 1
        parked = attempt > len(self.backoff)
        retry_at = None if parked else self.clock() + self.backoff[attempt - 1]
        return {**_base(m), "attempt": attempt, "parked": parked, "retry_at": retry_at, "error": error}

    def complete_push(self, message_id: int, ok: bool, error: str = "") -> None:
        with self.lock:
            self._in_flight.discard((message_id, "push"))
            m = self.messages[message_id]
            if m.status != QUEUED:
                return
            tx = _Tx(self)
            if ok:
                tx.event(message_id, "van", DELIVERED, {**_base(m), "via": "forward"})
                self._auto_ack(tx, m)
            else:
                tx.event(message_id, "van", "PUSH_FAILED", self._failure_detail(m, error))
            tx.commit()

    def complete_relay(self, message_id: int, ok: bool, peer_status: int | None = None, error: str = "") -> None:
        with self.lock:
            self._in_flight.discard((message_id, "relay"))
            m = self.messages[message_id]
            if m.status != QUEUED:
                return
            tx = _Tx(self)
            if ok:
                tx.event(message_id, "van", FORWARDED_REMOTE, {**_base(m), "peer_status": peer_status, "hops": m.hop_count + 1})
            else:
                tx.event(message_id, "van", "RELAY_FAILED", self._failure_detail(m, error))
            tx.commit()

    def complete_notify(self, message_id: int, ok: bool, error: str = "") -> None:
        with self.lock:
            self._in_flight.discard((message_id, "notify"))
            m = self.messages[message_id]
            tx = _Tx(self)
            if ok:
                tx.event(message_id, "van", "NOTIFY_SENT", _base(m))
            else:
                # one retry on the next cycle, then park
                tx.event(message_id, "van", "NOTIFY_FAILED",
                         {**_base(m), "parked": m.notify_state == "retry", "error": error})
            tx.commit()

    def retry(self, message_id: int, token: str | None = None) -> None:
        with self.lock:
            actor = self._admin(token)
            m = self.messages.get(message_id)
            if m is None:
                raise UnknownMessage(f"no message {message_id}")
            if m.status != QUEUED:
                raise WrongState(f"message {message_id} is {m.status}")
            tx = _Tx(self)
            tx.event(message_id, actor, "RETRY_RESET", _base(m))
            tx.commit()

    # -- acknowledgment --------------------------------------------------------------

    def acknowledge(
        self,
        message_id: int,
        by: str = "recipient",
        token: str | None = None,
        fa_payload: bytes | None = None,
        fa_control: str | None = None,
    ) -> DepositOutcome | None:
        """Mark a delivered message acknowledged and deposit its FA.

        The FA goes to the original sender only when the depositor asked
        for one.  A recipient may supply its own wrapped FA; otherwise the
        VAN builds one and signs it with the VAN key.
        """
        with self.lock:
            m = self.messages.get(message_id)
            if m is None:
                raise UnknownMessage(f"no message {message_id}")
            actor = "van"
            if token is not None:
                caller = self.session(token)
                if caller.partner_id != m.recipient_id and caller.role != "admin":
                    raise Forbidden("only the recipient may acknowledge a message")
                actor = caller.partner_id
            if m.status == ACKNOWLEDGED:
                raise AlreadyAcknowledged(f"message {message_id} already acknowledged")
            if m.status != DELIVERED:
                raise WrongState(f"message {message_id} is {m.status}, not DELIVERED")
            if fa_payload is not None:
                if fa_control is None:
                    raise BadRequest("a supplied FA needs its interchange control")
                try:
                    SecureEnvelope.from_bytes(fa_payload)
                except EnvelopeError:
                    raise BadRequest("supplied FA is not a secure envelope") from None
                header = DepositHeader(m.recipient_id, m.sender_id, fa_control, ("FA",))
                if (header.sender, header.control) in self._by_key:
                    raise DuplicateControl(f"FA control {fa_control} already used", self._by_key[(header.sender, header.control)])
            tx = _Tx(self)
            fa = self._acknowledge(tx, m, by, actor, fa_payload, fa_control)
            tx.commit()
            return fa

    def _auto_ack(self, tx: _Tx, m: VanMessage) -> None:
        rcpt = self.partners.get(m.recipient_id)
        if rcpt is not None and rcpt.auto_ack and m.ack_requested:
            self._acknowledge(tx, m, "van-auto", "van")

    def _acknowledge(self, tx, m, by, actor, fa_payload=None, fa_control=None) -> DepositOutcome | None:
        fa = None
        if m.ack_requested:
            if fa_payload is not None:
                header = DepositHeader(m.recipient_id, m.sender_id, fa_control, ("FA",))
                fa = self._accept(tx, fa_payload, header, "ack", actor, ref_control=m.interchange_control)
            else:
                built = self._build_van_ack(tx, m)
                if built is None:
                    tx.event(m.message_id, "van", "ACK_SKIPPED", {**_base(m), "why": "no key for sender"})
                else:
                    payload, control = built
                    header = DepositHeader(self.van_id, m.sender_id, control, ("FA",))
                    fa = self._accept(tx, payload, header, "van", "van", ref_control=m.interchange_control)
        tx.event(m.message_id, actor, ACKNOWLEDGED, {
            **_base(m), "by": by, "fa_message_id": fa.message_id if fa else None,
        })
        return fa

    def _build_van_ack(self, tx: _Tx, m: VanMessage) -> tuple[bytes, str] | None:
        sender = self.partners.get(m.sender_id)
        if self.van_key is None or sender is None or sender.public_key is None:
            return None
        control = next_control_number(self.counters, self.van_id, "fa")
        tx.fact("counter", sender=self.van_id, scope="fa", last=int(control))
        stamp = datetime.fromtimestamp(self.clock())
        shell = Interchange(m.sender_id, m.recipient_id, stamp.strftime("%Y%m%d"), stamp.strftime("%H%M"),
                            m.interchange_control)
        fa = build_functional_ack(shell, [], control, date=shell.date, time=shell.time)
        ks = Keystore()
        ks.add(self.van_key)
        ks.add(KeyRecord(m.sender_id, m.sender_id, "pub", bytes.fromhex(sender.public_key), self.clock()))
        try:
            env = wrap(serialize_interchange(fa), self.van_key.key_id, m.sender_id, "PUB-1", ks)
        except MissingKey:
            return None
        return env.to_bytes(), control

    # -- queries --------------------------------------------------------------------

    def message(self, message_id: int, token: str | None = None) -> VanMessage:
        with self.lock:
            m = self.messages.get(message_id)
            if m is None:
                raise UnknownMessage(f"no message {message_id}")
            if token is not None:
                caller = self.session(token)
                if caller.role != "admin" and caller.partner_id not in (m.sender_id, m.recipient_id):
                    raise Forbidden("not your message")
            return m

    def audit_trail(
        self,
        message_id: int | None = None,
        partner: str | None = None,
        start: float | None = None,
        end: float | None = None,
        token: str | None = None,
    ) -> list[AuditEvent]:
        with self.lock:
            if token is not None:
                caller = self.session(token)
                if caller.role != "admin":
                    if message_id is not None:
                        m = self.messages.get(message_id)
                        if m is not None and caller.partner_id not in (m.sender_id, m.recipient_id):
                            raise Forbidden("not your message")
                    elif partner is not None and partner != caller.partner_id:
                        raise Forbidden("partners may only audit their own traffic")
                    else:
                        partner = caller.partner_id

            def wanted(ev: AuditEvent) -> bool:
                if message_id is not None and ev.message_id != message_id:
                    return False
                if partner is not None and partner not in (
                    ev.actor, ev.detail.get("sender"), ev.detail.get("recipient"), ev.detail.get("partner"),
                ):
                    return False
                if start is not None and ev.ts < start:
                    return False
                if end is not None and ev.ts > end:
                    return False
                return True

            return [ev for ev in self.audit if wanted(ev)]

    def accounting(self, partner: str, start: float, end: float, token: str | None = None) -> AccountingReport:
        """Traffic totals for ``partner``, derived only from audit events.

        Outbound counts every deposit the partner made; inbound counts
        deposits queued into the partner's local mailbox.
        """
        if start > end:
            raise BadRequest("period start is after its end")
        with self.lock:
            if token is not None:
                caller = self.session(token)
                if caller.role != "admin" and caller.partner_id != partner:
                    raise Forbidden("partners may only see their own accounting")
            if partner not in self.partners:
                raise UnknownPartner(f"no partner {partner!r}")
            report = AccountingReport(partner, start, end)
            for ev in self.audit:
                if not start <= ev.ts <= end:
                    continue
                if ev.action == RECEIVED and ev.detail.get("sender") == partner:
                    report.messages_out += 1
                    report.bytes_out += ev.detail["bytes"]
                elif (ev.action == QUEUED and ev.detail.get("route") == "local"
                        and ev.detail.get("recipient") == partner):
                    report.messages_in += 1
                    report.bytes_in += ev.detail["bytes"]
            return report

    def snapshot(self) -> dict[str, Any]:
        """Comparable image of all durable state (sessions excluded)."""
        with self.lock:
            return {
                "partners": {k: v.to_record() for k, v in sorted(self.partners.items())},
                "routes": [(r.pattern, r.endpoint, r.max_hops) for r in self.routes],
                "messages": {k: v.summary() for k, v in self.messages.items()},
                "audit": [ev.to_record() for ev in self.audit],
                "counters": sorted(self.counters.last_issued.items()),
            }
