"""HTTP deployment of the VAN: API, durable state, delivery loop, webhooks."""

from __future__ import annotations

import fcntl
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any
from urllib.parse import parse_qs, urlsplit

import requests

from ..errors import EdiError
from ..secenv.keystore import Keystore
from .client import ApiError, VanClient
from .core import DEFAULT_BACKOFF, DirBlobs, NotifyAction, PushAction, RelayAction, VanCore
from .journal import Journal
from .models import (
    AlreadyAcknowledged,
    AuthFailed,
    BadRequest,
    Conflict,
    DepositHeader,
    DuplicateControl,
    Forbidden,
    InterconnectRoute,
    PartnerProfile,
    SenderMismatch,
    SessionInvalid,
    UnknownMessage,
    UnknownPartner,
    WrongState,
    hash_password,
)
from .wire import encode_mailbox, item_headers

logger = logging.getLogger(__name__)


class DataDirLocked(EdiError):
    code = "DATA_DIR_LOCKED"


class BindFailure(EdiError):
    code = "BIND_FAILURE"


@dataclass
class ServiceConfig:
    data_dir: Path
    listen: str = "127.0.0.1:8470"
    van_id: str = "VAN"
    session_ttl: float = 3600.0
    loop_interval_ms: int = 500
    max_hops: int = 3
    routes: list[InterconnectRoute] = field(default_factory=list)
    peer_credentials: dict[str, dict[str, str]] = field(default_factory=dict)
    admin_id: str = "admin"
    admin_password: str | None = None
    backoff: tuple[float, ...] = DEFAULT_BACKOFF
    fsync: bool = True
    http_timeout: float = 5.0

    def __post_init__(self):
        self.data_dir = Path(self.data_dir)
        if self.loop_interval_ms <= 0:
            raise ValueError("loop_interval_ms must be positive")
        host, _, port = self.listen.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"listen must be host:port, got {self.listen!r}")

    @property
    def host(self) -> str:
        return self.listen.rpartition(":")[0]

    @property
    def port(self) -> int:
        return int(self.listen.rpartition(":")[2])

    @classmethod
    def from_dict(cls, d: dict[str, Any], base: Path | None = None) -> "ServiceConfig":
        d = dict(d)
        data_dir = Path(d.pop("data_dir"))
        if base is not None and not data_dir.is_absolute():
            data_dir = base / data_dir
        routes = [
            InterconnectRoute(r["pattern"], r["endpoint"], r.get("max_hops", d.get("max_hops", 3)))
            for r in d.pop("routes", [])
        ]
        if "admin_password_env" in d:
            d.setdefault("admin_password", os.environ.get(d.pop("admin_password_env")))
        peers = {}
        for endpoint, cred in d.pop("peer_credentials", {}).items():
            cred = dict(cred)
            if "password_env" in cred:
                cred["password"] = os.environ.get(cred.pop("password_env"), "")
            peers[endpoint.rstrip("/")] = cred
        if "backoff" in d:
            d["backoff"] = tuple(d["backoff"])
        return cls(data_dir=data_dir, routes=routes, peer_credentials=peers, **d)

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base=path.parent)


# -- wire mapping ---------------------------------------------------------------

_WIRE_FIELDS = {
    "partnerId": "partner_id",
    "role": "role",
    "authorizedSenders": "authorized_senders",
    "allowedDocTypes": "allowed_doc_types",
    "deliveryMode": "delivery_mode",
    "endpoint": "endpoint",
    "autoAck": "auto_ack",
    "publicKey": "public_key",
    "password": "password",
}


def profile_changes_from_wire(body: dict[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in body.items():
        if key == "notification":
            out["notification"] = None if value is None else {
                "endpoint": value["endpoint"], "doc_types": list(value.get("docTypes", [])),
            }
        elif key in _WIRE_FIELDS:
            out[_WIRE_FIELDS[key]] = value
        else:
            raise BadRequest(f"unknown profile field {key!r}")
    for key in ("authorized_senders", "allowed_doc_types"):
        if key in out:
            out[key] = list(out[key])
    return out


def profile_from_wire(body: dict[str, Any]) -> PartnerProfile:
    changes = profile_changes_from_wire(body)
    password = changes.pop("password", None)
    if not password or "partner_id" not in changes:
        raise BadRequest("partnerId and password are required")
    changes["password_hash"] = hash_password(password)
    try:
        return PartnerProfile.from_record(changes)
    except TypeError as exc:
        raise BadRequest(str(exc)) from None


def profile_to_wire(profile: PartnerProfile) -> dict[str, Any]:
    d = profile.public_view()
    back = {v: k for k, v in _WIRE_FIELDS.items()}
    out = {back[k]: v for k, v in d.items() if k in back}
    n = d.get("notification")
    out["notification"] = {"endpoint": n["endpoint"], "docTypes": n["doc_types"]} if n else None
    return out


_STATUS_FOR = [
    ((AuthFailed, SessionInvalid), 401),
    ((Forbidden, SenderMismatch), 403),
    ((UnknownMessage, UnknownPartner), 404),
    ((DuplicateControl, Conflict, WrongState, AlreadyAcknowledged), 409),
    ((BadRequest,), 400),
]


def _status_for(exc: Exception) -> int:
    for classes, status in _STATUS_FOR:
        if isinstance(exc, classes):
            return status
    return 500


# -- HTTP handler ------------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "edikit-van/0.1"

    @property
    def service(self) -> "VanService":
        return self.server.service  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):
        logger.debug("%s %s", self.address_string(), fmt % args)

    def _send(self, status: int, body: bytes, content_type: str = "application/json") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _json(self, status: int, obj: Any) -> None:
        self._send(status, json.dumps(obj).encode())

    def _body(self) -> bytes:
        n = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(n) if n else b""

    def _json_body(self) -> dict[str, Any]:
        try:
            obj = json.loads(self._body() or b"{}")
        except ValueError:
            raise BadRequest("body is not JSON") from None
        if not isinstance(obj, dict):
            raise BadRequest("body must be a JSON object")
        return obj

    def _token(self) -> str:
        auth = self.headers.get("Authorization", "")
        return auth[7:] if auth.startswith("Bearer ") else ""

    def _dispatch(self, method: str) -> None:
        url = urlsplit(self.path)
        query = {k: v[-1] for k, v in parse_qs(url.query).items()}
        parts = [p for p in url.path.split("/") if p]
        try:
            if not parts or parts[0] != "v1":
                raise UnknownMessage(f"no route {url.path}")
            self.service.route(self, method, parts[1:], query)
        except EdiError as exc:
            status = _status_for(exc)
            body = {"error": type(exc).__name__, "message": str(exc)}
            if isinstance(exc, DuplicateControl):
                body["messageId"] = exc.message_id
            if status == 500:
                logger.exception("request failed")
            self._json(status, body)
        except (KeyError, ValueError, TypeError) as exc:
            self._json(400, {"error": "BadRequest", "message": str(exc)})
        except Exception:
            logger.exception("unhandled error on %s %s", method, self.path)
            self._json(500, {"error": "InternalError", "message": "internal error"})

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_PUT(self):
        self._dispatch("PUT")


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True


# -- service ------------------------------------------------------------------------


class VanService:
    def __init__(self, config: ServiceConfig):
        self.config = config
        config.data_dir.mkdir(parents=True, exist_ok=True)
        self._lock_fh = open(config.data_dir / "LOCK", "a+")
        try:
            fcntl.flock(self._lock_fh.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            self._lock_fh.close()
            raise DataDirLocked(f"{config.data_dir} is in use by another instance") from None

        try:
            self.journal = Journal(config.data_dir / "journal.log", fsync=config.fsync)
            keys = Keystore(config.data_dir / "keys")
            if not keys.has(config.van_id, "priv"):
                keys.generate_pair(config.van_id)
            self.van_public = keys.get(config.van_id, "pub")
            self.core = VanCore(
                config.van_id,
                journal=self.journal,
                blobs=DirBlobs(config.data_dir / "blobs"),
                session_ttl=config.session_ttl,
                max_hops=config.max_hops,
                backoff=config.backoff,
                van_key=keys.get(config.van_id, "priv"),
            )
            if config.admin_password:
                self.core.add_bootstrap_admin(config.admin_id, config.admin_password)
            for route in config.routes:
                self.core.add_route(route, persist=False)
            try:
                self.httpd = _Server((config.host, config.port), _Handler)
            except OSError as exc:
                raise BindFailure(f"cannot listen on {config.listen}: {exc}") from None
        except BaseException:
            self._release()
            raise
        self.httpd.service = self
        self._stop = threading.Event()
        self._wake = threading.Event()
        self._threads: list[threading.Thread] = []
        self._peers: dict[str, VanClient] = {}
        self.http = requests.Session()

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "VanService":
        if self._threads:
            return self
        serve = lambda: self.httpd.serve_forever(poll_interval=0.1)  # noqa: E731
        for target, name in ((serve, "http"), (self._loop, "delivery")):
            t = threading.Thread(target=target, name=f"{self.config.van_id}-{name}", daemon=True)
            t.start()
            self._threads.append(t)
        logger.info("VAN %s listening on %s", self.config.van_id, self.url)
        return self

    def stop(self) -> None:
        self._stop.set()
        self._wake.set()
        if self._threads:  # shutdown() blocks forever if serve_forever never ran
            self.httpd.shutdown()
        self.httpd.server_close()
        for t in self._threads:
            t.join(timeout=5)
        self._release()

    def _release(self) -> None:
        if getattr(self, "journal", None) is not None:
            self.journal.close()
        if not self._lock_fh.closed:
            fcntl.flock(self._lock_fh.fileno(), fcntl.LOCK_UN)
            self._lock_fh.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- delivery loop --

    def _loop(self) -> None:
        interval = self.config.loop_interval_ms / 1000.0
        while not self._stop.is_set():
            try:
                self.run_delivery_cycle()
            except Exception:
                logger.exception("delivery cycle failed")
            self._wake.wait(interval)
            self._wake.clear()

    def run_delivery_cycle(self) -> int:
        actions = self.core.deliver_pending()
        for action in actions:
            if isinstance(action, PushAction):
                self._push(action)
            elif isinstance(action, RelayAction):
                self._relay(action)
            elif isinstance(action, NotifyAction):
                self.dispatch_notification(action)
        return len(actions)

    def _push(self, action: PushAction) -> None:
        try:
            resp = self.http.post(action.endpoint, data=action.payload, headers=item_headers(action.item),
                                  timeout=self.config.http_timeout)
            ok, error = 200 <= resp.status_code < 300, f"HTTP {resp.status_code}"
        except requests.RequestException as exc:
            ok, error = False, type(exc).__name__
        self.core.complete_push(action.message_id, ok, "" if ok else error)

    def _peer(self, endpoint: str) -> VanClient:
        endpoint = endpoint.rstrip("/")
        if endpoint not in self._peers:
            self._peers[endpoint] = VanClient(endpoint, timeout=self.config.http_timeout)
        return self._peers[endpoint]

    def _relay(self, action: RelayAction) -> None:
        client = self._peer(action.endpoint)
        cred = self.config.peer_credentials.get(action.endpoint.rstrip("/"))
        status, error = None, ""
        for _ in range(2):
            try:
                if client.token is None:
                    if cred is None:
                        raise ApiError(401, {"error": "NoPeerCredentials"})
                    client.login(cred["partnerId"], cred["password"])
                client.deposit(action.payload, action.header)
                status = 200
                break
            except ApiError as exc:
                if exc.status == 401 and cred is not None and client.token is not None:
                    client.token = None
                    continue
                if exc.status in (409, 422):
                    # the peer has taken custody and recorded its own outcome
                    status = exc.status
                else:
                    error = f"HTTP {exc.status} {exc.error}"
                break
            except requests.RequestException as exc:
                error = type(exc).__name__
                break
        self.core.complete_relay(action.message_id, status is not None, status, error)

    def dispatch_notification(self, action: NotifyAction) -> bool:
        """POST the JSON notice for one queued message; the outcome is audited."""
        try:
            resp = self.http.post(action.endpoint, json=action.notice, timeout=self.config.http_timeout)
            ok, error = 200 <= resp.status_code < 300, f"HTTP {resp.status_code}"
        except requests.RequestException as exc:
            ok, error = False, type(exc).__name__
        self.core.complete_notify(action.message_id, ok, "" if ok else error)
        return ok

    # -- API routing --

    def route(self, h: _Handler, method: str, parts: list[str], q: dict[str, str]) -> None:
        core = self.core
        token = h._token()
        key = (method, parts[0] if parts else "")

        if key == ("GET", "health"):
            return h._json(200, {"ok": True, "vanId": self.config.van_id})
        if key == ("GET", "van-key"):
            return h._json(200, {"vanId": self.config.van_id, "publicKey": self.van_public.material.hex()})
        if key == ("POST", "session"):
            body = h._json_body()
            sess = core.authenticate(str(body.get("partnerId", "")), str(body.get("password", "")))
            return h._json(200, {"token": sess.token, "expires": sess.expires})

        if key == ("POST", "deposit"):
            header = DepositHeader(
                sender=h.headers.get("X-EDI-Sender", ""),
                recipient=h.headers.get("X-EDI-Recipient", ""),
                control=h.headers.get("X-EDI-Control", ""),
                doc_types=tuple(t.strip() for t in h.headers.get("X-EDI-DocTypes", "").split(",") if t.strip()),
                ack_requested=h.headers.get("X-EDI-AckRequested", "0") == "1",
                hop_count=int(h.headers.get("X-EDI-Hops", "0")),
            )
            payload = h._body()
            outcome = core.deposit(token, payload, header)
            self._wake.set()
            body = {"messageId": outcome.message_id, "status": outcome.status}
            if outcome.status == "REJECTED":
                body.update(error="Rejected", reason=outcome.reason)
                return h._json(422, body)
            return h._json(200, body)

        if key == ("GET", "mailbox"):
            items = core.retrieve(
                token,
                since=float(q["since"]) if q.get("since") else None,
                doc_type=q.get("docType") or None,
                redeliver=q.get("redeliver") == "1",
            )
            ctype, body = encode_mailbox(items)
            return h._send(200, body, ctype)

        if parts[:1] == ["messages"] and len(parts) >= 2:
            mid = int(parts[1])
            action = parts[2] if len(parts) > 2 else ""
            if method == "GET" and not action:
                return h._json(200, core.message(mid, token=token).summary())
            if method == "POST" and action == "ack":
                core.session(token)
                payload = h._body()
                fa = core.acknowledge(
                    mid, by="recipient", token=token,
                    fa_payload=payload or None, fa_control=h.headers.get("X-EDI-Control"),
                )
                self._wake.set()
                return h._json(200, {"messageId": mid, "status": "ACKNOWLEDGED",
                                     "faMessageId": fa.message_id if fa else None})
            if method == "POST" and action == "retry":
                core.retry(mid, token=token)
                self._wake.set()
                return h._json(200, {"messageId": mid, "status": "QUEUED"})

        if key == ("GET", "audit"):
            events = core.audit_trail(
                message_id=int(q["messageId"]) if q.get("messageId") else None,
                partner=q.get("partnerId") or None,
                start=float(q["from"]) if q.get("from") else None,
                end=float(q["to"]) if q.get("to") else None,
                token=token,
            )
            return h._json(200, {"events": [ev.to_record() for ev in events]})

        if key == ("GET", "accounting"):
            r = core.accounting(
                q["partnerId"],
                float(q.get("from") or 0.0),
                float(q.get("to") or time.time()),
                token=token,
            )
            return h._json(200, {
                "partnerId": r.partner_id, "from": r.start, "to": r.end,
                "messagesIn": r.messages_in, "messagesOut": r.messages_out,
                "bytesIn": r.bytes_in, "bytesOut": r.bytes_out,
            })

        if key == ("POST", "partners") and len(parts) == 1:
            core.session(token)
            profile = profile_from_wire(h._json_body())
            core.add_partner(profile, token=token)
            return h._json(200, profile_to_wire(profile))
        if parts[:1] == ["partners"] and len(parts) == 2:
            if method == "PUT":
                core.session(token)
                updated = core.update_partner(parts[1], profile_changes_from_wire(h._json_body()), token=token)
                return h._json(200, profile_to_wire(updated))
            if method == "GET":
                return h._json(200, profile_to_wire(core.get_partner(parts[1], token=token)))

        if key == ("POST", "routes"):
            body = h._json_body()
            route = InterconnectRoute(body["pattern"], body["endpoint"], int(body.get("maxHops", self.config.max_hops)))
            core.add_route(route, token=token or "")
            return h._json(200, {"pattern": route.pattern, "endpoint": route.endpoint, "maxHops": route.max_hops})

        raise UnknownMessage(f"no route {method} /v1/{'/'.join(parts)}")


def serve(config: ServiceConfig) -> VanService:
    """Open the data directory, replay the journal and start serving."""
    return VanService(config).start()
