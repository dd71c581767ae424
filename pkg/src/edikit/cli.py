"""``edi`` command-line client.

Exit codes are stable: 0 ok, 2 local error, 3 forbidden or auth failure,
4 rejected by the VAN or by policy, 5 verification failure, 6 network.
"""

from __future__ import annotations

import fcntl
import functools
import json
import logging
import os
import signal
import sys
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import click
import requests

from .errors import EdiError
from .interchange import (
    ControlCounter,
    build_functional_ack,
    next_control_number,
    parse_interchange,
    read_functional_ack,
    serialize_interchange,
)
from .secenv import (
    AuthorizationPolicy,
    EnvelopeError,
    Keystore,
    MissingKey,
    SecureEnvelope,
    UnknownSigner,
    amount_cents,
    check_authorization,
    psk_key_id,
    unwrap,
    wrap,
)
from .translator import InternalDocument, MappingSpec, load_map, translate_inbound, translate_outbound
from .van.client import ApiError, VanClient
from .van.models import DepositHeader

EXIT_OK = 0
EXIT_LOCAL = 2
EXIT_FORBIDDEN = 3
EXIT_REJECTED = 4
EXIT_VERIFY = 5
EXIT_NETWORK = 6

DEFAULT_CONFIG = Path(os.environ.get("EDI_CONFIG", Path.home() / ".config" / "edi" / "config.json"))


class Abort(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class ClientConfig:
    path: Path
    van: str
    partner_id: str
    keystore: Path
    maps: Path
    state_dir: Path
    password_env: str = "EDI_PASSWORD"
    suite: str = "PUB-1"
    ack_requested: bool = True
    send_acks: bool = True

    @classmethod
    def load(cls, path: Path) -> "ClientConfig":
        try:
            raw = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise Abort(EXIT_LOCAL, f"cannot read config {path}: {exc}") from None
        if "password" in raw:
            raise Abort(EXIT_LOCAL, "config files must not hold passwords; use password_env")
        base = path.parent

        def rel(key, default):
            p = Path(raw.get(key, default)).expanduser()
            return p if p.is_absolute() else base / p

        try:
            return cls(
                path=path,
                van=raw["van"],
                partner_id=raw["partner_id"],
                keystore=rel("keystore", "keys"),
                maps=rel("maps", "maps"),
                state_dir=rel("state_dir", "state"),
                password_env=raw.get("password_env", "EDI_PASSWORD"),
                suite=raw.get("suite", "PUB-1"),
                ack_requested=raw.get("ack_requested", True),
                send_acks=raw.get("send_acks", True),
            )
        except KeyError as exc:
            raise Abort(EXIT_LOCAL, f"config {path} lacks {exc}") from None


# -- local state -------------------------------------------------------------------


@contextmanager
def _locked_counter(cfg: ClientConfig):
    cfg.state_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.state_dir / "counters.json"
    with open(cfg.state_dir / "counters.lock", "a") as lock:
        fcntl.flock(lock.fileno(), fcntl.LOCK_EX)
        raw = json.loads(path.read_text()) if path.exists() else {}
        counter = ControlCounter({tuple(k.split("|", 1)): v for k, v in raw.items()})
        yield counter
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"|".join(k): v for k, v in counter.last_issued.items()}))
        os.replace(tmp, path)


def next_control(cfg: ClientConfig) -> str:
    with _locked_counter(cfg) as counter:
        return next_control_number(counter, cfg.partner_id, "interchange")


def _session_file(cfg: ClientConfig) -> Path:
    return cfg.state_dir / f"session-{cfg.partner_id}.json"


def _login(cfg: ClientConfig, client: VanClient) -> None:
    password = os.environ.get(cfg.password_env)
    if password is None:
        if not sys.stdin.isatty():
            raise Abort(EXIT_FORBIDDEN, f"no credentials: set {cfg.password_env}")
        password = click.prompt(f"password for {cfg.partner_id}", hide_input=True)
    client.login(cfg.partner_id, password)
    cfg.state_dir.mkdir(parents=True, exist_ok=True)
    path = _session_file(cfg)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w") as fh:
        json.dump({"van": cfg.van, "token": client.token}, fh)


class SessionClient(VanClient):
    """VanClient that logs in on demand and re-authenticates once on 401."""

    def __init__(self, cfg: ClientConfig):
        super().__init__(cfg.van)
        self.cfg = cfg
        path = _session_file(cfg)
        if path.exists():
            cached = json.loads(path.read_text())
            if cached.get("van") == cfg.van:
                self.token = cached.get("token")

    def _call(self, method, path, **kwargs):
        if path == "/session":
            return super()._call(method, path, **kwargs)
        if not self.token:
            _login(self.cfg, self)
        try:
            return super()._call(method, path, **kwargs)
        except ApiError as exc:
            if exc.status != 401:
                raise
            _login(self.cfg, self)
            return super()._call(method, path, **kwargs)


def resolve_map(cfg: ClientConfig | None, name: str) -> MappingSpec:
    candidates = [Path(name)]
    if cfg is not None:
        candidates += [cfg.maps / name, cfg.maps / f"{name}.map.json"]
    for path in candidates:
        if path.is_file():
            return load_map(path.read_bytes())
    try:
        return load_map(resources.files("edikit.maps").joinpath(f"{name}.map.json").read_bytes())
    except FileNotFoundError:
        raise Abort(EXIT_LOCAL, f"no mapping {name!r}") from None


# -- error handling -------------------------------------------------------------------


def _api_exit(exc: ApiError) -> int:
    if exc.status in (401, 403):
        return EXIT_FORBIDDEN
    if exc.status in (409, 422):
        return EXIT_REJECTED
    if exc.status >= 500:
        return EXIT_NETWORK
    return EXIT_LOCAL


def handled(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            code = fn(*args, **kwargs)
        except Abort as exc:
            click.echo(str(exc), err=True)
            code = exc.code
        except ApiError as exc:
            click.echo(exc.reason or exc.error if exc.status == 422 else str(exc), err=True)
            code = _api_exit(exc)
        except requests.RequestException as exc:
            click.echo(f"network error: {type(exc).__name__}: {exc}", err=True)
            code = EXIT_NETWORK
        except EdiError as exc:
            msg = str(exc)
            click.echo(msg if msg.startswith(type(exc).__name__) else f"{type(exc).__name__}: {msg}", err=True)
            code = EXIT_LOCAL
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            code = EXIT_LOCAL
        sys.exit(code or EXIT_OK)

    return wrapper


def _fmt_ts(ts: float | None) -> str:
    if ts is None:
        return "-"
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def _parse_time(value: str | None) -> float | None:
    if value is None:
        return None
    try:
        return float(value)
    except ValueError:
        return datetime.fromisoformat(value.replace("Z", "+00:00")).timestamp()


# -- commands ------------------------------------------------------------------------------


@click.group()
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              help="Client config (or VAN config for `serve`).")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx, config_path, verbose):
    """Secure EDI client and VAN server."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    ctx.obj = {"config_path": config_path or DEFAULT_CONFIG}


def _cfg(ctx) -> ClientConfig:
    return ClientConfig.load(ctx.obj["config_path"])


@main.command()
@click.pass_context
@handled
def login(ctx):
    """Authenticate and cache the session token."""
    cfg = _cfg(ctx)
    _login(cfg, VanClient(cfg.van))
    click.echo(f"logged in as {cfg.partner_id}")


@main.command()
@click.argument("doc_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--map", "map_name", default="po", show_default=True)
@click.option("--to", "recipient", required=True)
@click.option("--suite", default=None, help="PUB-1 or PSK-1 (default from config).")
@click.option("--ack/--no-ack", "ack", default=None, help="Request a functional acknowledgment.")
@click.pass_context
@handled
def send(ctx, doc_file, map_name, recipient, suite, ack):
    """Translate, wrap and deposit one internal document."""
    cfg = _cfg(ctx)
    ack = cfg.ack_requested if ack is None else ack
    spec = resolve_map(cfg, map_name)
    doc = InternalDocument.from_json(doc_file.read_bytes())
    control = next_control(cfg)
    interchange = translate_outbound(doc, spec, cfg.partner_id, recipient, control, ack_requested=ack)
    envelope = wrap(serialize_interchange(interchange), cfg.partner_id, recipient,
                    suite or cfg.suite, Keystore(cfg.keystore))
    header = DepositHeader(cfg.partner_id, recipient, control, (spec.doc_type,), ack)
    result = SessionClient(cfg).deposit(envelope.to_bytes(), header)
    click.echo(f"{result['messageId']} {result['status']} control={control}")
    return EXIT_OK


def _check_origin(item, env: SecureEnvelope, keystore: Keystore, me: str, van_id: str | None) -> None:
    if env.suite == "PSK-1":
        if env.sender_key_id != psk_key_id(item.sender, me):
            raise EnvelopeError(f"pre-shared key {env.sender_key_id} is not shared with {item.sender}")
        return
    owner = keystore.get(env.sender_key_id, "pub").owner
    if owner != item.sender and not (item.origin == "van" and owner == van_id):
        raise EnvelopeError(f"signing key {env.sender_key_id} belongs to {owner}, not {item.sender}")


def _quarantine(dir_: Path, item, reason: str) -> None:
    dir_.mkdir(parents=True, exist_ok=True)
    (dir_ / f"{item.message_id}.sec").write_bytes(item.payload)
    (dir_ / f"{item.message_id}.reason").write_text(reason + "\n")


@main.command()
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--map", "map_name", default=None, help="Translate inbound documents with this map.")
@click.option("--quarantine", "quarantine_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.option("--doc-type", default=None)
@click.option("--policy", "policy_file", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="Spending-limit policy applied to the signer of each order.")
@click.pass_context
@handled
def fetch(ctx, out_dir, map_name, quarantine_dir, doc_type, policy_file):
    """Retrieve, verify and (optionally) translate queued messages."""
    cfg = _cfg(ctx)
    client = SessionClient(cfg)
    keystore = Keystore(cfg.keystore)
    spec = resolve_map(cfg, map_name) if map_name else None
    policy = AuthorizationPolicy.from_json(policy_file.read_bytes()) if policy_file else None
    quarantine_dir = quarantine_dir or out_dir / "quarantine"
    out_dir.mkdir(parents=True, exist_ok=True)

    items = client.mailbox(doc_type=doc_type)
    click.echo(f"{len(items)} messages")
    van_id = None
    worst = EXIT_OK
    for item in items:
        try:
            env = SecureEnvelope.from_bytes(item.payload)
            if item.origin == "van" and not keystore.has(env.sender_key_id, "pub"):
                # trust on first use: VAN-signed acknowledgments
                vk = client.van_key()
                if vk["vanId"] == env.sender_key_id:
                    keystore.import_public(vk["vanId"], bytes.fromhex(vk["publicKey"]))
            if item.origin == "van":
                van_id = env.sender_key_id
            plaintext, report = unwrap(env, keystore)
            _check_origin(item, env, keystore, cfg.partner_id, van_id)
            interchange = parse_interchange(plaintext)
            if interchange.receiver_id != cfg.partner_id:
                raise EnvelopeError(f"interchange addressed to {interchange.receiver_id}")
        except (EnvelopeError, MissingKey, EdiError) as exc:
            _quarantine(quarantine_dir, item, f"{type(exc).__name__}: {exc}")
            click.echo(f"{item.message_id} QUARANTINED {type(exc).__name__}")
            worst = max(worst, EXIT_VERIFY)
            continue

        if "FA" in interchange.doc_types:
            summary = read_functional_ack(interchange)
            (out_dir / f"{item.message_id}.fa.edi").write_bytes(plaintext)
            states = ",".join(f"{c}:{'A' if ok else 'R'}" for c, ok, _ in summary.statuses)
            click.echo(f"{item.message_id} FA ref={summary.ref_control} {states}".rstrip())
            continue

        statuses = [(t.txn_control, True, "OK") for t in interchange.transactions()]
        outcome = "OK"
        if spec is None:
            (out_dir / f"{item.message_id}.edi").write_bytes(plaintext)
        else:
            try:
                docs = translate_inbound(interchange, spec)
            except EdiError as exc:
                statuses = [(c, False, exc.code[:8]) for c, _, _ in statuses]
                _quarantine(quarantine_dir, item, f"{type(exc).__name__}: {exc}")
                outcome, worst = f"UNTRANSLATABLE {type(exc).__name__}", max(worst, EXIT_LOCAL)
                docs = []
            if policy is not None:
                for k, doc in enumerate(docs):
                    try:
                        decision = check_authorization(amount_cents(doc.items), report.signer, [], policy)
                        reason = decision.reason
                    except UnknownSigner:
                        reason = "UNKNOWN_SIGNER"
                    if reason:
                        c = statuses[k][0]
                        statuses[k] = (c, False, "LIMIT" if reason == "LIMIT_EXCEEDED" else "SIGNER")
                        outcome, worst = f"REFUSED {reason}", max(worst, EXIT_REJECTED)
            refused = {c for c, ok, _ in statuses if not ok}
            for k, (doc, (c, _, _)) in enumerate(zip(docs, statuses)):
                target = out_dir / "refused" if c in refused else out_dir
                target.mkdir(parents=True, exist_ok=True)
                name = f"{item.message_id}.json" if len(docs) == 1 else f"{item.message_id}-{k + 1}.json"
                (target / name).write_text(doc.to_json() + "\n")
        click.echo(f"{item.message_id} {outcome} from={item.sender} control={item.control}")

        if item.ack_requested and cfg.send_acks:
            control = next_control(cfg)
            fa = build_functional_ack(interchange, statuses, control)
            fa_env = wrap(serialize_interchange(fa), cfg.partner_id, item.sender, env.suite, keystore)
            try:
                client.ack(item.message_id, fa_env.to_bytes(), control)
            except ApiError as exc:
                if exc.status != 409:  # already acknowledged by the VAN
                    raise
    return worst


@main.command()
@click.argument("message_id", type=int)
@click.option("--all", "show_all", is_flag=True, help="Include delivery attempts and notifications.")
@click.pass_context
@handled
def status(ctx, message_id, show_all):
    """Print a message's audit chain."""
    cfg = _cfg(ctx)
    events = SessionClient(cfg).audit(message_id=message_id)
    if not events:
        raise Abort(EXIT_LOCAL, f"no events for message {message_id}")
    for ev in events:
        if show_all or ev["action"] in ("RECEIVED", "REJECTED", "QUEUED", "DELIVERED",
                                        "FORWARDED_REMOTE", "ACKNOWLEDGED"):
            extra = ev["detail"].get("reason") or ev["detail"].get("via") or ev["detail"].get("by") or ""
            click.echo(f"{_fmt_ts(ev['ts'])} {ev['action']:<16} {ev['actor']} {extra}".rstrip())


@main.command()
@click.option("--message", "message_id", type=int, default=None)
@click.option("--partner", default=None)
@click.option("--from", "start", default=None, help="Unix time or ISO-8601.")
@click.option("--to", "end", default=None)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@handled
def audit(ctx, message_id, partner, start, end, as_json):
    """Query the VAN audit trail."""
    cfg = _cfg(ctx)
    events = SessionClient(cfg).audit(message_id, partner, _parse_time(start), _parse_time(end))
    for ev in events:
        if as_json:
            click.echo(json.dumps(ev, sort_keys=True))
        else:
            mid = ev["message_id"] if ev["message_id"] is not None else "-"
            click.echo(f"{ev['seq']:>6} {_fmt_ts(ev['ts'])} {mid:>6} {ev['action']:<16} {ev['actor']}")


@main.command()
@click.option("--partner", default=None)
@click.option("--from", "start", default="0")
@click.option("--to", "end", default=None)
@click.pass_context
@handled
def accounting(ctx, partner, start, end):
    """Usage totals for a partner over a period."""
    cfg = _cfg(ctx)
    end_ts = _parse_time(end) or datetime.now().timestamp()
    r = SessionClient(cfg).accounting(partner or cfg.partner_id, _parse_time(start), end_ts)
    click.echo(f"{r['partnerId']}: in {r['messagesIn']} msgs/{r['bytesIn']} bytes, "
               f"out {r['messagesOut']} msgs/{r['bytesOut']} bytes")


@main.command()
@click.option("--pair", "kind", flag_value="pair", help="Generate a signing/encryption keypair.")
@click.option("--psk", "kind", flag_value="psk", help="Generate a pre-shared key for a partner pair.")
@click.option("--id", "key_id", default=None, help="Key id for --pair (default: own partner id).")
@click.option("--peer", default=None, help="Other partner for --psk.")
@click.option("--keystore", "keystore_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.pass_context
@handled
def keygen(ctx, kind, key_id, peer, keystore_dir):
    """Write new key material into the keystore."""
    cfg = None
    if keystore_dir is None or key_id is None:
        cfg = _cfg(ctx)
    ks = Keystore(keystore_dir or cfg.keystore)
    me = cfg.partner_id if cfg else key_id
    if kind == "pair":
        pub, _ = ks.generate_pair(key_id or me, owner=me)
        click.echo(pub.key_id)
    elif kind == "psk":
        if not peer:
            raise Abort(EXIT_LOCAL, "--psk needs --peer")
        click.echo(ks.generate_psk(me, peer, owner=me).key_id)
    else:
        raise Abort(EXIT_LOCAL, "choose --pair or --psk")


@main.command("import-key")
@click.argument("key_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--id", "key_id", default=None, help="Key id (default: file stem).")
@click.option("--owner", default=None, help="Owning partner (default: key id).")
@click.option("--keystore", "keystore_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.pass_context
@handled
def import_key(ctx, key_file, key_id, owner, keystore_dir):
    """Import a partner's .pub (or a shared .psk) file."""
    from .secenv import KeyRecord

    ks = Keystore(keystore_dir or _cfg(ctx).keystore)
    kind = key_file.suffix.lstrip(".")
    if kind not in ("pub", "psk"):
        raise Abort(EXIT_LOCAL, "only .pub and .psk files can be imported")
    key_id = key_id or key_file.stem
    rec = ks.add(KeyRecord(key_id, owner or key_id, kind, key_file.read_bytes(), datetime.now().timestamp()))
    click.echo(f"{rec.key_id}.{rec.kind}")


@main.command("unwrap")
@click.argument("sec_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", "out_file", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.pass_context
@handled
def unwrap_cmd(ctx, sec_file, out_file):
    """Decrypt and verify a stand-alone .sec envelope."""
    cfg = _cfg(ctx)
    try:
        plaintext, report = unwrap(sec_file.read_bytes(), Keystore(cfg.keystore))
    except (EnvelopeError, MissingKey) as exc:
        raise Abort(EXIT_VERIFY, f"{type(exc).__name__}: {exc}") from None
    if out_file:
        out_file.write_bytes(plaintext)
        click.echo(f"verified, signed by {report.signer}")
    else:
        click.echo(plaintext.decode("ascii", "replace"))


# -- admin ----------------------------------------------------------------------------------


def _profile_options(fn):
    for opt in reversed([
        click.option("--role", type=click.Choice(["user", "admin", "peer"]), default=None),
        click.option("--authorize", "authorized", multiple=True, help="Partner allowed to send to this mailbox."),
        click.option("--doc-type", "doc_types", multiple=True),
        click.option("--mode", type=click.Choice(["retrieve", "forward"]), default=None),
        click.option("--endpoint", default=None, help="Push endpoint for forward mode."),
        click.option("--notify", default=None, help="Webhook for event-driven notification."),
        click.option("--notify-type", "notify_types", multiple=True),
        click.option("--auto-ack/--no-auto-ack", default=None),
        click.option("--public-key", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None),
        click.option("--password-env", default=None, help="Env var holding the partner's password."),
    ]):
        fn = opt(fn)
    return fn


def _profile_body(role, authorized, doc_types, mode, endpoint, notify, notify_types, auto_ack, public_key,
                  password_env, require_password: bool) -> dict:
    body: dict = {}
    if password_env:
        if password_env not in os.environ:
            raise Abort(EXIT_LOCAL, f"{password_env} is not set")
        body["password"] = os.environ[password_env]
    elif require_password:
        body["password"] = click.prompt("new partner password", hide_input=True, confirmation_prompt=True)
    for key, value in (("role", role), ("deliveryMode", mode), ("endpoint", endpoint), ("autoAck", auto_ack)):
        if value is not None:
            body[key] = value
    if authorized:
        body["authorizedSenders"] = list(authorized)
    if doc_types:
        body["allowedDocTypes"] = list(doc_types)
    if notify:
        body["notification"] = {"endpoint": notify, "docTypes": list(notify_types)}
    if public_key:
        body["publicKey"] = public_key.read_bytes().hex()
    return body


@main.group()
def partner():
    """Manage partner profiles (admin, or self for update/show)."""


@partner.command("add")
@click.argument("partner_id")
@_profile_options
@click.pass_context
@handled
def partner_add(ctx, partner_id, **opts):
    cfg = _cfg(ctx)
    body = {"partnerId": partner_id, **_profile_body(**opts, require_password=True)}
    result = SessionClient(cfg).add_partner(body)
    click.echo(json.dumps(result, sort_keys=True))


@partner.command("update")
@click.argument("partner_id")
@_profile_options
@click.pass_context
@handled
def partner_update(ctx, partner_id, **opts):
    cfg = _cfg(ctx)
    result = SessionClient(cfg).update_partner(partner_id, _profile_body(**opts, require_password=False))
    click.echo(json.dumps(result, sort_keys=True))


@partner.command("show")
@click.argument("partner_id", required=False)
@click.pass_context
@handled
def partner_show(ctx, partner_id):
    cfg = _cfg(ctx)
    click.echo(json.dumps(SessionClient(cfg).get_partner(partner_id or cfg.partner_id), indent=2, sort_keys=True))


@main.group()
def route():
    """Manage VAN interconnect routes (admin)."""


@route.command("add")
@click.argument("pattern")
@click.argument("endpoint")
@click.option("--max-hops", type=int, default=None)
@click.pass_context
@handled
def route_add(ctx, pattern, endpoint, max_hops):
    cfg = _cfg(ctx)
    click.echo(json.dumps(SessionClient(cfg).add_route(pattern, endpoint, max_hops)))


@main.command()
@click.argument("message_id", type=int)
@click.pass_context
@handled
def retry(ctx, message_id):
    """Re-arm delivery of a parked message (admin)."""
    cfg = _cfg(ctx)
    SessionClient(cfg).retry(message_id)
    click.echo(f"{message_id} re-armed")


@main.command()
@click.option("--listen", default=None, help="Override host:port.")
@click.pass_context
@handled
def serve(ctx, listen):
    """Run the VAN service using the --config file as service config."""
    from .van.service import ServiceConfig, VanService

    cfg = ServiceConfig.from_file(ctx.obj["config_path"])
    if listen:
        cfg.listen = listen
    service = VanService(cfg).start()
    click.echo(f"VAN {cfg.van_id} serving on {service.url}", err=True)
    done = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: done.set())
    done.wait()
    service.stop()
    return EXIT_OK


if __name__ == "__main__":
    main()
