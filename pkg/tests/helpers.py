"""Shared test scaffolding: live VANs, webhook stubs, partners, generators."""

from __future__ import annotations

import json
import os
import random
import signal
import string
import subprocess
import sys
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from edikit.interchange import FunctionalGroup, Interchange, Segment, TransactionSet
from edikit.secenv import Keystore
from edikit.translator import InternalDocument
from edikit.van.client import VanClient
from edikit.van.service import ServiceConfig, VanService

ADMIN_PW = "admin-secret"
ELEMENT_CHARS = "".join(c for c in string.printable if 0x20 <= ord(c) < 0x7F and c not in "*~:")
BODY_TAGS = ["BEG", "IT1", "CTT", "REF", "N1", "DTM", "PID", "Z9", "AB1"]


def start_van(tmp_path: Path, van_id: str = "VAN", **overrides) -> VanService:
    cfg = dict(
        data_dir=tmp_path / van_id, listen="127.0.0.1:0", van_id=van_id,
        admin_password=ADMIN_PW, loop_interval_ms=50, fsync=False, http_timeout=2.0,
    )
    cfg.update(overrides)
    return VanService(ServiceConfig(**cfg)).start()


def admin(svc: VanService) -> VanClient:
    c = VanClient(svc.url)
    c.login("admin", ADMIN_PW)
    return c


def wait_for(predicate, timeout: float = 5.0, interval: float = 0.01):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        value = predicate()
        if value:
            return value
        time.sleep(interval)
    return predicate()


class Stub:
    """HTTP endpoint that records every POST and answers with ``status``."""

    def __init__(self, status: int = 200):
        self.status = status
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *args):
                pass

            def do_POST(self):
                body = self.rfile.read(int(self.headers.get("Content-Length") or 0))
                with stub._lock:
                    stub.requests.append({"path": self.path, "headers": dict(self.headers),
                                          "body": body, "at": time.monotonic()})
                    status = stub.status
                self.send_response(status)
                self.send_header("Content-Length", "0")
                self.end_headers()

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.httpd.daemon_threads = True

    @property
    def url(self) -> str:
        return "http://127.0.0.1:%d/hook" % self.httpd.server_address[1]

    def start(self) -> "Stub":
        threading.Thread(target=self.httpd.serve_forever, daemon=True).start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()

    def json_bodies(self) -> list[dict]:
        with self._lock:
            return [json.loads(r["body"]) for r in self.requests]


@dataclass
class Party:
    pid: str
    password: str
    keystore: Keystore
    client: VanClient

    @property
    def public(self):
        return self.keystore.get(self.pid, "pub")


def enroll(svc: VanService, root: Path, pid: str, senders=(), doc_types=("PO", "INV", "FA"), **wire) -> Party:
    ks = Keystore(root / "keys" / pid)
    if not ks.has(pid, "priv"):
        ks.generate_pair(pid)
    password = f"pw-{pid}"
    admin(svc).add_partner({
        "partnerId": pid, "password": password, "authorizedSenders": list(senders),
        "allowedDocTypes": list(doc_types), "publicKey": ks.get(pid, "pub").material.hex(), **wire,
    })
    client = VanClient(svc.url)
    client.login(pid, password)
    return Party(pid, password, ks, client)


def share_keys(*parties: Party) -> None:
    for a in parties:
        for b in parties:
            if a is not b:
                a.keystore.import_public(b.pid, b.public.material)


# -- generators ------------------------------------------------------------------------


def _element(rng: random.Random, max_len: int = 12) -> str:
    return "".join(rng.choice(ELEMENT_CHARS) for _ in range(rng.randint(0, max_len)))


def _ident(rng: random.Random) -> str:
    return "".join(rng.choice(string.ascii_uppercase + string.digits) for _ in range(rng.randint(1, 10)))


def random_interchange(rng: random.Random) -> Interchange:
    groups = []
    for g in range(rng.randint(0, 3)):
        txns = []
        doc_type = rng.choice(["PO", "INV", "FA", "XX"])
        for t in range(rng.randint(0, 4)):
            body = [
                Segment(rng.choice(BODY_TAGS), [_element(rng) for _ in range(rng.randint(0, 5))])
                for _ in range(rng.randint(0, 6))
            ]
            txns.append(TransactionSet(doc_type, f"{t + 1:04d}", body))
        groups.append(FunctionalGroup(doc_type, f"{rng.randint(1, 9999):04d}", txns))
    return Interchange(
        _ident(rng), _ident(rng),
        f"{rng.randint(0, 99999999):08d}", f"{rng.randint(0, 9999):04d}",
        f"{rng.randint(1, 10**9 - 1):09d}", rng.random() < 0.5, groups,
    )


def _value(rng: random.Random) -> str:
    return "".join(rng.choice(ELEMENT_CHARS) for _ in range(rng.randint(1, 16)))


def random_po(rng: random.Random, max_items: int = 8) -> InternalDocument:
    header = {"poNumber": _value(rng), "poDate": f"{rng.randint(19900101, 20991231)}"}
    items = [
        {"sku": _value(rng), "qty": str(rng.randint(1, 999)), "unitPrice": f"{rng.randint(1, 99999) / 100:.2f}"}
        for _ in range(rng.randint(0, max_items))
    ]
    return InternalDocument("PO", header, items)


def van_ring(tmp_path: Path, n: int = 3, max_hops: int = 3, **overrides) -> list[VanService]:
    """Start ``n`` VANs where VAN i relays every non-local recipient to VAN i+1."""
    vans = [start_van(tmp_path, f"V{i + 1}", **overrides) for i in range(n)]
    for i, van in enumerate(vans):
        nxt = vans[(i + 1) % n]
        password = f"peer-{van.config.van_id}"
        admin(nxt).add_partner({"partnerId": van.config.van_id, "password": password, "role": "peer"})
        van.config.peer_credentials[nxt.url] = {"partnerId": van.config.van_id, "password": password}
        admin(van).add_route("*", nxt.url, max_hops)
    return vans


def cli_config(root: Path, svc: VanService, party: Party, **extra) -> Path:
    """Write a client config for ``party``; its password is read from PW_<id>."""
    path = root / "cfg" / party.pid / "config.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({
        "van": svc.url, "partner_id": party.pid, "keystore": str(party.keystore.root),
        "state_dir": "state", "password_env": f"PW_{party.pid}", **extra,
    }))
    return path


class VanProcess:
    """``edi serve`` in a child process, for crash injection."""

    def __init__(self, root: Path, van_id: str = "VAN", fsync: bool = True):
        self.config = root / f"{van_id}.json"
        self.config.write_text(json.dumps({
            "data_dir": van_id, "listen": "127.0.0.1:0", "van_id": van_id,
            "admin_password_env": "EDIKIT_TEST_ADMIN_PW", "fsync": fsync, "loop_interval_ms": 50,
        }))
        self.proc = None
        self.url = ""

    def start(self, timeout: float = 15.0) -> "VanProcess":
        env = dict(os.environ, EDIKIT_TEST_ADMIN_PW=ADMIN_PW)
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "edikit.cli", "--config", str(self.config), "serve"],
            stderr=subprocess.PIPE, stdout=subprocess.DEVNULL, env=env, text=True,
        )
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            line = self.proc.stderr.readline()
            if not line:
                break
            if " serving on " in line:
                self.url = line.rsplit(" ", 1)[1].strip()
                # keep draining so warnings cannot fill the pipe and stall the server
                threading.Thread(target=self.proc.stderr.read, daemon=True).start()
                return self
        self.proc.kill()
        raise RuntimeError(f"VAN process did not start (exit {self.proc.poll()})")

    def kill(self) -> None:
        self.proc.send_signal(signal.SIGKILL)
        self.proc.wait(10)

    def stop(self) -> None:
        if self.proc and self.proc.poll() is None:
            self.proc.terminate()
            self.proc.wait(10)
