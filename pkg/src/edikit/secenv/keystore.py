"""Local key registry.

Keys live as raw binary files ``<key_id>.{psk,pub,priv}`` in one directory,
next to ``index.json`` (owner and creation time per key) and ``suites.json``
(the primitives each cipher suite is pinned to).  A keypair file holds two
32-byte halves: the Ed25519 signing key followed by the X25519 key-agreement
key.
"""

from __future__ import annotations

import json
import os
import re
import secrets
import time
from dataclasses import dataclass
from pathlib import Path

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey

from ..errors import EdiError

KEY_ID_RE = re.compile(r"[A-Za-z0-9_.-]{1,64}\Z")
KINDS = ("psk", "pub", "priv")
PSK_LEN = 32
PAIR_LEN = 64

SUITE_REGISTRY = {
    "PSK-1": {
        "hash": "SHA-256",
        "cipher": "AES-256-GCM",
        "kdf": "HKDF-SHA256",
        "signature": "HMAC-SHA256",
    },
    "PUB-1": {
        "hash": "SHA-256",
        "cipher": "AES-256-GCM",
        "kdf": "HKDF-SHA256",
        "key_wrap": "X25519",
        "signature": "Ed25519",
    },
}


class MissingKey(EdiError):
    code = "MISSING_KEY"


class KeystoreError(EdiError):
    code = "KEYSTORE_ERROR"


@dataclass(frozen=True)
class KeyRecord:
    key_id: str
    owner: str
    kind: str  # psk | pub | priv
    material: bytes
    created: float

    def __post_init__(self):
        if not KEY_ID_RE.match(self.key_id):
            raise KeystoreError(f"bad key id {self.key_id!r}")
        if self.kind not in KINDS:
            raise KeystoreError(f"bad key kind {self.kind!r}")
        expected = PSK_LEN if self.kind == "psk" else PAIR_LEN
        if len(self.material) != expected:
            raise KeystoreError(f"{self.kind} key {self.key_id} must be {expected} bytes")

    def __repr__(self):
        return f"KeyRecord({self.key_id!r}, owner={self.owner!r}, kind={self.kind!r})"


def psk_key_id(a: str, b: str) -> str:
    x, y = sorted((a, b))
    return f"psk_{x}_{y}"


def _pub_from_priv(material: bytes) -> bytes:
    ed = Ed25519PrivateKey.from_private_bytes(material[:32])
    xk = X25519PrivateKey.from_private_bytes(material[32:])
    raw = serialization.Encoding.Raw, serialization.PublicFormat.Raw
    return ed.public_key().public_bytes(*raw) + xk.public_key().public_bytes(*raw)


class Keystore:
    """Key records indexed by (key_id, kind); optionally backed by a directory."""

    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root is not None else None
        self._records: dict[tuple[str, str], KeyRecord] = {}
        self.suites = dict(SUITE_REGISTRY)
        if self.root is not None:
            self._load()

    # -- persistence --

    def _index_path(self) -> Path:
        return self.root / "index.json"

    def _load(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        suites_file = self.root / "suites.json"
        if suites_file.exists():
            pinned = json.loads(suites_file.read_text())
            for suite_id, prims in pinned.items():
                if SUITE_REGISTRY.get(suite_id) != prims:
                    raise KeystoreError(
                        f"suites.json pins {suite_id} to {prims}, this build implements "
                        f"{SUITE_REGISTRY.get(suite_id)}"
                    )
            self.suites = {k: SUITE_REGISTRY[k] for k in pinned}
        else:
            suites_file.write_text(json.dumps(SUITE_REGISTRY, indent=2) + "\n")

        index = json.loads(self._index_path().read_text()) if self._index_path().exists() else {}
        for path in sorted(self.root.iterdir()):
            kind = path.suffix.lstrip(".")
            if kind not in KINDS or not KEY_ID_RE.match(path.stem):
                continue
            meta = index.get(f"{path.stem}.{kind}", {})
            self._records[(path.stem, kind)] = KeyRecord(
                key_id=path.stem,
                owner=meta.get("owner", path.stem),
                kind=kind,
                material=path.read_bytes(),
                created=meta.get("created", path.stat().st_mtime),
            )

    def _save(self, rec: KeyRecord) -> None:
        if self.root is None:
            return
        path = self.root / f"{rec.key_id}.{rec.kind}"
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600 if rec.kind != "pub" else 0o644)
        with os.fdopen(fd, "wb") as fh:
            fh.write(rec.material)
        index = json.loads(self._index_path().read_text()) if self._index_path().exists() else {}
        index[f"{rec.key_id}.{rec.kind}"] = {"owner": rec.owner, "created": rec.created}
        tmp = self._index_path().with_suffix(".tmp")
        tmp.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, self._index_path())

    # -- mutation --

    def add(self, rec: KeyRecord) -> KeyRecord:
        self._records[(rec.key_id, rec.kind)] = rec
        self._save(rec)
        return rec

    def generate_pair(self, key_id: str, owner: str | None = None) -> tuple[KeyRecord, KeyRecord]:
        ed = Ed25519PrivateKey.generate()
        xk = X25519PrivateKey.generate()
        raw = serialization.Encoding.Raw, serialization.PrivateFormat.Raw, serialization.NoEncryption()
        priv = ed.private_bytes(*raw) + xk.private_bytes(*raw)
        now = time.time()
        owner = owner or key_id
        return (
            self.add(KeyRecord(key_id, owner, "pub", _pub_from_priv(priv), now)),
            self.add(KeyRecord(key_id, owner, "priv", priv, now)),
        )

    def generate_psk(self, a: str, b: str, owner: str | None = None) -> KeyRecord:
        return self.add(KeyRecord(psk_key_id(a, b), owner or a, "psk", secrets.token_bytes(PSK_LEN), time.time()))

    def import_public(self, key_id: str, material: bytes, owner: str | None = None) -> KeyRecord:
        return self.add(KeyRecord(key_id, owner or key_id, "pub", material, time.time()))

    # -- lookup --

    def get(self, key_id: str, kind: str) -> KeyRecord:
        try:
            return self._records[(key_id, kind)]
        except KeyError:
            raise MissingKey(f"no {kind} key {key_id!r} in keystore") from None

    def has(self, key_id: str, kind: str) -> bool:
        return (key_id, kind) in self._records

    def records(self) -> list[KeyRecord]:
        return list(self._records.values())

    def find(self, party: str, kind: str) -> KeyRecord:
        """Key of ``kind`` named ``party``, else the newest one owned by ``party``."""
        if (party, kind) in self._records:
            return self._records[(party, kind)]
        owned = [r for r in self._records.values() if r.kind == kind and r.owner == party]
        if not owned:
            raise MissingKey(f"no {kind} key for {party!r}")
        return max(owned, key=lambda r: r.created)

    def psk_for(self, a: str, b: str) -> KeyRecord:
        return self.get(psk_key_id(a, b), "psk")
