"""Secure envelope: encrypt, digest and sign one payload.

Wire layout (all integers big-endian)::

    "EDSE"
    frame(version) frame(suite) frame(sender_key_id) frame(recipient_key_id)
    frame(wrapped_key) frame(nonce) frame(ciphertext) frame(plaintext_digest)
    frame(signature)

where ``frame(x) = uint32(len(x)) || x``.  Nothing may follow the last frame.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from ..errors import EdiError
from .keystore import KEY_ID_RE, KeyRecord, Keystore, MissingKey

MAGIC = b"EDSE"
VERSION = "1"
SUITES = ("PSK-1", "PUB-1")
NONCE_LEN = 12
DIGEST_LEN = 32
_FRAMES = 9
_WRAP_NONCE = bytes(NONCE_LEN)


@dataclass
class VerificationReport:
    decrypted_ok: bool = False
    digest_ok: bool = False
    signature_ok: bool = False
    signer: str | None = None

    @property
    def ok(self) -> bool:
        return self.decrypted_ok and self.digest_ok and self.signature_ok


class EnvelopeError(EdiError):
    code = "ENVELOPE_ERROR"

    def __init__(self, message: str = "", report: VerificationReport | None = None):
        super().__init__(message)
        self.report = report or VerificationReport()


class MalformedEnvelope(EnvelopeError):
    code = "MALFORMED_ENVELOPE"


class UnknownSuite(EnvelopeError):
    code = "UNKNOWN_SUITE"


class DecryptFailure(EnvelopeError):
    code = "DECRYPT_FAILURE"


class DigestMismatch(EnvelopeError):
    code = "DIGEST_MISMATCH"


class SignatureInvalid(EnvelopeError):
    code = "SIGNATURE_INVALID"


def compute_digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class SecureEnvelope:
    suite: str
    sender_key_id: str
    recipient_key_id: str
    wrapped_key: bytes
    nonce: bytes
    ciphertext: bytes
    plaintext_digest: bytes
    signature: bytes
    version: str = VERSION

    def header_bytes(self) -> bytes:
        return f"{self.version}\n{self.suite}\n{self.sender_key_id}\n{self.recipient_key_id}\n".encode()

    def signing_input(self) -> bytes:
        return self.header_bytes() + self.plaintext_digest

    def to_bytes(self) -> bytes:
        parts = [MAGIC]
        for value in (
            self.version.encode(), self.suite.encode(), self.sender_key_id.encode(),
            self.recipient_key_id.encode(), self.wrapped_key, self.nonce, self.ciphertext,
            self.plaintext_digest, self.signature,
        ):
            parts.append(struct.pack(">I", len(value)))
            parts.append(value)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SecureEnvelope":
        if data[:4] != MAGIC:
            raise MalformedEnvelope("missing envelope magic")
        frames = []
        pos = 4
        for _ in range(_FRAMES):
            if pos + 4 > len(data):
                raise MalformedEnvelope("envelope truncated in frame header")
            (n,) = struct.unpack_from(">I", data, pos)
            pos += 4
            if pos + n > len(data):
                raise MalformedEnvelope("envelope frame overruns input")
            frames.append(data[pos:pos + n])
            pos += n
        if pos != len(data):
            raise MalformedEnvelope("trailing bytes after envelope")

        version, suite, sender, recipient, wrapped, nonce, ct, digest, sig = frames
        try:
            version, suite, sender, recipient = (f.decode("ascii") for f in (version, suite, sender, recipient))
        except UnicodeDecodeError:
            raise MalformedEnvelope("non-ASCII envelope header") from None
        if version != VERSION:
            raise MalformedEnvelope(f"unsupported envelope version {version!r}")
        if not KEY_ID_RE.match(sender) or not KEY_ID_RE.match(recipient):
            raise MalformedEnvelope("bad key id in envelope header")
        if len(nonce) != NONCE_LEN or len(digest) != DIGEST_LEN:
            raise MalformedEnvelope("bad nonce or digest length")
        return cls(suite, sender, recipient, wrapped, nonce, ct, digest, sig, version)


def _hkdf(secret: bytes, info: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=info).derive(secret)


def _psk_keys(psk: KeyRecord) -> tuple[bytes, bytes]:
    return _hkdf(psk.material, b"edikit PSK-1 enc"), _hkdf(psk.material, b"edikit PSK-1 mac")


def _kek(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    # both public values go into info so a flipped (masked) bit still changes the KEK
    return _hkdf(shared, b"edikit PUB-1 wrap" + eph_pub + recipient_pub)


def sign_detached(data: bytes, signer: KeyRecord) -> bytes:
    if signer.kind != "priv":
        raise MissingKey(f"signing needs a private key, got {signer.kind} {signer.key_id}")
    return Ed25519PrivateKey.from_private_bytes(signer.material[:32]).sign(data)


def verify_detached(data: bytes, signature: bytes, public: KeyRecord) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public.material[:32]).verify(signature, data)
        return True
    except (InvalidSignature, ValueError):
        return False


def wrap(plaintext: bytes, sender: str, recipient: str, suite: str, keystore: Keystore) -> SecureEnvelope:
    """Encrypt ``plaintext`` from ``sender`` to ``recipient`` and sign the result.

    ``sender``/``recipient`` are partner ids or key ids.  PSK-1 uses the
    pair's pre-shared key; PUB-1 encrypts under a fresh content key wrapped
    for the recipient's public key and signs with the sender's private key.
    """
    if suite not in SUITES or suite not in keystore.suites:
        raise UnknownSuite(f"unknown cipher suite {suite!r}")
    digest = compute_digest(plaintext)
    nonce = secrets.token_bytes(NONCE_LEN)

    if suite == "PSK-1":
        psk = keystore.psk_for(sender, recipient)
        enc_key, mac_key = _psk_keys(psk)
        env = SecureEnvelope(suite, psk.key_id, psk.key_id, b"", nonce, b"", digest, b"")
        ct = AESGCM(enc_key).encrypt(nonce, plaintext, env.header_bytes())
        sig = hmac.new(mac_key, env.signing_input(), hashlib.sha256).digest()
        return SecureEnvelope(suite, psk.key_id, psk.key_id, b"", nonce, ct, digest, sig)

    signer = keystore.find(sender, "priv")
    target = keystore.find(recipient, "pub")
    env = SecureEnvelope(suite, signer.key_id, target.key_id, b"", nonce, b"", digest, b"")
    aad = env.header_bytes()

    cek = secrets.token_bytes(32)
    eph = X25519PrivateKey.generate()
    eph_pub = eph.public_key().public_bytes_raw()
    shared = eph.exchange(X25519PublicKey.from_public_bytes(target.material[32:]))
    wrapped = eph_pub + AESGCM(_kek(shared, eph_pub, target.material[32:])).encrypt(_WRAP_NONCE, cek, aad)

    ct = AESGCM(cek).encrypt(nonce, plaintext, aad)
    sig = sign_detached(env.signing_input(), signer)
    return SecureEnvelope(suite, signer.key_id, target.key_id, wrapped, nonce, ct, digest, sig)


def unwrap(env: SecureEnvelope | bytes, keystore: Keystore) -> tuple[bytes, VerificationReport]:
    """Decrypt and verify an envelope.

    Plaintext is returned only when decryption, digest and signature all
    check out.  Any failure raises an :class:`EnvelopeError` whose
    ``report`` records which checks passed; no plaintext is attached.
    """
    report = VerificationReport()
    if isinstance(env, (bytes, bytearray)):
        env = SecureEnvelope.from_bytes(bytes(env))
    if env.suite not in SUITES or env.suite not in keystore.suites:
        raise UnknownSuite(f"unknown cipher suite {env.suite!r}", report)

    aad = env.header_bytes()
    plaintext = None

    if env.suite == "PSK-1":
        if env.sender_key_id != env.recipient_key_id or env.wrapped_key:
            raise MalformedEnvelope("PSK-1 envelope must name one shared key and carry no wrapped key", report)
        enc_key, mac_key = _psk_keys(keystore.get(env.sender_key_id, "psk"))
        expected = hmac.new(mac_key, env.signing_input(), hashlib.sha256).digest()
        report.signature_ok = hmac.compare_digest(expected, env.signature)
        try:
            plaintext = AESGCM(enc_key).decrypt(env.nonce, env.ciphertext, aad)
            report.decrypted_ok = True
        except InvalidTag:
            pass
    else:
        own = keystore.get(env.recipient_key_id, "priv")
        peer = keystore.get(env.sender_key_id, "pub")
        report.signature_ok = verify_detached(env.signing_input(), env.signature, peer)
        try:
            eph_pub, blob = env.wrapped_key[:32], env.wrapped_key[32:]
            if len(eph_pub) != 32:
                raise InvalidTag
            own_x = X25519PrivateKey.from_private_bytes(own.material[32:])
            own_pub = own_x.public_key().public_bytes_raw()
            shared = own_x.exchange(X25519PublicKey.from_public_bytes(eph_pub))
            cek = AESGCM(_kek(shared, eph_pub, own_pub)).decrypt(_WRAP_NONCE, blob, aad)
            plaintext = AESGCM(cek).decrypt(env.nonce, env.ciphertext, aad)
            report.decrypted_ok = True
        except (InvalidTag, ValueError):
            pass

    if plaintext is not None:
        report.digest_ok = hmac.compare_digest(compute_digest(plaintext), env.plaintext_digest)
    if report.signature_ok:
        report.signer = env.sender_key_id

    if not report.signature_ok:
        raise SignatureInvalid(f"signature by {env.sender_key_id} does not verify", report)
    if not report.decrypted_ok:
        raise DecryptFailure("ciphertext failed authentication", report)
    if not report.digest_ok:
        raise DigestMismatch("plaintext digest differs from the signed digest", report)
    return plaintext, report
