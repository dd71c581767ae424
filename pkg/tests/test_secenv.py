import json
import os
import random

import pytest

from edikit.secenv import (
    AuthorizationPolicy,
    Countersignature,
    DecryptFailure,
    EnvelopeError,
    InvalidCountersignature,
    KeyRecord,
    Keystore,
    MalformedEnvelope,
    MissingKey,
    SecureEnvelope,
    SignatureInvalid,
    UnknownSigner,
    UnknownSuite,
    amount_cents,
    check_authorization,
    compute_digest,
    sign_detached,
    unwrap,
    verify_detached,
    wrap,
)
from edikit.secenv.authz import PolicyError
from edikit.secenv.keystore import KeystoreError
from oracles import sha256


@pytest.fixture
def pair(tmp_path):
    a, b = Keystore(tmp_path / "a"), Keystore(tmp_path / "b")
    a.generate_pair("A")
    b.generate_pair("B")
    a.import_public("B", b.get("B", "pub").material)
    b.import_public("A", a.get("A", "pub").material)
    psk = a.generate_psk("A", "B")
    b.add(psk)
    return a, b


def test_digest_vectors():
    assert compute_digest(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert compute_digest(b"abc").hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    for n in (55, 56, 64, 119, 1000):
        data = os.urandom(n)
        assert compute_digest(data) == sha256(data) == compute_digest(data)


@pytest.mark.parametrize("suite", ["PUB-1", "PSK-1"])
@pytest.mark.parametrize("size", [0, 1, 200, 1 << 20])
def test_round_trip(pair, suite, size):
    a, b = pair
    m = os.urandom(size)
    env = wrap(m, "A", "B", suite, a)
    plaintext, report = unwrap(env.to_bytes(), b)
    assert plaintext == m
    assert report.ok and report.decrypted_ok and report.digest_ok and report.signature_ok
    assert report.signer == env.sender_key_id


def test_unknown_suite(pair):
    with pytest.raises(UnknownSuite):
        wrap(b"x", "A", "B", "PUB-9", pair[0])


def test_fresh_nonce_same_digest(pair):
    a, _ = pair
    e1, e2 = wrap(b"same", "A", "B", "PUB-1", a), wrap(b"same", "A", "B", "PUB-1", a)
    assert e1.nonce != e2.nonce and e1.ciphertext != e2.ciphertext
    assert e1.plaintext_digest == e2.plaintext_digest


def test_nonce_uniqueness_over_10k_wraps(pair):
    a, _ = pair
    nonces = {wrap(b"m", "A", "B", "PSK-1", a).nonce for _ in range(10_000)}
    assert len(nonces) == 10_000


def _replace(env: SecureEnvelope, **kw) -> SecureEnvelope:
    fields = {k: getattr(env, k) for k in (
        "suite", "sender_key_id", "recipient_key_id", "wrapped_key", "nonce",
        "ciphertext", "plaintext_digest", "signature", "version")}
    fields.update(kw)
    return SecureEnvelope(**fields)


def _flip(b: bytes, i: int = 0) -> bytes:
    return b[:i] + bytes([b[i] ^ 0x01]) + b[i + 1:]


@pytest.mark.parametrize("suite", ["PUB-1", "PSK-1"])
def test_flipped_ciphertext_is_decrypt_failure(pair, suite):
    a, b = pair
    env = wrap(b"hello world", "A", "B", suite, a)
    with pytest.raises(DecryptFailure) as exc:
        unwrap(_replace(env, ciphertext=_flip(env.ciphertext, 3)), b)
    assert not exc.value.report.decrypted_ok and exc.value.report.signature_ok


@pytest.mark.parametrize("suite", ["PUB-1", "PSK-1"])
def test_flipped_digest_is_signature_invalid(pair, suite):
    a, b = pair
    env = wrap(b"hello world", "A", "B", suite, a)
    with pytest.raises(SignatureInvalid) as exc:
        unwrap(_replace(env, plaintext_digest=_flip(env.plaintext_digest)), b)
    assert not exc.value.report.signature_ok and exc.value.report.signer is None


def test_substituted_signature(tmp_path, pair):
    a, b = pair
    c = Keystore(tmp_path / "c")
    c.generate_pair("C")
    c.import_public("B", b.get("B", "pub").material)
    b.import_public("C", c.get("C", "pub").material)
    from_a = wrap(b"order", "A", "B", "PUB-1", a)
    from_c = wrap(b"order", "C", "B", "PUB-1", c)
    with pytest.raises(SignatureInvalid):
        unwrap(_replace(from_a, signature=from_c.signature), b)
    # relabelling C's envelope as A's fails too: the key ids are signed
    with pytest.raises(EnvelopeError):
        unwrap(_replace(from_c, sender_key_id="A"), b)


def test_missing_keys(tmp_path, pair):
    a, _ = pair
    lone = Keystore(tmp_path / "lone")
    with pytest.raises(MissingKey):
        wrap(b"x", "A", "B", "PUB-1", lone)
    env = wrap(b"x", "A", "B", "PUB-1", a)
    with pytest.raises(MissingKey):
        unwrap(env, lone)


@pytest.mark.parametrize("data", [b"", b"XXXX", b"EDSE\x00\x00", b"EDSE" + b"\x00" * 36])
def test_malformed_envelopes(data):
    with pytest.raises(MalformedEnvelope):
        SecureEnvelope.from_bytes(data)


def test_trailing_bytes_rejected(pair):
    a, _ = pair
    data = wrap(b"x", "A", "B", "PUB-1", a).to_bytes()
    with pytest.raises(MalformedEnvelope):
        SecureEnvelope.from_bytes(data + b"\0")
    assert SecureEnvelope.from_bytes(data).to_bytes() == data


def test_sign_verify(pair, tmp_path):
    a, b = pair
    d = b"purchase order 42"
    sig = sign_detached(d, a.get("A", "priv"))
    assert verify_detached(d, sig, a.get("A", "pub"))
    assert not verify_detached(d + b"!", sig, a.get("A", "pub"))
    assert not verify_detached(d, sig, b.get("B", "pub"))
    with pytest.raises(MissingKey):
        sign_detached(d, a.get("A", "pub"))


def test_keystore_layout_and_pins(tmp_path):
    ks = Keystore(tmp_path / "k")
    ks.generate_pair("A")
    ks.generate_psk("A", "B")
    names = sorted(p.name for p in (tmp_path / "k").iterdir())
    assert "A.pub" in names and "A.priv" in names and "psk_A_B.psk" in names and "suites.json" in names
    assert len((tmp_path / "k" / "A.pub").read_bytes()) == 64
    assert len((tmp_path / "k" / "psk_A_B.psk").read_bytes()) == 32
    # a reopened store sees the same keys
    again = Keystore(tmp_path / "k")
    assert again.get("A", "priv").material == ks.get("A", "priv").material
    pins = json.loads((tmp_path / "k" / "suites.json").read_text())
    pins["PUB-1"]["signature"] = "RSA-2048"
    (tmp_path / "k" / "suites.json").write_text(json.dumps(pins))
    with pytest.raises(KeystoreError):
        Keystore(tmp_path / "k")


def test_key_record_sizes():
    with pytest.raises(KeystoreError):
        KeyRecord("x", "x", "psk", b"short", 0.0)
    with pytest.raises(KeystoreError):
        KeyRecord("x", "x", "pub", bytes(32), 0.0)


# -- authorization ---------------------------------------------------------------------

ORDER = b"PO 42 total 30000.00"


@pytest.fixture
def officers(tmp_path):
    ks = Keystore(tmp_path / "officers")
    ks.generate_pair("officer")
    ks.generate_pair("super")
    ks.generate_pair("other")
    policy = AuthorizationPolicy(
        {"officer": 25_000_00, "super": 100_000_00, "other": 1_000_000_00},
        {"officer": "super"},
    )
    return ks, policy


def test_limit_exceeded_without_countersig(officers):
    ks, policy = officers
    d = check_authorization(30_000_00, "officer", [], policy, ORDER, ks)
    assert not d.authorized and d.reason == "LIMIT_EXCEEDED"


def test_supervisor_countersig_authorizes(officers):
    ks, policy = officers
    cs = Countersignature("super", sign_detached(ORDER, ks.get("super", "priv")))
    d = check_authorization(30_000_00, "officer", [cs], policy, ORDER, ks)
    assert d.authorized and d.approved_by == "super"


def test_limit_is_inclusive(officers):
    ks, policy = officers
    assert check_authorization(25_000_00, "officer", [], policy).authorized
    assert not check_authorization(25_000_01, "officer", [], policy).authorized


def test_off_chain_countersig_ignored(officers):
    ks, policy = officers
    cs = Countersignature("other", sign_detached(ORDER, ks.get("other", "priv")))
    assert not check_authorization(30_000_00, "officer", [cs], policy, ORDER, ks).authorized


def test_invalid_countersig(officers):
    ks, policy = officers
    cs = Countersignature("super", sign_detached(b"a different order", ks.get("super", "priv")))
    with pytest.raises(InvalidCountersignature):
        check_authorization(30_000_00, "officer", [cs], policy, ORDER, ks)


def test_unknown_signer(officers):
    with pytest.raises(UnknownSigner):
        check_authorization(1, "nobody", [], officers[1])


def test_supervisor_limit_must_cover(officers):
    ks, policy = officers
    cs = Countersignature("super", sign_detached(ORDER, ks.get("super", "priv")))
    assert not check_authorization(100_000_01, "officer", [cs], policy, ORDER, ks).authorized


def test_authorization_monotone(officers):
    ks, policy = officers
    cs = [Countersignature("super", sign_detached(ORDER, ks.get("super", "priv")))]
    rng = random.Random(1)
    for _ in range(300):
        amount = rng.randint(0, 150_000_00)
        if check_authorization(amount, "officer", cs, policy, ORDER, ks).authorized:
            smaller = rng.randint(0, amount)
            assert check_authorization(smaller, "officer", cs, policy, ORDER, ks).authorized


def test_policy_validation():
    with pytest.raises(PolicyError):
        AuthorizationPolicy({"a": -1})
    with pytest.raises(PolicyError):
        AuthorizationPolicy({"a": 1, "b": 1}, {"a": "b", "b": "a"})


def test_amount_cents():
    assert amount_cents([{"qty": "3", "unitPrice": "10.005"}, {"qty": "1", "unitPrice": "0.10"}]) == 3002 + 10
