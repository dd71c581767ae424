import pytest

from edikit.secenv import wrap
from edikit.van.client import ApiError
from edikit.van.models import DepositHeader
from helpers import enroll, share_keys, van_ring, wait_for


@pytest.fixture
def ring(tmp_path):
    vans = van_ring(tmp_path, 3, max_hops=3)
    yield vans
    for v in vans:
        v.stop()


def _events(vans, action):
    return [(v.config.van_id, e) for v in vans for e in v.core.audit_trail() if e.action == action]


def test_unknown_partner_bounces_until_hop_limit(ring, tmp_path):
    v1, v2, v3 = ring
    a = enroll(v1, tmp_path, "A")
    env = wrap(b"ISA", "A", "A", "PUB-1", a.keystore).to_bytes()
    out = a.client.deposit(env, DepositHeader("A", "GHOST", "000000001", ("PO",)))
    assert out["status"] == "QUEUED"

    def settled():
        return [e for _, e in _events(ring, "REJECTED") if e.detail.get("reason") == "HOP_LIMIT"]

    (rejected,) = wait_for(settled, 5.0)
    # V3 records its relay once V1's 422 comes back
    forwarded = wait_for(lambda: len(_events(ring, "FORWARDED_REMOTE")) == 3 and _events(ring, "FORWARDED_REMOTE"), 3.0)
    forwarded.sort(key=lambda f: f[0])
    assert [van for van, _ in forwarded] == ["V1", "V2", "V3"]
    assert [e.detail["hops"] for _, e in forwarded] == [1, 2, 3]
    # the echo lands back on V1 and stops there
    (received,) = [e for e in v1.core.audit_trail(message_id=rejected.message_id) if e.action == "RECEIVED"]
    assert received.detail["hops"] == 3 and received.actor == "V3"
    assert not _events(ring, "DELIVERED")


def test_partner_on_second_van_gets_one_copy(ring, tmp_path):
    v1, v2, v3 = ring
    a = enroll(v1, tmp_path, "A")
    b = enroll(v2, tmp_path, "B", senders=["A"])
    share_keys(a, b)
    env = wrap(b"ISA", "A", "B", "PUB-1", a.keystore).to_bytes()
    a.client.deposit(env, DepositHeader("A", "B", "000000001", ("PO",)))
    assert wait_for(lambda: _events(ring, "FORWARDED_REMOTE"), 3.0)
    (item,) = wait_for(lambda: b.client.mailbox(), 3.0)
    assert item.payload == env and item.sender == "A"
    assert b.client.mailbox() == []
    delivered = _events(ring, "DELIVERED")
    assert [van for van, _ in delivered] == ["V2"]
    assert len(_events(ring, "FORWARDED_REMOTE")) == 1


def test_remote_rejection_is_audited_at_the_peer(ring, tmp_path):
    v1, v2, _ = ring
    a = enroll(v1, tmp_path, "A")
    enroll(v2, tmp_path, "B", senders=[])
    env = wrap(b"ISA", "A", "A", "PUB-1", a.keystore).to_bytes()
    a.client.deposit(env, DepositHeader("A", "B", "000000001", ("PO",)))
    assert wait_for(lambda: _events([v2], "REJECTED"), 3.0)
    (_, ev), = _events([v2], "REJECTED")
    assert ev.detail["reason"] == "UNAUTHORIZED_PARTNER"
    # custody passed to V2, so V1 records the relay as done
    assert wait_for(lambda: _events([v1], "FORWARDED_REMOTE"), 3.0)


def test_peer_role_cannot_be_used_by_partners(ring, tmp_path):
    v1 = ring[0]
    a = enroll(v1, tmp_path, "A")
    env = wrap(b"ISA", "A", "A", "PUB-1", a.keystore).to_bytes()
    with pytest.raises(ApiError) as exc:
        a.client.deposit(env, DepositHeader("Z", "GHOST", "000000001", ("PO",)))
    assert exc.value.status == 403
