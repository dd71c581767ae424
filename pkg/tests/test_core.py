import pytest

from edikit.interchange import parse_interchange, read_functional_ack
from edikit.secenv import Keystore, SecureEnvelope, unwrap
from edikit.van.core import NotifyAction, PushAction, RelayAction, VanCore
from edikit.van.journal import Journal
from edikit.van.models import (
    AlreadyAcknowledged,
    AuthFailed,
    DepositHeader,
    DuplicateControl,
    Forbidden,
    InterconnectRoute,
    Notification,
    PartnerProfile,
    SenderMismatch,
    SessionInvalid,
    UnknownPartner,
    WrongState,
    hash_password,
)
from oracles import chain_is_valid

PW = {pid: hash_password(f"pw-{pid}") for pid in ("A", "B", "C", "ADM")}
ENV = SecureEnvelope("PUB-1", "A", "B", b"", bytes(12), b"ct", bytes(32), b"sig").to_bytes()


class Clock:
    def __init__(self):
        self.t = 1_000_000.0

    def __call__(self):
        self.t += 0.001
        return self.t


@pytest.fixture
def clock():
    return Clock()


def build(clock, journal=None, keys=None, **profiles):
    van_key = None
    if keys is not None:
        van_key = keys.generate_pair("VAN")[1]
    core = VanCore("VAN", clock=clock, journal=journal, van_key=van_key, session_ttl=60)
    defaults = {
        "A": dict(authorized_senders={"B", "C"}, allowed_doc_types={"PO", "INV", "FA"}),
        "B": dict(authorized_senders={"A"}, allowed_doc_types={"PO", "FA"}),
        "C": dict(authorized_senders={"A"}, allowed_doc_types={"PO", "INV"}),
    }
    for pid, extra in profiles.items():
        defaults[pid] = {**defaults.get(pid, {}), **extra}
    for pid, kw in defaults.items():
        core.add_partner(PartnerProfile(pid, PW.get(pid) or hash_password(f"pw-{pid}"), **kw))
    core.add_partner(PartnerProfile("ADM", PW["ADM"], role="admin"))
    return core


def login(core, pid):
    return core.authenticate(pid, f"pw-{pid}").token


def hdr(sender="A", recipient="B", control="000000001", doc="PO", ack=False, hops=0):
    return DepositHeader(sender, recipient, control, (doc,), ack, hops)


def statuses(core, mid):
    return [e.action for e in core.audit_trail(message_id=mid) if e.is_transition]


# -- sessions ------------------------------------------------------------------------


def test_authenticate(clock):
    core = build(clock)
    tok = core.authenticate("A", "pw-A")
    assert abs(tok.expires - (clock.t + 60)) < 1
    with pytest.raises(AuthFailed):
        core.authenticate("A", "wrong")
    with pytest.raises(AuthFailed):
        core.authenticate("nobody", "pw")
    fails = [e for e in core.audit if e.action == "LOGIN_FAIL"]
    assert [e.detail["why"] for e in fails] == ["bad_password", "unknown_partner"]


def test_expired_session(clock):
    core = build(clock)
    tok = login(core, "A")
    clock.t += 61
    with pytest.raises(SessionInvalid):
        core.retrieve(tok)
    with pytest.raises(SessionInvalid):
        core.deposit("bogus", ENV, hdr())


# -- deposit and screening --------------------------------------------------------------


def test_deposit_queues(clock):
    core = build(clock)
    out = core.deposit(login(core, "A"), ENV, hdr())
    assert out.status == "QUEUED"
    assert statuses(core, out.message_id) == ["RECEIVED", "QUEUED"]


def test_duplicate_control(clock):
    core = build(clock)
    tok = login(core, "A")
    first = core.deposit(tok, ENV, hdr())
    with pytest.raises(DuplicateControl) as exc:
        core.deposit(tok, ENV, hdr())
    dup = exc.value.message_id
    assert core.message(first.message_id).status == "QUEUED"
    assert core.message(dup).status == "REJECTED" and core.message(dup).reason == "DUPLICATE_CONTROL"
    # same control from another sender is independent
    assert core.deposit(login(core, "C"), ENV, hdr("C", "A")).status == "QUEUED"


def test_rejected_control_can_be_reused(clock):
    core = build(clock)
    tok = login(core, "A")
    assert core.deposit(tok, ENV, hdr(doc="INV")).status == "REJECTED"
    assert core.deposit(tok, ENV, hdr()).status == "QUEUED"


def test_sender_mismatch(clock):
    core = build(clock)
    with pytest.raises(SenderMismatch):
        core.deposit(login(core, "A"), ENV, hdr(sender="B", recipient="A"))


@pytest.mark.parametrize("header, payload, reason", [
    (hdr("A", "B"), ENV, None),
    (hdr("C", "B"), ENV, "UNAUTHORIZED_PARTNER"),
    (hdr("A", "B", doc="INV"), ENV, "DOC_TYPE_NOT_ALLOWED"),
    (hdr("A", "B"), b"garbage bytes", "MALFORMED_ENVELOPE"),
    (hdr("A", "ZED"), ENV, "NO_SUCH_MAILBOX"),
])
def test_screening(clock, header, payload, reason):
    core = build(clock)
    out = core.deposit(login(core, header.sender), payload, header)
    assert out.reason == reason
    assert statuses(core, out.message_id)[-1] == ("QUEUED" if reason is None else "REJECTED")


def test_rejected_never_retrievable(clock):
    core = build(clock)
    core.deposit(login(core, "C"), ENV, hdr("C", "B"))
    assert core.retrieve(login(core, "B")) == []


# -- retrieval ------------------------------------------------------------------------------


def test_retrieve_and_no_redelivery(clock):
    core = build(clock)
    tok = login(core, "A")
    ids = [core.deposit(tok, ENV, hdr(control=f"00000000{i}")).message_id for i in (1, 2)]
    b = login(core, "B")
    got = core.retrieve(b)
    assert [i.message_id for i in got] == ids and all(i.payload == ENV for i in got)
    assert all(core.message(i).status == "DELIVERED" for i in ids)
    assert core.retrieve(b) == []
    assert [i.message_id for i in core.retrieve(b, redeliver=True)] == ids


def test_retrieve_doc_type_filter(clock):
    core = build(clock, B=dict(allowed_doc_types={"PO", "INV"}))
    tok = login(core, "A")
    po = core.deposit(tok, ENV, hdr(control="000000001")).message_id
    inv = core.deposit(tok, ENV, hdr(control="000000002", doc="INV")).message_id
    assert [i.message_id for i in core.retrieve(login(core, "B"), doc_type="PO")] == [po]
    assert core.message(inv).status == "QUEUED"


def test_retrieve_since_filter(clock):
    core = build(clock)
    tok = login(core, "A")
    core.deposit(tok, ENV, hdr(control="000000001"))
    cut = clock.t + 0.0005
    late = core.deposit(tok, ENV, hdr(control="000000002")).message_id
    assert [i.message_id for i in core.retrieve(login(core, "B"), since=cut)] == [late]


# -- delivery loop ------------------------------------------------------------------------


def test_forward_mode_push_flow(clock):
    core = build(clock, B=dict(delivery_mode="forward", endpoint="http://b.example/in"))
    mid = core.deposit(login(core, "A"), ENV, hdr()).message_id
    actions = core.deliver_pending()
    assert len(actions) == 1 and isinstance(actions[0], PushAction)
    assert actions[0].endpoint == "http://b.example/in" and actions[0].payload == ENV
    assert core.deliver_pending() == []  # in flight
    core.complete_push(mid, True)
    assert statuses(core, mid) == ["RECEIVED", "QUEUED", "DELIVERED"]
    assert core.deliver_pending() == []


def test_push_failure_backoff_and_park(clock):
    core = build(clock, B=dict(delivery_mode="forward", endpoint="http://b.example/in"))
    mid = core.deposit(login(core, "A"), ENV, hdr()).message_id
    waits = []
    for attempt in range(1, 4):
        (action,) = core.deliver_pending()
        core.complete_push(mid, False, "HTTP 503")
        m = core.message(mid)
        assert m.status == "QUEUED" and m.attempts == attempt
        waits.append(round(m.next_attempt - clock.t))
        assert core.deliver_pending() == []
        clock.t = m.next_attempt
    assert waits == [5, 25, 125]
    core.deliver_pending()
    core.complete_push(mid, False, "HTTP 503")
    assert core.message(mid).parked
    clock.t += 10_000
    assert core.deliver_pending() == []
    failed = [e for e in core.audit_trail(message_id=mid) if e.action == "PUSH_FAILED"]
    assert len(failed) == 4
    core.retry(mid)
    (action,) = core.deliver_pending()
    core.complete_push(mid, True)
    assert core.message(mid).status == "DELIVERED"


def test_retry_requires_admin(clock):
    core = build(clock)
    mid = core.deposit(login(core, "A"), ENV, hdr()).message_id
    with pytest.raises(Forbidden):
        core.retry(mid, token=login(core, "A"))
    core.retry(mid, token=login(core, "ADM"))


def test_notification_filter(clock):
    core = build(clock, B=dict(allowed_doc_types={"PO", "INV"},
                               notification=Notification("http://hook", frozenset({"PO"}))))
    tok = login(core, "A")
    inv = core.deposit(tok, ENV, hdr(control="000000001", doc="INV")).message_id
    assert core.deliver_pending() == []
    po = core.deposit(tok, ENV, hdr(control="000000002")).message_id
    (action,) = core.deliver_pending()
    assert isinstance(action, NotifyAction) and action.notice["message_id"] == po
    assert action.notice["sender"] == "A" and action.notice["doc_types"] == ["PO"]
    core.complete_notify(po, True)
    assert core.deliver_pending() == []
    # notification is advisory: the message waits for retrieve
    assert core.message(po).status == "QUEUED" and core.message(inv).status == "QUEUED"


def test_notification_single_retry_then_park(clock):
    core = build(clock, B=dict(notification=Notification("http://hook", frozenset({"PO"}))))
    mid = core.deposit(login(core, "A"), ENV, hdr()).message_id
    (a1,) = core.deliver_pending()
    core.complete_notify(mid, False, "HTTP 500")
    (a2,) = core.deliver_pending()
    core.complete_notify(mid, False, "HTTP 500")
    assert core.deliver_pending() == []
    failed = [e for e in core.audit_trail(message_id=mid) if e.action == "NOTIFY_FAILED"]
    assert [e.detail["parked"] for e in failed] == [False, True]


def test_exactly_once_across_push_and_retrieve(clock):
    core = build(clock, B=dict(delivery_mode="forward", endpoint="http://b.example/in"))
    tok = login(core, "A")
    ids = [core.deposit(tok, ENV, hdr(control=f"{i:09d}")).message_id for i in range(1, 11)]
    b = login(core, "B")
    actions = core.deliver_pending()
    assert len(actions) == 10
    assert core.retrieve(b) == []  # every message has a push in flight
    for a in actions[:5]:
        core.complete_push(a.message_id, True)
    for a in actions[5:]:
        core.complete_push(a.message_id, False, "HTTP 503")
    got = core.retrieve(b)
    assert {i.message_id for i in got} == {a.message_id for a in actions[5:]}
    clock.t += 1000
    assert core.deliver_pending() == []
    for mid in ids:
        assert statuses(core, mid).count("DELIVERED") == 1


# -- acknowledgment ---------------------------------------------------------------------------


def test_auto_ack_deposits_one_fa(clock, tmp_path):
    a_keys = Keystore(tmp_path / "a")
    a_pub, _ = a_keys.generate_pair("A")
    van_keys = Keystore(tmp_path / "van")
    core = build(clock, keys=van_keys, A=dict(public_key=a_pub.material.hex()), B=dict(auto_ack=True))
    a_keys.import_public("VAN", van_keys.get("VAN", "pub").material)
    mid = core.deposit(login(core, "A"), ENV, hdr(control="000000007", ack=True)).message_id
    core.retrieve(login(core, "B"))
    assert statuses(core, mid) == ["RECEIVED", "QUEUED", "DELIVERED", "ACKNOWLEDGED"]
    with pytest.raises(AlreadyAcknowledged):
        core.acknowledge(mid)
    (fa,) = core.retrieve(login(core, "A"))
    assert fa.sender == "VAN" and fa.doc_types == ("FA",) and fa.ref_control == "000000007"
    plaintext, report = unwrap(fa.payload, a_keys)
    assert report.signer == "VAN"
    assert read_functional_ack(parse_interchange(plaintext)).ref_control == "000000007"


def test_auto_ack_without_key_is_skipped(clock):
    core = build(clock, B=dict(auto_ack=True))
    mid = core.deposit(login(core, "A"), ENV, hdr(ack=True)).message_id
    core.retrieve(login(core, "B"))
    actions = [e.action for e in core.audit_trail(message_id=mid)]
    assert "ACK_SKIPPED" in actions and actions[-1] == "ACKNOWLEDGED"
    assert core.retrieve(login(core, "A")) == []


def test_acknowledge_states(clock):
    core = build(clock)
    mid = core.deposit(login(core, "A"), ENV, hdr(ack=True)).message_id
    with pytest.raises(WrongState):
        core.acknowledge(mid)
    b = login(core, "B")
    core.retrieve(b)
    with pytest.raises(Forbidden):
        core.acknowledge(mid, token=login(core, "C"))
    fa = core.acknowledge(mid, token=b, fa_payload=ENV, fa_control="000000050")
    assert fa.status == "QUEUED"
    with pytest.raises(AlreadyAcknowledged):
        core.acknowledge(mid, token=b, fa_payload=ENV, fa_control="000000051")
    (item,) = core.retrieve(login(core, "A"))
    assert item.sender == "B" and item.doc_types == ("FA",) and item.control == "000000050"
    assert item.ref_control == "000000001"


def test_no_fa_when_not_requested(clock):
    core = build(clock, B=dict(auto_ack=True))
    mid = core.deposit(login(core, "A"), ENV, hdr(ack=False)).message_id
    b = login(core, "B")
    core.retrieve(b)
    assert core.message(mid).status == "DELIVERED"
    assert core.acknowledge(mid, token=b) is None
    assert core.message(mid).status == "ACKNOWLEDGED" and core.retrieve(login(core, "A")) == []


# -- interconnect ----------------------------------------------------------------------------


def test_remote_route_and_relay(clock):
    core = build(clock)
    core.add_route(InterconnectRoute("X*", "http://van2", 3))
    out = core.deposit(login(core, "A"), ENV, hdr("A", "XENA"))
    assert out.status == "QUEUED"
    (action,) = core.deliver_pending()
    assert isinstance(action, RelayAction) and action.header.hop_count == 1
    assert action.endpoint == "http://van2"
    core.complete_relay(out.message_id, False, error="ConnectionError")
    assert core.message(out.message_id).status == "QUEUED"
    clock.t += 6
    (action,) = core.deliver_pending()
    core.complete_relay(out.message_id, True, 200)
    assert statuses(core, out.message_id) == ["RECEIVED", "QUEUED", "FORWARDED_REMOTE"]


def test_hop_limit(clock):
    core = build(clock)
    core.add_partner(PartnerProfile("PEER", hash_password("pw-PEER"), role="peer"))
    core.add_route(InterconnectRoute("X*", "http://van2", 3))
    out = core.deposit(login(core, "PEER"), ENV, hdr("A", "XENA", hops=3))
    assert (out.status, out.reason) == ("REJECTED", "HOP_LIMIT")
    out = core.deposit(login(core, "PEER"), ENV, hdr("A", "XENA", control="000000002", hops=2))
    assert out.status == "QUEUED"


def test_partner_cannot_set_hops(clock):
    core = build(clock)
    core.add_route(InterconnectRoute("X*", "http://van2", 3))
    out = core.deposit(login(core, "A"), ENV, hdr("A", "XENA", hops=3))
    assert out.status == "QUEUED" and core.message(out.message_id).hop_count == 0


def test_no_route(clock):
    core = build(clock)
    assert core.deposit(login(core, "A"), ENV, hdr("A", "XENA")).reason == "NO_SUCH_MAILBOX"


# -- audit, accounting, admin -------------------------------------------------------------------


def test_audit_chains_and_permissions(clock):
    core = build(clock)
    tok = login(core, "A")
    ok = core.deposit(tok, ENV, hdr()).message_id
    bad = core.deposit(tok, ENV, hdr(doc="INV", control="000000002")).message_id
    b = login(core, "B")
    core.retrieve(b)
    core.acknowledge(ok, token=b)
    assert statuses(core, ok) == ["RECEIVED", "QUEUED", "DELIVERED", "ACKNOWLEDGED"]
    assert statuses(core, bad) == ["RECEIVED", "REJECTED"]
    assert chain_is_valid(statuses(core, ok))
    with pytest.raises(Forbidden):
        core.audit_trail(partner="A", token=login(core, "C"))
    with pytest.raises(Forbidden):
        core.audit_trail(message_id=ok, token=login(core, "C"))
    own = core.audit_trail(token=login(core, "C"))
    assert all("C" in (e.actor, e.detail.get("sender"), e.detail.get("recipient"), e.detail.get("partner"))
               for e in own)
    assert core.audit_trail(partner="A", token=login(core, "ADM"))


def test_accounting(clock):
    core = build(clock)
    start = clock.t
    empty = core.accounting("A", start, start)
    assert (empty.messages_in, empty.messages_out, empty.bytes_in, empty.bytes_out) == (0, 0, 0, 0)
    payload = SecureEnvelope("PUB-1", "A", "B", b"", bytes(12), b"c" * (1000 - len(ENV) + 2), bytes(32),
                             b"sig").to_bytes()
    assert len(payload) == 1000
    core.deposit(login(core, "A"), payload, hdr())
    end = clock.t + 1
    a, b = core.accounting("A", start, end), core.accounting("B", start, end)
    assert (a.messages_out, a.bytes_out, a.messages_in) == (1, 1000, 0)
    assert (b.messages_in, b.bytes_in, b.messages_out) == (1, 1000, 0)
    with pytest.raises(UnknownPartner):
        core.accounting("nobody", start, end)
    with pytest.raises(Forbidden):
        core.accounting("A", start, end, token=login(core, "B"))


def test_partner_admin(clock):
    core = build(clock)
    with pytest.raises(Forbidden):
        core.add_partner(PartnerProfile("D", PW["A"]), token=login(core, "A"))
    core.add_partner(PartnerProfile("D", PW["A"]), token=login(core, "ADM"))
    core.update_partner("A", {"allowed_doc_types": ["PO"]}, token=login(core, "A"))
    assert core.get_partner("A").allowed_doc_types == {"PO"}
    with pytest.raises(Forbidden):
        core.update_partner("B", {"auto_ack": True}, token=login(core, "A"))
    with pytest.raises(Forbidden):
        core.update_partner("A", {"role": "admin"}, token=login(core, "A"))
    core.update_partner("A", {"password": "new"}, token=login(core, "A"))
    with pytest.raises(AuthFailed):
        core.authenticate("A", "pw-A")
    core.authenticate("A", "new")


# -- replay ----------------------------------------------------------------------------------


def test_replay_rebuilds_identical_state(clock, tmp_path):
    journal = Journal(tmp_path / "j.log", fsync=False)
    core = build(clock, journal=journal, B=dict(delivery_mode="forward", endpoint="http://b"))
    core.add_route(InterconnectRoute("X*", "http://van2", 3))
    tok = login(core, "A")
    for i in range(1, 6):
        core.deposit(tok, ENV, hdr(control=f"{i:09d}"))
    core.deposit(tok, ENV, hdr("A", "XENA", control="000000010"))
    for a in core.deliver_pending():
        if isinstance(a, PushAction):
            core.complete_push(a.message_id, a.message_id % 2 == 0, "HTTP 500")
        else:
            core.complete_relay(a.message_id, False, error="down")
    journal.close()
    images = []
    for _ in range(2):
        j = Journal(tmp_path / "j.log", fsync=False)
        images.append(VanCore("VAN", journal=j).snapshot())
        j.close()
    assert images[0] == images[1] == core.snapshot()
    parked = VanCore("VAN", journal=Journal(tmp_path / "j.log")).messages
    assert {m: v.attempts for m, v in parked.items()} == {m: v.attempts for m, v in core.messages.items()}
