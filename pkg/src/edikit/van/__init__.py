from .core import (
    DirBlobs,
    MemoryBlobs,
    NotifyAction,
    PushAction,
    RelayAction,
    Screening,
    VanCore,
    route_remote,
    screen,
)
from .journal import CorruptJournal, Journal, decode_records, encode_record, replay_journal
from .models import (
    AccountingReport,
    AlreadyAcknowledged,
    AuditEvent,
    AuthFailed,
    DepositHeader,
    DepositOutcome,
    DuplicateControl,
    Forbidden,
    InterconnectRoute,
    MailItem,
    Notification,
    PartnerProfile,
    SenderMismatch,
    SessionInvalid,
    UnknownMessage,
    UnknownPartner,
    VanMessage,
    WrongState,
    hash_password,
)
