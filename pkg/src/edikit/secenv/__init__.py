from .authz import (
    AuthorizationPolicy,
    Countersignature,
    Decision,
    InvalidCountersignature,
    UnknownSigner,
    amount_cents,
    check_authorization,
)
from .envelope import (
    DecryptFailure,
    DigestMismatch,
    EnvelopeError,
    MalformedEnvelope,
    SecureEnvelope,
    SignatureInvalid,
    UnknownSuite,
    VerificationReport,
    compute_digest,
    sign_detached,
    unwrap,
    verify_detached,
    wrap,
)
from .keystore import KeyRecord, Keystore, MissingKey, psk_key_id

__all__ = [
    "AuthorizationPolicy", "Countersignature", "Decision", "InvalidCountersignature",
    "UnknownSigner", "amount_cents", "check_authorization", "DecryptFailure",
    "DigestMismatch", "EnvelopeError", "MalformedEnvelope", "SecureEnvelope",
    "SignatureInvalid", "UnknownSuite", "VerificationReport", "compute_digest",
    "sign_detached", "unwrap", "verify_detached", "wrap", "KeyRecord", "Keystore",
    "MissingKey", "psk_key_id",
]
