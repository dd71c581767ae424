"""Signature authorization limits with supervisor countersignatures."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Iterable

from ..errors import EdiError
from .envelope import verify_detached
from .keystore import Keystore, MissingKey


class UnknownSigner(EdiError):
    code = "UNKNOWN_SIGNER"


class InvalidCountersignature(EdiError):
    code = "INVALID_COUNTERSIGNATURE"


class PolicyError(EdiError):
    code = "POLICY_ERROR"


@dataclass
class AuthorizationPolicy:
    limits: dict[str, int] = field(default_factory=dict)  # signer -> cents
    supervisors: dict[str, str] = field(default_factory=dict)  # signer -> supervisor

    def __post_init__(self):
        for signer, limit in self.limits.items():
            if not isinstance(limit, int) or limit < 0:
                raise PolicyError(f"limit for {signer} must be a non-negative integer of cents")
        for start in self.supervisors:
            seen = {start}
            node = start
            while node in self.supervisors:
                node = self.supervisors[node]
                if node in seen:
                    raise PolicyError(f"supervisor chain from {start} is cyclic")
                seen.add(node)

    def chain(self, signer: str) -> list[str]:
        out = []
        node = signer
        while node in self.supervisors:
            node = self.supervisors[node]
            out.append(node)
        return out

    @classmethod
    def from_json(cls, data: bytes | str) -> "AuthorizationPolicy":
        obj = json.loads(data)
        return cls({k: int(v) for k, v in obj.get("limits", {}).items()}, dict(obj.get("supervisors", {})))


@dataclass(frozen=True)
class Countersignature:
    signer: str
    signature: bytes


@dataclass(frozen=True)
class Decision:
    authorized: bool
    reason: str | None = None
    approved_by: str | None = None

    def __bool__(self):
        return self.authorized


def check_authorization(
    amount: int,
    signer: str,
    countersigs: Iterable[Countersignature],
    policy: AuthorizationPolicy,
    signed_data: bytes = b"",
    keystore: Keystore | None = None,
) -> Decision:
    """Decide whether ``signer`` may commit ``amount`` cents.

    The limit is inclusive.  Above it, a countersignature over
    ``signed_data`` from someone on the signer's supervisor chain whose own
    limit covers the amount is required.  Countersignatures from outside
    the chain are ignored; one that fails verification is an error.
    """
    if signer not in policy.limits:
        raise UnknownSigner(f"{signer!r} has no spending limit")
    if amount <= policy.limits[signer]:
        return Decision(True, approved_by=signer)

    chain = set(policy.chain(signer))
    for cs in countersigs:
        if cs.signer not in chain:
            continue
        if keystore is None:
            raise MissingKey("countersignature verification needs a keystore")
        if not verify_detached(signed_data, cs.signature, keystore.find(cs.signer, "pub")):
            raise InvalidCountersignature(f"countersignature by {cs.signer} does not verify")
        if amount <= policy.limits.get(cs.signer, -1):
            return Decision(True, approved_by=cs.signer)
    return Decision(False, reason="LIMIT_EXCEEDED")


def amount_cents(items: Iterable[dict], qty_field: str = "qty", price_field: str = "unitPrice") -> int:
    """Order total in integer cents, rounding each line to the cent."""
    total = Decimal(0)
    try:
        for item in items:
            total += (Decimal(item[qty_field]) * Decimal(item[price_field]) * 100).to_integral_value()
    except (KeyError, InvalidOperation) as exc:
        raise PolicyError(f"cannot price order line: {exc}") from None
    return int(total)
