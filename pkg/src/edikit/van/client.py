"""HTTP client for the VAN API; used by the CLI and for VAN-to-VAN relay."""

from __future__ import annotations

import requests

from ..errors import EdiError
from .models import DepositHeader, MailItem
from .wire import decode_mailbox


class ApiError(EdiError):
    code = "API_ERROR"

    def __init__(self, status: int, body: dict):
        self.status = status
        self.body = body
        self.error = body.get("error", "HTTP_%d" % status)
        self.reason = body.get("reason")
        super().__init__(f"{self.error}: {body.get('message') or self.reason or ''}".strip())


class VanClient:
    def __init__(self, base_url: str, token: str | None = None, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout = timeout
        self.http = requests.Session()

    def _url(self, path: str) -> str:
        return f"{self.base_url}/v1{path}"

    def _headers(self, extra: dict | None = None) -> dict:
        headers = dict(extra or {})
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def _call(self, method: str, path: str, *, headers=None, raw=False, **kwargs):
        resp = self.http.request(method, self._url(path), headers=self._headers(headers),
                                 timeout=self.timeout, **kwargs)
        if resp.status_code != 200:
            try:
                body = resp.json()
            except ValueError:
                body = {"message": resp.text[:200]}
            raise ApiError(resp.status_code, body)
        return resp if raw else resp.json()

    def login(self, partner_id: str, password: str) -> str:
        body = self._call("POST", "/session", json={"partnerId": partner_id, "password": password})
        self.token = body["token"]
        return self.token

    def deposit(self, payload: bytes, header: DepositHeader) -> dict:
        headers = {
            "Content-Type": "application/octet-stream",
            "X-EDI-Sender": header.sender,
            "X-EDI-Recipient": header.recipient,
            "X-EDI-Control": header.control,
            "X-EDI-DocTypes": ",".join(header.doc_types),
            "X-EDI-AckRequested": "1" if header.ack_requested else "0",
        }
        if header.hop_count:
            headers["X-EDI-Hops"] = str(header.hop_count)
        return self._call("POST", "/deposit", headers=headers, data=payload)

    def mailbox(self, since: float | None = None, doc_type: str | None = None, redeliver: bool = False) -> list[MailItem]:
        params = {}
        if since is not None:
            params["since"] = since
        if doc_type:
            params["docType"] = doc_type
        if redeliver:
            params["redeliver"] = "1"
        resp = self._call("GET", "/mailbox", params=params, raw=True)
        return decode_mailbox(resp.headers.get("Content-Type", ""), resp.content)

    def ack(self, message_id: int, fa_payload: bytes | None = None, fa_control: str | None = None) -> dict:
        headers = {"Content-Type": "application/octet-stream"}
        if fa_control:
            headers["X-EDI-Control"] = fa_control
        return self._call("POST", f"/messages/{message_id}/ack", headers=headers, data=fa_payload or b"")

    def message(self, message_id: int) -> dict:
        return self._call("GET", f"/messages/{message_id}")

    def retry(self, message_id: int) -> dict:
        return self._call("POST", f"/messages/{message_id}/retry")

    def audit(self, message_id=None, partner_id=None, start=None, end=None) -> list[dict]:
        params = {k: v for k, v in
                  {"messageId": message_id, "partnerId": partner_id, "from": start, "to": end}.items()
                  if v is not None}
        return self._call("GET", "/audit", params=params)["events"]

    def accounting(self, partner_id: str, start: float, end: float) -> dict:
        return self._call("GET", "/accounting", params={"partnerId": partner_id, "from": start, "to": end})

    def add_partner(self, profile: dict) -> dict:
        return self._call("POST", "/partners", json=profile)

    def update_partner(self, partner_id: str, changes: dict) -> dict:
        return self._call("PUT", f"/partners/{partner_id}", json=changes)

    def get_partner(self, partner_id: str) -> dict:
        return self._call("GET", f"/partners/{partner_id}")

    def add_route(self, pattern: str, endpoint: str, max_hops: int | None = None) -> dict:
        body = {"pattern": pattern, "endpoint": endpoint}
        if max_hops is not None:
            body["maxHops"] = max_hops
        return self._call("POST", "/routes", json=body)

    def van_key(self) -> dict:
        return self._call("GET", "/van-key")

    def health(self) -> dict:
        return self._call("GET", "/health")
