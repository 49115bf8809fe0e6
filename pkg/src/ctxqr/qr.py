"""Decoded QR payload handling: add Wi-Fi context to URLs and read it back.

Two ways of carrying context are supported. Inline mode appends one ``ap``
query parameter per access point (``ap=AA-BB-CC-DD-EE-FF:-40``). Stored mode
appends a single ``context_id`` that keys a server-side scan record.

Rewrites splice text onto the original URL instead of re-serializing it, so
scheme, host, path, existing query and fragment survive byte for byte.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import re
from dataclasses import dataclass, field
from urllib.parse import parse_qsl, urlsplit

from .errors import (
    AmbiguousContext,
    EmptyFingerprint,
    InvalidObservation,
    MalformedApParam,
    MalformedContextId,
    MissingSalt,
    NoContext,
    NotAUrl,
)
from .fingerprint import ApObservation, Fingerprint, canonical_mac

AP_PARAM = "ap"
CONTEXT_PARAM = "context_id"
DEFAULT_MAX_APS = 16

_AP_VALUE = re.compile(r"^(?P<mac>[0-9A-F]{2}(?:-[0-9A-F]{2}){5}):(?P<rssi>-?[0-9]{1,3})$")
_AP_PSEUDO_VALUE = re.compile(r"^(?P<token>[0-9a-f]{16}):(?P<rssi>-?[0-9]{1,3})$")
_CONTEXT_ID = re.compile(r"^[A-Za-z0-9_-]{1,64}$")


class PayloadKind(str, enum.Enum):
    HTTP_URL = "http-url"
    OTHER = "other"


class ContextMode(str, enum.Enum):
    INLINE = "inline"
    STORED = "stored"


@dataclass(frozen=True)
class QrPayload:
    text: str
    kind: PayloadKind


def classify_payload(text: str) -> QrPayload:
    """Tell absolute http(s) URLs apart from every other QR payload."""
    return QrPayload(text, PayloadKind.HTTP_URL if _is_http_url(text) else PayloadKind.OTHER)


def _is_http_url(text: str) -> bool:
    if not isinstance(text, str) or text != text.strip() or any(c.isspace() for c in text):
        return False
    try:
        parts = urlsplit(text)
    except ValueError:
        return False
    return parts.scheme.lower() in ("http", "https") and bool(parts.netloc) and bool(parts.hostname)


def is_valid_context_id(value: str) -> bool:
    return isinstance(value, str) and bool(_CONTEXT_ID.match(value))


@dataclass(frozen=True)
class RewriteConfig:
    mode: ContextMode = ContextMode.INLINE
    max_aps: int = DEFAULT_MAX_APS
    pseudonymize: bool = False
    salt: bytes | str | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", ContextMode(self.mode))
        if isinstance(self.max_aps, bool) or not isinstance(self.max_aps, int) or self.max_aps < 1:
            raise ValueError(f"max_aps must be a positive integer, got {self.max_aps!r}")
        if self.pseudonymize and not self.salt:
            raise MissingSalt("pseudonymization requires a non-empty salt")


def pseudonymize_mac(mac: str, salt: bytes | str) -> str:
    """Keyed hash of a MAC address: first 8 bytes of HMAC-SHA256, as 16 hex digits."""
    if not salt:
        raise MissingSalt("pseudonymization requires a non-empty salt")
    key = salt.encode("utf-8") if isinstance(salt, str) else bytes(salt)
    digest = hmac.new(key, canonical_mac(mac).encode("ascii"), hashlib.sha256).digest()
    return digest[:8].hex()


def _append_param(url: str, param: str) -> str:
    base, hash_, fragment = url.partition("#")
    if "?" in base:
        sep = "" if base.endswith(("?", "&")) else "&"
    else:
        sep = "?"
    return f"{base}{sep}{param}{hash_}{fragment}"


def require_http_url(url: str) -> None:
    if not _is_http_url(url):
        raise NotAUrl(f"payload is not an absolute http(s) URL: {url!r}")


def ap_param_values(fp: Fingerprint, cfg: RewriteConfig = RewriteConfig()) -> list[str]:
    """The ``ap`` values inline mode emits for ``fp``, strongest first."""
    values = []
    for obs in fp.observations[: cfg.max_aps]:
        key = pseudonymize_mac(obs.bssid, cfg.salt) if cfg.pseudonymize else obs.bssid
        values.append(f"{key}:{obs.rssi}")
    return values


def rewrite_url_inline(url: str, fp: Fingerprint, cfg: RewriteConfig = RewriteConfig()) -> str:
    """Append the fingerprint to ``url`` as repeated ``ap`` parameters.

    Only the ``cfg.max_aps`` strongest APs are carried. SSIDs are dropped.
    """
    require_http_url(url)
    if not len(fp):
        raise EmptyFingerprint("cannot rewrite with an empty fingerprint")
    query = "&".join(f"{AP_PARAM}={v}" for v in ap_param_values(fp, cfg))
    return _append_param(url, query)


def rewrite_url_stored(url: str, context_id: str) -> str:
    """Append ``context_id=<id>`` to ``url``."""
    require_http_url(url)
    if not is_valid_context_id(context_id):
        raise MalformedContextId(f"context id must match {_CONTEXT_ID.pattern}, got {context_id!r}")
    return _append_param(url, f"{CONTEXT_PARAM}={context_id}")


def rewrite_payload(text: str, cfg: RewriteConfig, *, fingerprint: Fingerprint | None = None,
                    context_id: str | None = None) -> str:
    """Rewrite a decoded payload per ``cfg.mode``; non-URL payloads come back untouched."""
    if classify_payload(text).kind is not PayloadKind.HTTP_URL:
        return text
    if cfg.mode is ContextMode.STORED:
        if context_id is None:
            raise MalformedContextId("stored mode needs a context id")
        return rewrite_url_stored(text, context_id)
    if fingerprint is None:
        raise EmptyFingerprint("inline mode needs a fingerprint")
    return rewrite_url_inline(text, fingerprint, cfg)


@dataclass(frozen=True)
class ContextParams:
    """Context recovered from a landing URL.

    Inline URLs written with pseudonymized BSSIDs cannot be turned back into
    a Fingerprint; their ``(token, rssi)`` pairs land in ``pseudonymous_aps``
    instead. Every other query parameter, including ``lat``/``lng``, is kept
    in ``extra``.
    """

    mode: ContextMode
    fingerprint: Fingerprint | None = None
    context_id: str | None = None
    pseudonymous_aps: tuple[tuple[str, int], ...] = ()
    extra: dict[str, list[str]] = field(default_factory=dict)


def parse_context_params(url: str) -> ContextParams:
    """Inverse of both rewrites: read ``context_id`` or the ``ap`` list from ``url``."""
    require_http_url(url)
    pairs = parse_qsl(urlsplit(url).query, keep_blank_values=True)
    ids = [v for k, v in pairs if k == CONTEXT_PARAM]
    aps = [v for k, v in pairs if k == AP_PARAM]
    extra: dict[str, list[str]] = {}
    for k, v in pairs:
        if k not in (AP_PARAM, CONTEXT_PARAM):
            extra.setdefault(k, []).append(v)

    if ids and aps:
        raise AmbiguousContext("URL carries both context_id and ap parameters")
    if len(ids) > 1:
        raise AmbiguousContext("URL carries more than one context_id")
    if ids:
        if not is_valid_context_id(ids[0]):
            raise MalformedContextId(f"bad context_id value {ids[0]!r}")
        return ContextParams(ContextMode.STORED, context_id=ids[0], extra=extra)
    if not aps:
        raise NoContext("URL carries neither context_id nor ap parameters")

    observations: list[ApObservation] = []
    pseudo: list[tuple[str, int]] = []
    for value in aps:
        m = _AP_VALUE.match(value)
        if m:
            try:
                observations.append(ApObservation(m["mac"], int(m["rssi"])))
            except InvalidObservation as exc:
                raise MalformedApParam(f"ap={value!r}: {exc}") from None
            continue
        m = _AP_PSEUDO_VALUE.match(value)
        if m:
            rssi = int(m["rssi"])
            if not -120 <= rssi <= 0:
                raise MalformedApParam(f"ap={value!r}: RSSI out of range")
            pseudo.append((m["token"], rssi))
            continue
        raise MalformedApParam(f"malformed ap value {value!r}")
    if observations and pseudo:
        raise MalformedApParam("mix of raw and pseudonymized ap values")
    if pseudo:
        if len({t for t, _ in pseudo}) != len(pseudo):
            raise MalformedApParam("duplicate pseudonymized AP")
        return ContextParams(ContextMode.INLINE, pseudonymous_aps=tuple(pseudo), extra=extra)
    try:
        fp = Fingerprint(tuple(observations))
    except InvalidObservation as exc:
        raise MalformedApParam(str(exc)) from None
    return ContextParams(ContextMode.INLINE, fingerprint=fp, extra=extra)
