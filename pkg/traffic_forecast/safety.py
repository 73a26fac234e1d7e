"""Helpers for echoing untrusted access-log text into diagnostics.

Access logs carry client addresses, so anything quoted back in a log message
has them masked first.
"""
from __future__ import annotations

import re

_IPV4_RE = re.compile(r"\b(\d{1,3})\.\d{1,3}\.\d{1,3}\.\d{1,3}\b")
_IPV6_RE = re.compile(r"\b(?:[0-9a-fA-F]{1,4}:){7}[0-9a-fA-F]{1,4}\b|[0-9a-fA-F:]*::[0-9a-fA-F:]*")
_MASK = "*"


def mask_addresses(value: str) -> str:
    """Replace IPv4 addresses by ``a.*.*.*`` and IPv6 addresses by ``*``."""

    masked = _IPV4_RE.sub(lambda m: f"{m.group(1)}.{_MASK}.{_MASK}.{_MASK}", value)
    return _IPV6_RE.sub(_MASK, masked)


def sanitize_for_log(value: str, *, limit: int = 256) -> str:
    """Return a printable, address-masked, length-limited copy of ``value``."""

    if limit <= 0:
        return ""
    sanitized = " ".join(value.replace("\r", " ").replace("\n", " ").split())
    sanitized = "".join(ch for ch in sanitized if ch.isprintable())
    sanitized = mask_addresses(sanitized)
    return sanitized[:limit]
