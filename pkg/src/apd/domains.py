"""Domain extraction and search-index trust checks."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Protocol
from urllib.parse import urlsplit

import httpx

from .errors import InvalidUrl, ProviderError


@dataclass(frozen=True)
class DomainReport:
    row_id: str
    domain: str
    indexed: bool
    provider: str


def extract_domain(url: str) -> str:
    """Normalized domain of a URL: lowercase host, no port, one leading
    "www." label stripped. No registrable-domain reduction is attempted."""
    try:
        parts = urlsplit(url)
        host = parts.hostname
    except ValueError as exc:
        raise InvalidUrl(f"unparseable url {url!r}: {exc}") from exc
    if not parts.scheme or not host:
        raise InvalidUrl(f"url must carry a scheme and host: {url!r}")
    if host.startswith("www.") and len(host) > 4:
        host = host[4:]
    return host


class IndexProvider(Protocol):
    name: str

    def is_indexed(self, domain: str) -> bool: ...


class OfflineIndexProvider:
    """Index membership from a local allowlist file (one domain per line,
    '#' comments)."""

    name = "offline"

    def __init__(self, allowlist):
        if isinstance(allowlist, (set, frozenset, list, tuple)):
            self.domains = {d.strip().lower() for d in allowlist if d.strip()}
        else:
            self.domains = self._load(allowlist)

    @staticmethod
    def _load(path) -> set[str]:
        domains = set()
        try:
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line and not line.startswith("#"):
                        domains.add(line.lower())
        except OSError as exc:
            raise ProviderError(f"cannot read allowlist {path}: {exc}") from exc
        return domains

    def is_indexed(self, domain: str) -> bool:
        return domain in self.domains


class LiveIndexProvider:
    """Site-restricted search against a live endpoint; a domain counts as
    indexed iff at least one result is reported."""

    name = "live"

    def __init__(self, base_url: str, api_key: str = "", timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout

    def is_indexed(self, domain: str) -> bool:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = httpx.get(
                f"{self.base_url}/search",
                params={"q": f"site:{domain}"},
                headers=headers,
                timeout=self.timeout,
            )
        except httpx.HTTPError as exc:
            raise ProviderError(f"search provider unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(f"search provider HTTP {resp.status_code}")
        try:
            results = resp.json()["results"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed search response: {exc}") from exc
        return len(results) > 0


class CachedIndexProvider:
    """Per-run memo so duplicate domains cost one provider query.

    Failures are not cached; a later call may succeed. Safe under
    concurrent insertion (identical values, last write wins).
    """

    def __init__(self, inner: IndexProvider):
        self.inner = inner
        self.name = inner.name
        self._cache: dict[str, bool] = {}
        self._lock = threading.Lock()

    def is_indexed(self, domain: str) -> bool:
        with self._lock:
            if domain in self._cache:
                return self._cache[domain]
        value = self.inner.is_indexed(domain)
        with self._lock:
            self._cache[domain] = value
        return value


def check_indexed(domain: str, provider: IndexProvider) -> bool:
    """True iff the provider reports the domain as indexed; provider
    failures propagate as ProviderError, never as a boolean."""
    return provider.is_indexed(domain)
