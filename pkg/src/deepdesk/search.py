"""Pluggable web-search drivers and page fetchers.

The search contract is request ``{query, count}`` and response
``[{url, title, snippet}]``.  ``HttpSearchClient`` speaks that as
JSON-over-HTTP; ``StaticSearchClient`` serves fixtures and offline runs.
Fetching is a separate seam so pages can come from the network or from a
canned map.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

from .errors import ToolCallFailed
from .htmlmd import html_title, html_to_markdown


@dataclass(frozen=True)
class SearchHit:
    url: str
    title: str
    snippet: str


@dataclass
class WebDocument:
    """A fetched page converted to markdown. Body is present iff status is ok."""

    url: str
    title: str
    body: str | None
    status: str  # ok | failed

    @property
    def ok(self) -> bool:
        return self.status == "ok"


class SearchClient(ABC):
    @abstractmethod
    def search(self, query: str, count: int) -> list[SearchHit]:
        ...


class HttpSearchClient(SearchClient):
    def __init__(self, endpoint: str, session=None, timeout_s: float = 15.0):
        import requests

        self.endpoint = endpoint
        self.session = session or requests.Session()
        self.timeout_s = timeout_s

    def search(self, query: str, count: int) -> list[SearchHit]:
        import requests

        try:
            resp = self.session.post(
                self.endpoint, json={"query": query, "count": count},
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            data = resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise ToolCallFailed(f"search request failed: {exc}") from exc
        hits = data.get("results", data if isinstance(data, list) else [])
        return [
            SearchHit(url=h["url"], title=h.get("title", ""), snippet=h.get("snippet", ""))
            for h in hits[:count]
        ]


class StaticSearchClient(SearchClient):
    """Substring-keyed canned results; a query nothing matches returns the default."""

    def __init__(self, rules: list[tuple[str, list[SearchHit]]],
                 default: list[SearchHit] | None = None):
        self.rules = rules
        self.default = default if default is not None else []

    @classmethod
    def from_entries(cls, entries: list[dict]) -> "StaticSearchClient":
        rules = []
        for entry in entries:
            hits = [SearchHit(h["url"], h.get("title", ""), h.get("snippet", ""))
                    for h in entry.get("results", [])]
            rules.append((entry.get("contains", ""), hits))
        return cls(rules)

    def search(self, query: str, count: int) -> list[SearchHit]:
        for contains, hits in self.rules:
            if contains in query:
                return hits[:count]
        return self.default[:count]


class PageFetcher(ABC):
    @abstractmethod
    def fetch(self, url: str, timeout_s: float) -> WebDocument:
        ...


class HttpFetcher(PageFetcher):
    def __init__(self, session=None):
        import requests

        self.session = session or requests.Session()

    def fetch(self, url: str, timeout_s: float) -> WebDocument:
        import requests

        try:
            resp = self.session.get(url, timeout=timeout_s)
            resp.raise_for_status()
            html = resp.text
        except requests.RequestException:
            return WebDocument(url=url, title="", body=None, status="failed")
        return WebDocument(
            url=url,
            title=html_title(html),
            body=html_to_markdown(html),
            status="ok",
        )


class StaticFetcher(PageFetcher):
    """Serves canned HTML by exact url; unknown urls report a failed fetch."""

    def __init__(self, pages: dict[str, str]):
        self.pages = dict(pages)

    def fetch(self, url: str, timeout_s: float) -> WebDocument:
        html = self.pages.get(url)
        if html is None:
            return WebDocument(url=url, title="", body=None, status="failed")
        return WebDocument(
            url=url, title=html_title(html), body=html_to_markdown(html), status="ok")
