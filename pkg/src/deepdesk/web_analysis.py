"""Web-knowledge analyzer: intent expansion, search, fetch, summarize.

The planner only ever sees the one summary material each call returns; the
full page markdown is chunked into the store for the writer.  Searching uses
the raw query; the expanded intent steers extraction and summarization
prompts only.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .config import WebAnalysisConfig
from .errors import AnalyzerError
from .gateway import Gateway, ModelRole
from .search import PageFetcher, SearchClient, WebDocument
from .store import ChunkStore
from .trajectory import RunTrace

logger = logging.getLogger(__name__)

_FETCH_WORKERS = 4

INTENT_PROMPT = """\
You expand terse research queries into a detailed search intent.
Current subtask: {subtask}
Prior findings so far:
{history}

Query: {query}

Write one paragraph spelling out exactly what information should be located:
entities, time ranges, geographies, and the kind of evidence wanted.
Reply with the intent paragraph only."""

SUMMARY_PROMPT = """\
Summarize the evidence below for the subtask: {subtask}
Query: {query}
Search intent: {intent}

Extract key data, descriptions, and conclusions relevant to the intent.
After the summary, list every source you drew on, one per line, as
`CITED: <url>`. Only cite the urls listed below.

{documents}"""


@dataclass
class SearchIntent:
    uka_query: str
    expanded_intent: str
    subtask_id: str


class WebAnalyzer:
    def __init__(self, gateway: Gateway, search_client: SearchClient,
                 fetcher: PageFetcher, chunks: ChunkStore, trace: RunTrace,
                 config: WebAnalysisConfig | None = None):
        self.gateway = gateway
        self.search_client = search_client
        self.fetcher = fetcher
        self.chunks = chunks
        self.trace = trace
        self.config = config or WebAnalysisConfig()

    # -- steps ---------------------------------------------------------------

    def generate_intent(self, query: str, subtask_title: str, subtask_id: str,
                        history: str) -> SearchIntent:
        if not query.strip():
            raise AnalyzerError("web analyzer received an empty query")
        prompt = INTENT_PROMPT.format(subtask=subtask_title, history=history or "(none)",
                                      query=query)
        intent = ""
        for _ in range(2):
            intent = self.gateway.chat(
                ModelRole.planner_chat, [{"role": "user", "content": prompt}]).strip()
            if intent:
                break
        if not intent:
            intent = query
            self.trace.log_event("warning", f"intent generation empty twice; using raw query {query!r}")
        if len(intent) <= len(query):
            self.trace.log_event("flag", f"search intent not longer than query {query!r}")
        return SearchIntent(uka_query=query, expanded_intent=intent, subtask_id=subtask_id)

    def retrieve_pages(self, query: str, intent: SearchIntent,
                       max_results: int | None = None) -> list[WebDocument]:
        count = max_results or self.config.max_results
        hits = self.search_client.search(query, count)  # raises ToolCallFailed on API errors
        timeout = self.config.fetch_timeout_s
        if not hits:
            return []
        with ThreadPoolExecutor(max_workers=min(_FETCH_WORKERS, len(hits))) as pool:
            docs = list(pool.map(lambda h: self.fetcher.fetch(h.url, timeout), hits))
        for hit, doc in zip(hits, docs):
            if not doc.title:
                doc.title = hit.title
            if not doc.ok:
                self.trace.log_event("fetch-failed", doc.url)
        return docs

    def summarize(self, documents: list[WebDocument], subtask_title: str,
                  subtask_id: str, query: str, intent: SearchIntent) -> dict:
        ok_docs = [d for d in documents if d.ok]
        material_id = self.trace.next_material_id()
        if not ok_docs:
            material = {
                "id": material_id,
                "kind": "web_summary",
                "subtask_id": subtask_id,
                "query": query,
                "summary": "No sources could be retrieved for this query.",
                "cited_urls": [],
                "no_sources": True,
            }
            self.trace.register_material(material)
            return material

        doc_sections = []
        for doc in ok_docs:
            doc_sections.append(f"SOURCE {doc.url}\nTITLE {doc.title}\n{doc.body}")
        prompt = SUMMARY_PROMPT.format(
            subtask=subtask_title, query=query, intent=intent.expanded_intent,
            documents="\n\n".join(doc_sections))
        response = self.gateway.chat(ModelRole.planner_chat,
                                     [{"role": "user", "content": prompt}])
        summary_lines: list[str] = []
        cited: list[str] = []
        for line in response.splitlines():
            if line.strip().startswith("CITED:"):
                cited.append(line.split("CITED:", 1)[1].strip())
            else:
                summary_lines.append(line)
        fetched = {d.url for d in ok_docs}
        unknown = [u for u in cited if u not in fetched]
        if unknown:
            raise AnalyzerError(
                f"summary cites urls that were never fetched: {unknown}")

        for doc in ok_docs:
            self.chunks.store_text(doc.url, subtask_id, doc.body or "")

        material = {
            "id": material_id,
            "kind": "web_summary",
            "subtask_id": subtask_id,
            "query": query,
            "summary": "\n".join(summary_lines).strip(),
            "cited_urls": cited,
            "no_sources": False,
        }
        self.trace.register_material(material)
        return material

    # -- planner-facing entry ---------------------------------------------------

    def analyze(self, query: str, subtask_title: str, subtask_id: str,
                history: str) -> dict:
        """Run the full intent -> search -> summarize pipeline for one call."""
        intent = self.generate_intent(query, subtask_title, subtask_id, history)
        documents = self.retrieve_pages(query, intent)
        return self.summarize(documents, subtask_title, subtask_id, query, intent)
