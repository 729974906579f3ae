"""Report writer: outline-then-fill subtask results, then final refinement.

Chat models tend to drop figures when drowning in web text, so the outline
pass pins every figure and table to a section slot before any prose is
written, and a mechanical fallback inserts anything the fill pass still
omits.  Refinement that loses more than half the assets is rejected in
favour of plain concatenation.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .bundle import external_figure_refs, local_asset_refs
from .errors import PlanningError
from .gateway import Gateway, ModelRole
from .store import ChunkStore
from .trajectory import RunTrace

logger = logging.getLogger(__name__)

_CHUNK_CONTEXT_BUDGET = 6000
_DROP_THRESHOLD = 0.5

OUTLINE_PROMPT = """\
Design the section outline for a write-up of this research subtask.
Subtask: {subtask}

Materials gathered (keep every figure and table unless you have a strong
reason to drop one):
{materials}

Reply with one or more sections in exactly this format:
SECTION: <heading>
MATERIALS: <comma-separated material ids, or ->
Optionally drop a material with a line: DROP: <id> :: <reason>"""

FILL_PROMPT = """\
Write the markdown body for this research subtask, following the outline.
Subtask: {subtask}

Outline:
{outline}

Materials:
{materials}

Source excerpts for citation:
{chunks}

Rules:
- Start each section with `## <heading>`.
- Embed each slotted figure with `![<description>]({{asset path}})` exactly as
  listed in the material.
- Reproduce slotted result tables as markdown tables.
- Resolve conflicts between sources explicitly, citing both.
- Cite web sources by url.
Reply with the markdown body only."""

REFINE_PROMPT = """\
Compose the final research report for the question below from the finished
subtask write-ups. Restructure freely, remove redundancy, resolve logical
inconsistencies, and keep the figures and tables.
Question: {question}

{bodies}

Reply with the complete markdown report, starting with a `# ` title."""

FALLBACK_INTRO_PROMPT = """\
Write a short introduction and a short conclusion for a research report on:
{question}

The report covers:
{titles}

Reply in exactly this format:
INTRO:
<introduction>
CONCLUSION:
<conclusion>"""


@dataclass
class OutlineSection:
    heading: str
    material_ids: list[str] = field(default_factory=list)


@dataclass
class Outline:
    subtask_id: str
    sections: list[OutlineSection]
    drops: list[tuple[str, str]] = field(default_factory=list)  # (material_id, reason)


@dataclass
class SubtaskResult:
    subtask_id: str
    body: str
    citations: list[str] = field(default_factory=list)


def _material_line(m: dict) -> str:
    parts = [f"id={m['id']}", f"kind={m['kind']}"]
    if m.get("asset_paths"):
        parts.append("assets=" + ",".join(m["asset_paths"]))
    if m.get("insight"):
        parts.append("insight=" + m["insight"])
    if m.get("summary"):
        parts.append("summary=" + m["summary"][:400])
    if m.get("table_markdown"):
        parts.append("table:\n" + m["table_markdown"])
    if m.get("cited_urls"):
        parts.append("sources=" + ",".join(m["cited_urls"]))
    return "\n".join(parts)


class Writer:
    def __init__(self, gateway: Gateway, chunks: ChunkStore, trace: RunTrace):
        self.gateway = gateway
        self.chunks = chunks
        self.trace = trace

    # -- outline --------------------------------------------------------------

    def build_outline(self, subtask_id: str, subtask_title: str,
                      materials: list[dict]) -> Outline:
        prompt = OUTLINE_PROMPT.format(
            subtask=subtask_title,
            materials="\n\n".join(_material_line(m) for m in materials),
        )
        response = self.gateway.chat(ModelRole.writer_chat,
                                     [{"role": "user", "content": prompt}])
        known = {m["id"] for m in materials}
        sections: list[OutlineSection] = []
        drops: list[tuple[str, str]] = []
        for line in response.splitlines():
            line = line.strip()
            if line.startswith("SECTION:"):
                sections.append(OutlineSection(heading=line.split(":", 1)[1].strip()))
            elif line.startswith("MATERIALS:") and sections:
                raw = line.split(":", 1)[1].strip()
                if raw and raw != "-":
                    for mid in (x.strip() for x in raw.split(",")):
                        if mid in known:
                            sections[-1].material_ids.append(mid)
                        elif mid:
                            self.trace.log_event(
                                "warning", f"outline names unknown material {mid}")
            elif line.startswith("DROP:"):
                body = line.split(":", 1)[1]
                mid, _, reason = body.partition("::")
                mid = mid.strip()
                if mid in known:
                    drops.append((mid, reason.strip() or "no reason given"))
                    self.trace.log_event("material-dropped",
                                         f"{mid}: {reason.strip() or 'no reason given'}")
        if not sections:
            # mechanical outline: one section holding everything
            sections = [OutlineSection(heading=subtask_title,
                                       material_ids=[m["id"] for m in materials])]
            self.trace.log_event("warning", "outline unparseable; using mechanical outline")
        # every validated figure/table must land in a slot unless dropped
        placed = {mid for s in sections for mid in s.material_ids}
        dropped = {mid for mid, _ in drops}
        for m in materials:
            if m["kind"] in ("figure", "table", "analysis") and m.get("verdict") == "valid":
                if m["id"] not in placed and m["id"] not in dropped:
                    sections[-1].material_ids.append(m["id"])
                    self.trace.log_event("outline-autoplaced", m["id"])
        return Outline(subtask_id=subtask_id, sections=sections, drops=drops)

    # -- fill ---------------------------------------------------------------------

    def _chunk_context(self, subtask_id: str) -> str:
        pieces: list[str] = []
        used = 0
        for chunk in self.chunks.fetch(subtask_id):
            snippet = f"[{chunk.source_url}]\n{chunk.text}"
            if used + len(snippet) > _CHUNK_CONTEXT_BUDGET:
                break
            pieces.append(snippet)
            used += len(snippet)
        return "\n\n".join(pieces) if pieces else "(none)"

    @staticmethod
    def _required_refs(outline: Outline, materials_by_id: dict[str, dict]) -> dict[str, list[str]]:
        """Asset references each outline slot demands, keyed by section heading."""
        required: dict[str, list[str]] = {}
        dropped = {mid for mid, _ in outline.drops}
        for section in outline.sections:
            refs = []
            for mid in section.material_ids:
                if mid in dropped:
                    continue
                material = materials_by_id[mid]
                refs.extend(material.get("asset_paths") or [])
                if material.get("table_markdown"):
                    refs.append(f"table:{mid}")
            if refs:
                required[section.heading] = refs
        return required

    @staticmethod
    def _missing_refs(body: str, required: dict[str, list[str]],
                      materials_by_id: dict[str, dict]) -> list[tuple[str, str]]:
        missing = []
        for heading, refs in required.items():
            for ref in refs:
                if ref.startswith("table:"):
                    mid = ref.split(":", 1)[1]
                    first_row = materials_by_id[mid]["table_markdown"].splitlines()[0].strip()
                    if first_row not in body:
                        missing.append((heading, ref))
                elif ref not in body:
                    missing.append((heading, ref))
        return missing

    def _insert_mechanically(self, body: str, heading: str, ref: str,
                             materials_by_id: dict[str, dict]) -> str:
        if ref.startswith("table:"):
            mid = ref.split(":", 1)[1]
            block = materials_by_id[mid]["table_markdown"]
        else:
            owner = next((m for m in materials_by_id.values()
                          if ref in (m.get("asset_paths") or [])), None)
            caption = (owner or {}).get("insight") or "analysis figure"
            block = f"![{caption}]({ref})"
        pattern = re.compile(rf"^(#{{1,6}}\s+{re.escape(heading)}\s*)$", re.MULTILINE)
        match = pattern.search(body)
        if match:
            # place at the end of that section (before the next heading)
            next_heading = re.compile(r"^#{1,6}\s+", re.MULTILINE)
            after = next_heading.search(body, match.end())
            insert_at = after.start() if after else len(body)
            return body[:insert_at].rstrip() + "\n\n" + block + "\n\n" + body[insert_at:]
        return body.rstrip() + "\n\n" + block + "\n"

    def write_subtask(self, subtask_id: str, subtask_title: str,
                      materials: list[dict]) -> SubtaskResult:
        if not materials:
            raise PlanningError(f"write_subtask called with no materials for {subtask_id}")
        outline = self.build_outline(subtask_id, subtask_title, materials)
        materials_by_id = {m["id"]: m for m in materials}
        outline_text = "\n".join(
            f"SECTION: {s.heading} (materials: {', '.join(s.material_ids) or '-'})"
            for s in outline.sections
        )
        prompt = FILL_PROMPT.format(
            subtask=subtask_title, outline=outline_text,
            materials="\n\n".join(_material_line(m) for m in materials),
            chunks=self._chunk_context(subtask_id),
        )
        body = self.gateway.chat(ModelRole.writer_chat,
                                 [{"role": "user", "content": prompt}]).strip()
        required = self._required_refs(outline, materials_by_id)
        missing = self._missing_refs(body, required, materials_by_id)
        if missing:
            correction = (
                prompt
                + "\n\nYour previous draft omitted these required elements: "
                + ", ".join(ref for _, ref in missing)
                + "\nRewrite the body including every one of them."
            )
            body = self.gateway.chat(ModelRole.writer_chat,
                                     [{"role": "user", "content": correction}]).strip()
            missing = self._missing_refs(body, required, materials_by_id)
        for heading, ref in missing:
            body = self._insert_mechanically(body, heading, ref, materials_by_id)
            self.trace.log_event("mechanical-insertion", f"{ref} into section {heading!r}")
        if not body.strip():
            body = self._mechanical_body(subtask_title, materials)
            self.trace.log_event("warning", f"empty fill output for {subtask_id}; "
                                            "assembled body mechanically")
        citations = sorted({u for m in materials for u in m.get("cited_urls", [])})
        return SubtaskResult(subtask_id=subtask_id, body=body, citations=citations)

    @staticmethod
    def _mechanical_body(subtask_title: str, materials: list[dict]) -> str:
        parts = [f"## {subtask_title}"]
        for m in materials:
            if m.get("summary"):
                parts.append(m["summary"])
            if m.get("insight"):
                parts.append(m["insight"])
            for ref in m.get("asset_paths") or []:
                parts.append(f"![{m.get('insight') or 'analysis figure'}]({ref})")
            if m.get("table_markdown"):
                parts.append(m["table_markdown"])
        return "\n\n".join(parts)

    # -- final refinement ------------------------------------------------------------

    def refine_report(self, results: list[SubtaskResult], question_text: str,
                      subtask_titles: dict[str, str]) -> str:
        bodies = "\n\n".join(
            f"<< subtask result {r.subtask_id} >>\n{r.body}" for r in results)
        input_assets = []
        for r in results:
            input_assets.extend(local_asset_refs(r.body))
        input_assets = list(dict.fromkeys(input_assets))
        allowed_external = {u for r in results for u in external_figure_refs(r.body)}

        prompt = REFINE_PROMPT.format(question=question_text, bodies=bodies)
        report = self.gateway.chat(ModelRole.writer_chat,
                                   [{"role": "user", "content": prompt}]).strip()
        report = self._scrub_fabricated(report, set(input_assets), allowed_external)
        if self._drop_fraction(report, input_assets) > _DROP_THRESHOLD:
            self.trace.log_event("refinement-rejected",
                                 "refinement dropped more than half the assets")
            retry_prompt = (prompt + "\n\nYour previous draft lost most of the figures "
                                     "and tables. Produce the report again keeping them.")
            report = self.gateway.chat(ModelRole.writer_chat,
                                       [{"role": "user", "content": retry_prompt}]).strip()
            report = self._scrub_fabricated(report, set(input_assets), allowed_external)
            if self._drop_fraction(report, input_assets) > _DROP_THRESHOLD:
                self.trace.log_event("refinement-fallback", "concatenating subtask results")
                report = self._concatenate(results, question_text, subtask_titles)
        for ref in input_assets:
            if ref not in report:
                self.trace.log_event("asset-dropped-in-refinement", ref)
        return report

    @staticmethod
    def _drop_fraction(report: str, input_assets: list[str]) -> float:
        if not input_assets:
            return 0.0
        kept = sum(1 for ref in input_assets if ref in report)
        return 1.0 - kept / len(input_assets)

    def _scrub_fabricated(self, report: str, known_assets: set[str],
                          allowed_external: set[str]) -> str:
        """The writer may drop assets, never invent them."""
        fabricated = [ref for ref in local_asset_refs(report) if ref not in known_assets]
        fabricated += [ref for ref in external_figure_refs(report)
                       if ref not in allowed_external]
        for ref in fabricated:
            report = re.sub(rf"!\[[^\]]*\]\({re.escape(ref)}\)\n?", "", report)
            self.trace.log_event("fabricated-asset-removed", ref)
        return report

    def _concatenate(self, results: list[SubtaskResult], question_text: str,
                     subtask_titles: dict[str, str]) -> str:
        titles = "\n".join(f"- {subtask_titles.get(r.subtask_id, r.subtask_id)}"
                           for r in results)
        prompt = FALLBACK_INTRO_PROMPT.format(question=question_text, titles=titles)
        framing = self.gateway.chat(ModelRole.writer_chat,
                                    [{"role": "user", "content": prompt}])
        intro, conclusion = _parse_framing(framing)
        parts = [f"# {question_text}", intro]
        parts.extend(r.body for r in results)
        parts.append("## Conclusion")
        parts.append(conclusion)
        return "\n\n".join(p for p in parts if p.strip())


def _parse_framing(text: str) -> tuple[str, str]:
    intro_match = re.search(r"INTRO:\s*\n(.*?)(?=CONCLUSION:|\Z)", text, re.DOTALL)
    concl_match = re.search(r"CONCLUSION:\s*\n(.*)", text, re.DOTALL)
    intro = intro_match.group(1).strip() if intro_match else text.strip()
    conclusion = concl_match.group(1).strip() if concl_match else ""
    return intro, conclusion
