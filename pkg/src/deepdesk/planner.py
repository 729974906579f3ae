"""Planner: decompose the question, drive the tool-call loop, emit the bundle.

Subtasks execute sequentially.  For each one the planner repeatedly decides
between the web analyzer and the table analyzer until it (or an exhausted
call budget) hands the materials to the writer.  A final refinement pass is
invoked exactly once, and the whole run serializes into a report bundle.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
import os
import re
from dataclasses import dataclass, field
from enum import Enum

from .bundle import ReportBundle, external_figure_refs
from .config import PlannerConfig
from .errors import (
    AnalyzerError,
    GatewayError,
    PlanningError,
    ReplayError,
    RunAborted,
    StoreValidationError,
    ToolCallFailed,
)
from .gateway import Gateway, ModelRole
from .table_analysis import TableAnalyzer
from .trajectory import RunTrace
from .web_analysis import WebAnalyzer
from .writer import SubtaskResult, Writer

logger = logging.getLogger(__name__)

DECOMPOSE_PROMPT = """\
Decompose this research question into {min_n}-{max_n} fine-grained subtasks
that together answer it.
Question: {question}

Reply with one numbered line per subtask, in execution order:
1. <short title> :: <one-sentence description>"""

ACTION_PROMPT = """\
You are researching one subtask of a larger question.
Question: {question}
Current subtask: {title} :: {description}

Findings from earlier subtasks:
{history}

Materials gathered for this subtask so far:
{materials}

Remaining analyzer calls for this subtask: {remaining}

Choose the next action. Reply with exactly one line:
CALL web: <query>            - search and summarize web knowledge
CALL table: <query>          - retrieve and analyze a structured table
CALL write_subtask           - enough evidence; write this subtask up"""

_SUBTASK_LINE_RE = re.compile(r"^\s*(\d+)[.)]\s*(.+?)\s*::\s*(.+?)\s*$", re.MULTILINE)
_ACTION_RE = re.compile(r"^\s*CALL\s+(\S+)\s*(?::\s*(.*?))?\s*$", re.MULTILINE)


class ToolKind(str, Enum):
    web = "web"
    table = "table"
    write_subtask = "write_subtask"
    finish = "finish"


@dataclass(frozen=True)
class ToolCall:
    kind: ToolKind
    query: str = ""
    subtask_id: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "query": self.query, "subtask_id": self.subtask_id}


@dataclass
class ResearchQuestion:
    id: str
    text: str
    domain: str | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise PlanningError("research question text is empty")


_STATUS_FLOW = {"pending": "researching", "researching": "written"}


@dataclass
class Subtask:
    id: str
    title: str
    description: str
    ordinal: int
    status: str = "pending"

    def advance(self, new_status: str) -> None:
        if _STATUS_FLOW.get(self.status) != new_status:
            raise PlanningError(
                f"illegal subtask transition {self.status} -> {new_status} for {self.id}")
        self.status = new_status


@dataclass
class RunContext:
    question: ResearchQuestion
    trace: RunTrace
    subtasks: list[Subtask] = field(default_factory=list)
    results: list[SubtaskResult] = field(default_factory=list)
    used_tables: set[str] = field(default_factory=set)


class Planner:
    def __init__(self, gateway: Gateway, web: WebAnalyzer, tables: TableAnalyzer,
                 writer: Writer, trace: RunTrace, *, output_dir: str,
                 config: PlannerConfig | None = None, seed: int = 0):
        self.gateway = gateway
        self.web = web
        self.tables = tables
        self.writer = writer
        self.trace = trace
        self.output_dir = output_dir
        self.config = config or PlannerConfig()
        self.seed = seed

    # -- decomposition -----------------------------------------------------------

    def decompose(self, question: ResearchQuestion) -> list[Subtask]:
        cfg = self.config
        prompt = DECOMPOSE_PROMPT.format(
            min_n=cfg.min_subtasks, max_n=cfg.max_subtasks, question=question.text)
        attempts = 3  # initial call plus two re-prompts
        for attempt in range(attempts):
            response = self.gateway.chat(ModelRole.planner_chat,
                                         [{"role": "user", "content": prompt}])
            parsed = _SUBTASK_LINE_RE.findall(response)
            if len(parsed) >= cfg.min_subtasks:
                if len(parsed) > cfg.max_subtasks:
                    self.trace.log_event(
                        "warning",
                        f"decomposition produced {len(parsed)} subtasks; "
                        f"truncating to {cfg.max_subtasks}")
                    parsed = parsed[: cfg.max_subtasks]
                return [
                    Subtask(id=f"st-{i}", title=title, description=desc, ordinal=i)
                    for i, (_, title, desc) in enumerate(parsed, start=1)
                ]
            prompt = (prompt + f"\n\nYour previous reply contained {len(parsed)} valid"
                               f" subtask lines; at least {cfg.min_subtasks} are required,"
                               " in the exact `N. title :: description` format.")
        raise PlanningError("decomposition output unparseable after 2 re-prompts")

    # -- action selection ----------------------------------------------------------

    def next_action(self, question: ResearchQuestion, subtask: Subtask,
                    materials: list[dict], analyzer_calls: int,
                    history: str) -> ToolCall:
        if subtask.status != "researching":
            raise PlanningError(f"next_action on subtask in status {subtask.status}")
        cfg = self.config
        if analyzer_calls >= cfg.max_tool_calls_per_subtask:
            self.trace.log_event("forced-transition",
                                 f"{subtask.id}: analyzer budget exhausted; forcing write")
            return ToolCall(ToolKind.write_subtask, subtask_id=subtask.id)

        material_lines = "\n".join(
            f"- {m['id']} ({m['kind']}): {m.get('insight') or m.get('summary', '')[:160]}"
            for m in materials
        ) or "(none)"
        prompt = ACTION_PROMPT.format(
            question=question.text, title=subtask.title, description=subtask.description,
            history=history or "(none)", materials=material_lines,
            remaining=cfg.max_tool_calls_per_subtask - analyzer_calls)
        for attempt in range(2):
            response = self.gateway.chat(ModelRole.planner_chat,
                                         [{"role": "user", "content": prompt}])
            call, problem = self._parse_action(response, subtask, analyzer_calls)
            if call is not None:
                return call
            prompt = prompt + f"\n\nYour previous reply was invalid ({problem})."
        raise PlanningError(
            f"could not parse a valid tool call for {subtask.id} after one re-prompt")

    def _parse_action(self, response: str, subtask: Subtask,
                      analyzer_calls: int) -> tuple[ToolCall | None, str]:
        match = _ACTION_RE.search(response)
        if not match:
            return None, "no CALL line found"
        tool, query = match.group(1).strip(), (match.group(2) or "").strip()
        if tool in (ToolKind.web.value, ToolKind.table.value):
            if not query:
                return None, f"CALL {tool} requires a query"
            return ToolCall(ToolKind(tool), query=query, subtask_id=subtask.id), ""
        if tool == ToolKind.write_subtask.value:
            if analyzer_calls < self.config.min_analyzer_calls_per_subtask:
                return None, ("write_subtask before the minimum of "
                              f"{self.config.min_analyzer_calls_per_subtask} analyzer call(s)")
            return ToolCall(ToolKind.write_subtask, subtask_id=subtask.id), ""
        return None, f"unknown tool {tool!r}"

    # -- history context -------------------------------------------------------------

    def _history(self, context: RunContext) -> str:
        parts = []
        titles = {st.id: st.title for st in context.subtasks}
        for result in context.results:
            excerpt = result.body[:300].replace("\n", " ")
            parts.append(f"[{titles.get(result.subtask_id, result.subtask_id)}] {excerpt}")
        text = "\n".join(parts)
        budget = self.config.history_char_budget
        if len(text) > budget:
            text = text[-budget:]
        return text

    # -- orchestration ---------------------------------------------------------------

    def run_research(self, question: ResearchQuestion) -> ReportBundle:
        context = RunContext(question=question, trace=self.trace)
        bundle = ReportBundle(root=os.path.join(self.output_dir, question.id))
        os.makedirs(os.path.join(bundle.root, "assets"), exist_ok=True)
        started_at = _dt.datetime.now(_dt.timezone.utc).isoformat()
        try:
            self._run_inner(context)
            report_md = self._refine(context)
            self._write_bundle(bundle, context, report_md, started_at, aborted=None)
            bundle.validate()
            return bundle
        except (AnalyzerError, PlanningError, ReplayError, GatewayError,
                StoreValidationError) as exc:
            logger.error("run aborted: %s", exc)
            self.trace.log_event("aborted", str(exc))
            self._write_bundle(bundle, context, report_md=None,
                               started_at=started_at, aborted=str(exc))
            raise RunAborted(str(exc), trajectory_path=bundle.trajectory_path) from exc

    def _run_inner(self, context: RunContext) -> None:
        step = self.trace.begin_step("plan")
        context.subtasks = self.decompose(context.question)
        self.trace.end_step()

        for subtask in context.subtasks:
            subtask.advance("researching")
            materials: list[dict] = []
            analyzer_calls = 0
            while True:
                history = self._history(context)
                step = self.trace.begin_step("research", subtask.id)
                call = self.next_action(context.question, subtask, materials,
                                        analyzer_calls, history)
                step.tool_call = call.to_dict()
                if call.kind == ToolKind.write_subtask:
                    step.phase = "write"
                    result = self.writer.write_subtask(subtask.id, subtask.title, materials)
                    context.results.append(result)
                    subtask.advance("written")
                    self.trace.end_step()
                    break
                try:
                    if call.kind == ToolKind.web:
                        material = self.web.analyze(call.query, subtask.title,
                                                    subtask.id, history)
                        materials.append(material)
                    else:
                        material = self.tables.analyze(call.query, subtask.id,
                                                       context.used_tables)
                        materials.append(material)
                except ToolCallFailed as exc:
                    self.trace.log_event("tool-call-failed", str(exc))
                analyzer_calls += 1
                self.trace.end_step()

    def _refine(self, context: RunContext) -> str:
        step = self.trace.begin_step("refine", None,
                                     ToolCall(ToolKind.finish).to_dict())
        titles = {st.id: st.title for st in context.subtasks}
        report_md = self.writer.refine_report(context.results, context.question.text,
                                              titles)
        self.trace.end_step()
        return report_md

    def _write_bundle(self, bundle: ReportBundle, context: RunContext,
                      report_md: str | None, started_at: str,
                      aborted: str | None) -> None:
        os.makedirs(bundle.root, exist_ok=True)
        if report_md is not None:
            with open(bundle.report_path, "w", encoding="utf-8") as fh:
                fh.write(report_md if report_md.endswith("\n") else report_md + "\n")
        self.trace.write(bundle.trajectory_path)
        figures = 0
        tables = 0
        for mid in self.trace.material_ids():
            material = self.trace.material(mid)
            if material.get("verdict") == "valid":
                figures += len(material.get("asset_paths") or [])
                tables += 1 if material.get("table_markdown") else 0
        external = external_figure_refs(report_md) if report_md else []
        meta = {
            "question_id": context.question.id,
            "question_text": context.question.text,
            "domain": context.question.domain,
            "seed": self.seed,
            "started_at": started_at,
            "finished_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "roles_used": sorted({e.role for e in self.trace.exchanges()}),
            "subtasks": [
                {"id": st.id, "title": st.title, "ordinal": st.ordinal,
                 "status": st.status}
                for st in context.subtasks
            ],
            "counters": {
                "figures_from_tables": figures,
                "table_materials": tables,
                "web_figures_cited": len(external),
            },
            "external_figures": sorted(set(external)),
            "events": self.trace.events,
        }
        if aborted is not None:
            meta["aborted"] = aborted
        with open(bundle.meta_path, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
