"""Table analyzer: retrieve one table, generate and run analysis code,
derive a validated insight.

The code model only ever sees the table's comment-style schema; the payload
is injected by the sandbox at execution time.  Two retry loops guard the
pipeline: runtime errors feed stderr back into code generation, and a
vision check can demand regeneration when the output is empty, broken, or
off-topic.  Only materials that pass validation reach the planner.
"""

from __future__ import annotations

import json
import logging
import os
import re
import shutil
from dataclasses import dataclass

from .config import TableAnalysisConfig
from .errors import AnalyzerError
from .gateway import Gateway, ModelRole
from .sandbox import ExecutionResult, SandboxExecutor, SandboxRequest
from .store import TableRecord, TableStore
from .trajectory import RunTrace

logger = logging.getLogger(__name__)

_TABLE_SENTINEL_RE = re.compile(r"<<TABLE>>\n(.*?)\n<</TABLE>>", re.DOTALL)
_CODE_FENCE_RE = re.compile(r"```(?:python)?\n(.*?)```", re.DOTALL)

RERANK_PROMPT = """\
Select the single table most relevant to this analysis query.
Query: {query}

Candidates:
{candidates}

Reply with one line: `TABLE: <id>`."""

CODE_PROMPT = """\
Write a Python analysis program for this query over the table described below.
Query: {query}

Table schema (the variables described here are already defined when your
code runs; do not redefine or load them):
{schema_comment}

Conventions:
- Save any figure as a PNG into the directory bound to the variable ASSET_DIR,
  e.g. plt.savefig(f"{{ASSET_DIR}}/fig1.png").
- Print any result table as markdown between sentinel lines `<<TABLE>>` and
  `<</TABLE>>`.
- Print key numeric findings.
{error_section}
Reply with one fenced python code block."""

VALIDATE_PROMPT = """\
You are checking the output of a data-analysis program before it goes into a
research report.
Query: {query}
Table analyzed: {title}

Program stdout:
{stdout}

Decide whether the output is a correct, readable, on-topic analysis result.
Reply with exactly one line:
`VALID: <one-sentence insight derived from the result>` if it is usable, or
`REGENERATE: <short reason>` if the code should be regenerated."""


@dataclass
class CodeArtifact:
    """One generated program, with the context it was conditioned on."""

    source: str
    schema_comment: str
    attempt: int
    prior_error: str | None = None


class TableAnalyzer:
    def __init__(self, gateway: Gateway, store: TableStore, executor: SandboxExecutor,
                 trace: RunTrace, config: TableAnalysisConfig | None = None, *,
                 assets_dir: str, workdir: str, sandbox_timeout_s: float = 30.0):
        self.gateway = gateway
        self.store = store
        self.executor = executor
        self.trace = trace
        self.config = config or TableAnalysisConfig()
        self.assets_dir = assets_dir
        self.workdir = workdir
        self.sandbox_timeout_s = sandbox_timeout_s

    # -- knowledge retrieval -------------------------------------------------

    def retrieve_table(self, query: str, exclusion: set[str]) -> TableRecord:
        """Dense top-k recall then a one-shot judge rerank choosing one table."""
        if len(self.store) - len(exclusion) <= 0:
            raise AnalyzerError("no tables left to analyze (all excluded)")
        (query_vec,) = self.gateway.embed([query])
        candidates = self.store.dense_retrieve(query_vec, self.config.retrieve_k,
                                               exclude=exclusion)
        if not candidates:
            raise AnalyzerError("dense retrieval returned no candidates")
        listing = "\n".join(
            f"- id={tid} :: {self.store.get(tid).title} :: {self.store.get(tid).summary}"
            for tid, _ in candidates
        )
        prompt = RERANK_PROMPT.format(query=query, candidates=listing)
        candidate_ids = {tid for tid, _ in candidates}
        chosen: str | None = None
        for attempt in range(2):
            response = self.gateway.chat(ModelRole.judge_text,
                                         [{"role": "user", "content": prompt}])
            match = re.search(r"TABLE:\s*(\S+)", response)
            if match and match.group(1) in candidate_ids:
                chosen = match.group(1)
                break
            prompt = (RERANK_PROMPT.format(query=query, candidates=listing)
                      + "\nYour previous answer named no listed candidate id."
                        " Answer with `TABLE: <id>` using an id from the list.")
        if chosen is None:
            chosen = candidates[0][0]
            self.trace.log_event("fallback",
                                 f"rerank named unknown tables twice; using dense top-1 {chosen}")
        return self.store.get(chosen)

    # -- code generation ---------------------------------------------------------

    def generate_code(self, record: TableRecord, query: str,
                      prior_error: str | None, attempt: int) -> CodeArtifact:
        error_section = ""
        if prior_error:
            error_section = (
                "\nYour previous program failed; regenerate it. Failure detail:\n"
                f"{prior_error}\n"
            )
        prompt = CODE_PROMPT.format(query=query, schema_comment=record.schema_comment,
                                    error_section=error_section)
        response = self.gateway.chat(ModelRole.coder,
                                     [{"role": "user", "content": prompt}])
        match = _CODE_FENCE_RE.search(response)
        source = match.group(1).strip() if match else response.strip()
        return CodeArtifact(source=source, schema_comment=record.schema_comment,
                            attempt=attempt, prior_error=prior_error)

    # -- execution -----------------------------------------------------------------

    def _sandbox_dirs(self, material_id: str, round_no: int) -> tuple[str, str]:
        base = os.path.join(self.workdir, f"{material_id}-r{round_no}")
        asset_dir = os.path.join(base, "assets")
        os.makedirs(asset_dir, exist_ok=True)
        return base, asset_dir

    def _write_data_file(self, base: str, record: TableRecord) -> str:
        data_file = os.path.join(base, "data.json")
        with open(data_file, "w", encoding="utf-8") as fh:
            json.dump({"variables": {record.variable_name(): record.payload}}, fh)
        return data_file

    def execute_with_retry(self, record: TableRecord, query: str, material_id: str,
                           *, initial_error: str | None = None,
                           round_no: int = 0) -> tuple[ExecutionResult, CodeArtifact, int]:
        """Generate-and-run until success or the code-retry ceiling.

        Returns (result, final artifact, coder exchanges used).  A runtime
        error or timeout feeds stderr into the next generation; an empty
        program counts as a failed attempt without touching the sandbox.
        """
        base, asset_dir = self._sandbox_dirs(material_id, round_no)
        data_file = self._write_data_file(base, record)
        prior = initial_error
        attempts = 0
        last_error = "no attempts made"
        max_attempts = self.config.max_code_retries + 1
        while attempts < max_attempts:
            attempts += 1
            artifact = self.generate_code(record, query, prior, attempts)
            if not artifact.source:
                prior = last_error = "empty program"
                self.trace.log_event("code-attempt-failed", "empty program")
                continue
            result = self.executor.run(SandboxRequest(
                code=artifact.source, data_file=data_file,
                asset_dir=asset_dir, timeout_s=self.sandbox_timeout_s,
            ))
            if result.ok:
                return result, artifact, attempts
            prior = last_error = result.stderr.strip() or result.status
            self.trace.log_event("code-attempt-failed", last_error[:200])
        raise AnalyzerError(
            f"code execution still failing after {attempts} attempts: {last_error[:400]}")

    # -- result analysis ----------------------------------------------------------

    def _validate(self, result: ExecutionResult, record: TableRecord,
                  query: str) -> tuple[str, str]:
        """Returns ("valid", insight) or ("regenerate", reason)."""
        has_assets = bool(result.asset_paths)
        stdout = result.stdout.strip()
        if not has_assets and not stdout:
            # empty executions are rejected without consulting the judge
            return "regenerate", "empty result"
        instruction = VALIDATE_PROMPT.format(query=query, title=record.title,
                                             stdout=stdout or "(no stdout)")
        if has_assets:
            verdict = self.gateway.analyze_image(ModelRole.vision, result.asset_paths,
                                                 instruction)
        else:
            verdict = self.gateway.chat(ModelRole.vision,
                                        [{"role": "user", "content": instruction}])
        verdict = verdict.strip()
        if verdict.upper().startswith("VALID"):
            return "valid", verdict.split(":", 1)[1].strip() if ":" in verdict else ""
        if verdict.upper().startswith("REGENERATE"):
            return "regenerate", verdict.split(":", 1)[1].strip() if ":" in verdict else "rejected"
        self.trace.log_event("warning", f"unparseable validation verdict: {verdict[:120]!r}")
        return "regenerate", "unparseable validation verdict"

    def _promote_assets(self, result: ExecutionResult, material_id: str) -> list[str]:
        os.makedirs(self.assets_dir, exist_ok=True)
        promoted = []
        for n, path in enumerate(sorted(result.asset_paths), start=1):
            ext = os.path.splitext(path)[1] or ".png"
            name = f"{material_id}_{n}{ext}"
            shutil.copyfile(path, os.path.join(self.assets_dir, name))
            promoted.append(f"assets/{name}")
        return promoted

    # -- planner-facing entry --------------------------------------------------------

    def analyze(self, query: str, subtask_id: str, exclusion: set[str]) -> dict:
        """Full pipeline for one call; grows ``exclusion`` with the used table."""
        record = self.retrieve_table(query, exclusion)
        exclusion.add(record.id)
        material_id = self.trace.next_material_id()

        coder_exchanges = 0
        validation_rounds = 0
        feedback: str | None = None
        while True:
            result, artifact, used = self.execute_with_retry(
                record, query, material_id,
                initial_error=feedback, round_no=validation_rounds)
            coder_exchanges += used
            verdict, detail = self._validate(result, record, query)
            if verdict == "valid":
                break
            validation_rounds += 1
            self.trace.log_event("validation-rejected", detail[:200])
            if validation_rounds > self.config.max_validation_retries:
                raise AnalyzerError(
                    f"validation still rejecting after {validation_rounds} rounds: {detail}")
            feedback = f"The previous output was rejected by review: {detail}"

        asset_refs = self._promote_assets(result, material_id)
        table_match = _TABLE_SENTINEL_RE.search(result.stdout)
        table_markdown = table_match.group(1).strip() if table_match else None
        if asset_refs:
            kind = "figure"
        elif table_markdown:
            kind = "table"
        else:
            kind = "analysis"
        material = {
            "id": material_id,
            "kind": kind,
            "subtask_id": subtask_id,
            "query": query,
            "table_id": record.id,
            "asset_paths": asset_refs,
            "table_markdown": table_markdown,
            "insight": detail,
            "verdict": "valid",
            "coder_attempts": coder_exchanges,
            "stdout_excerpt": result.stdout[:500],
        }
        if not asset_refs and not material["insight"] and not table_markdown:
            raise AnalyzerError(f"material {material_id} has neither asset nor insight")
        self.trace.register_material(material)
        return material
