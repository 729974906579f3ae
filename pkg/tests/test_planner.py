from __future__ import annotations

import json

import pytest

from deepdesk.bundle import ReportBundle
from deepdesk.errors import PlanningError, RunAborted
from deepdesk.gateway import Gateway, ScriptedBackend, ScriptRule
from deepdesk.planner import Planner, ResearchQuestion, Subtask, ToolKind
from deepdesk.config import PlannerConfig
from deepdesk.trajectory import RunTrace

from harness import (
    BREXIT_SUBTASK_TITLE,
    EngineBuilder,
    brexit_engine,
    brexit_question,
)


def bare_planner(rules, config=None) -> tuple[Planner, RunTrace]:
    trace = RunTrace("q")
    gateway = Gateway(ScriptedBackend(rules), trace)
    planner = Planner(gateway, web=None, tables=None, writer=None, trace=trace,
                      output_dir="out", config=config or PlannerConfig())
    return planner, trace


QUESTION = ResearchQuestion(id="q-1", text="How did Brexit affect the UK art market?")


class TestDecompose:
    def test_four_subtasks_parsed_with_ordinals(self):
        response = "\n".join(f"{i}. Title {i} :: Description {i}" for i in range(1, 5))
        planner, _ = bare_planner([ScriptRule("planner_chat", "Decompose", response)])
        subtasks = planner.decompose(QUESTION)
        assert len(subtasks) == 4
        assert [s.ordinal for s in subtasks] == [1, 2, 3, 4]
        assert subtasks[0].title == "Title 1"
        assert all(s.status == "pending" for s in subtasks)

    def test_twelve_subtasks_truncated_to_max(self):
        response = "\n".join(f"{i}. Title {i} :: D{i}" for i in range(1, 13))
        planner, trace = bare_planner([ScriptRule("planner_chat", "Decompose", response)])
        subtasks = planner.decompose(QUESTION)
        # oracle: plain list truncation
        assert [s.title for s in subtasks] == [f"Title {i}" for i in range(1, 9)]
        assert any("truncating" in e["message"] for e in trace.events_of("warning"))

    def test_long_clause_heavy_title_parsed(self):
        response = (f"1. {BREXIT_SUBTASK_TITLE} :: Institutional impact analysis\n"
                    "2. Market volumes :: Volumes\n3. Outlook :: Forward view")
        planner, _ = bare_planner([ScriptRule("planner_chat", "Decompose", response)])
        subtasks = planner.decompose(QUESTION)
        assert subtasks[0].title.startswith("Evaluate how institutional changes")

    def test_unparseable_after_two_reprompts_errors(self):
        planner, trace = bare_planner([ScriptRule("planner_chat", "", "no subtasks here")])
        with pytest.raises(PlanningError, match="2 re-prompts"):
            planner.decompose(QUESTION)
        assert len(trace.exchanges("planner_chat")) == 3

    def test_zero_subtasks_violates_minimum(self):
        planner, _ = bare_planner([ScriptRule("planner_chat", "", "")])
        with pytest.raises(PlanningError):
            planner.decompose(QUESTION)


def researching_subtask() -> Subtask:
    st = Subtask(id="st-1", title="T", description="D", ordinal=1)
    st.advance("researching")
    return st


class TestNextAction:
    def test_table_call_parsed(self):
        planner, _ = bare_planner([
            ScriptRule("planner_chat", "", "CALL table: regional art-trade volumes"),
        ])
        call = planner.next_action(QUESTION, researching_subtask(), [], 0, "")
        assert call.kind == ToolKind.table
        assert call.query == "regional art-trade volumes"

    def test_budget_exhausted_forces_write(self):
        planner, trace = bare_planner(
            [ScriptRule("planner_chat", "", "CALL table: more research")],
            config=PlannerConfig(max_tool_calls_per_subtask=1),
        )
        call = planner.next_action(QUESTION, researching_subtask(), [], 1, "")
        assert call.kind == ToolKind.write_subtask
        assert trace.events_of("forced-transition")
        assert trace.exchanges() == []  # forced without consulting the model

    def test_write_after_materials(self):
        planner, _ = bare_planner([ScriptRule("planner_chat", "", "CALL write_subtask")])
        call = planner.next_action(QUESTION, researching_subtask(),
                                   [{"id": "m", "kind": "figure"}], 2, "")
        assert call.kind == ToolKind.write_subtask

    def test_unknown_tool_reprompted_then_error(self):
        planner, trace = bare_planner([ScriptRule("planner_chat", "", "CALL banana: x")])
        with pytest.raises(PlanningError):
            planner.next_action(QUESTION, researching_subtask(), [], 0, "")
        assert len(trace.exchanges()) == 2

    def test_unknown_tool_corrected_on_reprompt(self):
        planner, _ = bare_planner([
            ScriptRule("planner_chat", "", "CALL banana: x", max_uses=1),
            ScriptRule("planner_chat", "", "CALL web: good query"),
        ])
        call = planner.next_action(QUESTION, researching_subtask(), [], 0, "")
        assert call.kind == ToolKind.web

    def test_write_before_floor_rejected(self):
        planner, _ = bare_planner(
            [ScriptRule("planner_chat", "", "CALL write_subtask")],
            config=PlannerConfig(min_analyzer_calls_per_subtask=1),
        )
        with pytest.raises(PlanningError):
            planner.next_action(QUESTION, researching_subtask(), [], 0, "")

    def test_empty_query_rejected(self):
        planner, _ = bare_planner([ScriptRule("planner_chat", "", "CALL table:")])
        with pytest.raises(PlanningError):
            planner.next_action(QUESTION, researching_subtask(), [], 0, "")

    def test_pending_subtask_rejected(self):
        planner, _ = bare_planner([])
        with pytest.raises(PlanningError, match="pending"):
            planner.next_action(QUESTION, Subtask("st", "T", "D", 1), [], 0, "")


class TestStatusFlow:
    def test_legal_transitions(self):
        st = Subtask("st", "T", "D", 1)
        st.advance("researching")
        st.advance("written")
        assert st.status == "written"

    def test_illegal_transition(self):
        st = Subtask("st", "T", "D", 1)
        with pytest.raises(PlanningError):
            st.advance("written")


class TestRunResearch:
    def test_two_subtask_scripted_run(self, tmp_path):
        engine = brexit_engine(tmp_path).build("q-brexit")
        bundle = engine["planner"].run_research(brexit_question())

        bundle.validate()
        report = bundle.report_text()
        assert "assets/mat-001_1.png" in report
        assert "assets/mat-003_1.png" in report

        from markdown_it import MarkdownIt

        tokens = MarkdownIt("commonmark").parse(report)
        assert tokens  # final report parses as CommonMark

        with open(bundle.trajectory_path) as fh:
            steps = json.load(fh)
        assert len(steps) >= 6
        phases = [s["phase"] for s in steps]
        assert phases[0] == "plan"
        assert phases[-1] == "refine"
        assert phases.count("write") == 2
        meta = bundle.meta()
        assert meta["counters"]["figures_from_tables"] == 2
        assert [st["status"] for st in meta["subtasks"]] == ["written", "written"]

        from deepdesk.gateway import ModelRole

        role_values = {r.value for r in ModelRole}
        for exchange in engine["trace"].exchanges():
            assert exchange.role in role_values
            assert exchange.latency_s >= 0.0
            assert exchange.attempt >= 1

    def test_trajectory_byte_stable_across_runs(self, tmp_path):
        run1 = brexit_engine(tmp_path / "a").build("q-brexit")
        bundle1 = run1["planner"].run_research(brexit_question())
        run2 = brexit_engine(tmp_path / "b").build("q-brexit")
        bundle2 = run2["planner"].run_research(brexit_question())
        with open(bundle1.trajectory_path, "rb") as fh:
            bytes1 = fh.read()
        with open(bundle2.trajectory_path, "rb") as fh:
            bytes2 = fh.read()
        assert bytes1 == bytes2

    def test_table_analyzer_always_failing_aborts_with_partial_trajectory(self, tmp_path):
        engine_builder = brexit_engine(tmp_path)
        # poison every vision verdict so validation never passes
        engine_builder.rules = [
            r for r in engine_builder.rules if r.role != "vision"
        ]
        engine_builder.rule("vision", "", "REGENERATE: never good enough")
        engine = engine_builder.build("q-brexit")
        with pytest.raises(RunAborted) as err:
            engine["planner"].run_research(brexit_question())
        trajectory_path = err.value.trajectory_path
        with open(trajectory_path) as fh:
            steps = json.load(fh)
        assert steps  # partial trajectory persisted
        meta_path = trajectory_path.replace("trajectory.json", "meta.json")
        with open(meta_path) as fh:
            assert "aborted" in json.load(fh)

    def test_factorization_no_future_material_ids_in_prompts(self, tmp_path):
        engine = brexit_engine(tmp_path).build("q-brexit")
        engine["planner"].run_research(brexit_question())
        trace = engine["trace"]
        created_at_step: dict[str, int] = {}
        for step in trace.steps:
            for mid in step.material_ids:
                created_at_step[mid] = step.index
        for step in trace.steps:
            for exchange in step.exchanges:
                prompt = "\n".join(m["content"] for m in exchange.prompt)
                for mid, born in created_at_step.items():
                    if born > step.index:
                        assert mid not in prompt, (
                            f"step {step.index} prompt references future material {mid}")

    def test_raw_pages_never_reach_planner_prompts(self, tmp_path):
        leak_marker = "RAW-PAGE-MARKER-55"
        builder = brexit_engine(tmp_path)
        builder.pages["https://news.example/brexit-art"] = (
            f"<html><body><p>Customs friction raised costs. {leak_marker}</p></body></html>")
        engine = builder.build("q-brexit")
        engine["planner"].run_research(brexit_question())
        for exchange in engine["trace"].exchanges("planner_chat"):
            prompt = "\n".join(m["content"] for m in exchange.prompt)
            if "Choose the next action" in prompt or "Decompose" in prompt:
                assert leak_marker not in prompt

    def test_analyzer_budget_bound(self, tmp_path):
        engine = brexit_engine(tmp_path).build("q-brexit")
        planner = engine["planner"]
        bundle = planner.run_research(brexit_question())
        analyzer_steps = [
            s for s in engine["trace"].steps
            if s.tool_call and s.tool_call["kind"] in ("web", "table")
        ]
        cfg = planner.config
        meta = bundle.meta()
        assert len(analyzer_steps) <= len(meta["subtasks"]) * cfg.max_tool_calls_per_subtask
