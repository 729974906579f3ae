from __future__ import annotations

import pytest

from deepdesk.config import TableAnalysisConfig
from deepdesk.errors import AnalyzerError
from deepdesk.gateway import Gateway, ScriptedBackend, ScriptRule
from deepdesk.sandbox import FakeSandboxExecutor, SandboxRequest
from deepdesk.store import TableStore
from deepdesk.table_analysis import TableAnalyzer
from deepdesk.trajectory import RunTrace

from conftest import simple_table, write_bundle


def build_analyzer(tmp_path, rules, sandbox=None, tables=None, config=None):
    trace = RunTrace("q")
    gateway = Gateway(ScriptedBackend(rules, embedding_dim=4), trace)
    tables = tables if tables is not None else [
        simple_table("gdp-canada", title="Real GDP growth of Canada"),
        simple_table("gdp-japan", title="Real GDP growth of Japan"),
        simple_table("art-trade", title="Art trade volumes"),
    ]
    store = TableStore(embed_fn=gateway.embed)
    if tables:
        write_bundle(tmp_path / "bundle", tables)
        store.ingest(str(tmp_path / "bundle"))
    analyzer = TableAnalyzer(
        gateway, store, sandbox or FakeSandboxExecutor(), trace,
        config or TableAnalysisConfig(),
        assets_dir=str(tmp_path / "out" / "assets"),
        workdir=str(tmp_path / "work"),
    )
    return analyzer, trace


FENCED_OK = "```python\nprint('hello result')\n```"


class TestRetrieveTable:
    def test_rerank_selects_candidate(self, tmp_path):
        analyzer, _ = build_analyzer(tmp_path, [
            ScriptRule("judge_text", "", "TABLE: gdp-japan"),
        ])
        record = analyzer.retrieve_table("gdp growth japan", set())
        assert record.id == "gdp-japan"

    def test_exclusion_blocks_repeat(self, tmp_path):
        analyzer, _ = build_analyzer(tmp_path, [
            ScriptRule("judge_text", "", "TABLE: gdp-japan", max_uses=1),
            ScriptRule("judge_text", "", "TABLE: gdp-canada"),
        ])
        exclusion: set[str] = set()
        first = analyzer.retrieve_table("gdp growth", exclusion)
        exclusion.add(first.id)
        second = analyzer.retrieve_table("gdp growth", exclusion)
        assert second.id != first.id

    def test_unknown_id_twice_falls_back_to_dense_top1(self, tmp_path):
        analyzer, trace = build_analyzer(tmp_path, [
            ScriptRule("judge_text", "", "TABLE: no-such-table"),
        ])
        query_vec = analyzer.gateway.embed(["some query"])[0]
        expected_top1 = analyzer.store.dense_retrieve(query_vec, 10)[0][0]
        record = analyzer.retrieve_table("some query", set())
        assert record.id == expected_top1
        assert trace.events_of("fallback")
        assert len(trace.exchanges("judge_text")) == 2

    def test_all_tables_excluded(self, tmp_path):
        analyzer, _ = build_analyzer(tmp_path, [])
        with pytest.raises(AnalyzerError, match="excluded"):
            analyzer.retrieve_table("q", {"gdp-canada", "gdp-japan", "art-trade"})


class TestGenerateCode:
    def test_schema_comment_in_prompt_payload_absent(self, tmp_path):
        sentinel = "UNIQUE-PAYLOAD-991"
        table = simple_table("gdp-canada", title="Real GDP growth of Canada",
                             fields={"year": "int", "growth": "float"},
                             payload=[{"year": 2020, "growth": sentinel}])
        table["schema_comment"] = (
            "# real_gdp_growth_of_canada = [...]\n"
            "# Each record has fields:\n"
            "#   - year (int): calendar year\n"
            "#   - growth (float): growth rate\n"
        )
        analyzer, trace = build_analyzer(tmp_path, [
            ScriptRule("coder", "", "```python\nprint(real_gdp_growth_of_canada)\n```"),
        ], tables=[table])
        record = analyzer.store.get("gdp-canada")
        artifact = analyzer.generate_code(record, "growth trend", None, 1)
        assert "real_gdp_growth_of_canada" in artifact.source
        prompt_text = "\n".join(
            m["content"] for m in trace.exchanges("coder")[0].prompt)
        assert "real_gdp_growth_of_canada = [...]" in prompt_text
        assert sentinel not in prompt_text

    def test_prior_error_in_retry_prompt(self, tmp_path):
        analyzer, trace = build_analyzer(tmp_path, [
            ScriptRule("coder", "", FENCED_OK),
        ])
        record = analyzer.store.get("gdp-canada")
        analyzer.generate_code(record, "q", "KeyError: 'yeer'", 2)
        prompt_text = "\n".join(
            m["content"] for m in trace.exchanges("coder")[0].prompt)
        assert "KeyError: 'yeer'" in prompt_text

    def test_unfenced_response_used_verbatim(self, tmp_path):
        analyzer, _ = build_analyzer(tmp_path, [
            ScriptRule("coder", "", "print('bare')"),
        ])
        record = analyzer.store.get("gdp-canada")
        assert analyzer.generate_code(record, "q", None, 1).source == "print('bare')"


class TestExecuteWithRetry:
    def test_mean_computation_with_real_execution(self, tmp_path, exec_sandbox):
        # oracle: mean of [1, 2, 3] computed by hand is 2.0
        table = simple_table("nums", fields={"x": "int"},
                             payload=[{"x": 1}, {"x": 2}, {"x": 3}])
        table["schema_comment"] = (
            "# numbers = [...]\n# Each record has fields:\n#   - x (int): value\n")
        analyzer, _ = build_analyzer(tmp_path, [
            ScriptRule("coder", "",
                       "```python\nvals = [r['x'] for r in numbers]\n"
                       "print(sum(vals) / len(vals))\n```"),
        ], sandbox=exec_sandbox, tables=[table])
        record = analyzer.store.get("nums")
        result, artifact, attempts = analyzer.execute_with_retry(record, "mean of x", "mat-x")
        assert result.ok
        assert "2.0" in result.stdout
        assert attempts == 1

    def test_error_then_fixed(self, tmp_path):
        sandbox = FakeSandboxExecutor()
        sandbox.add_rule("attempt_one", status="runtime_error",
                         stderr="KeyError: 'yeer'")
        sandbox.add_rule("attempt_two", stdout="fixed output")
        analyzer, trace = build_analyzer(tmp_path, [
            ScriptRule("coder", "KeyError: 'yeer'", "```python\nattempt_two\n```"),
            ScriptRule("coder", "", "```python\nattempt_one\n```"),
        ], sandbox=sandbox)
        record = analyzer.store.get("gdp-canada")
        result, artifact, attempts = analyzer.execute_with_retry(record, "q", "mat-x")
        assert result.ok and result.stdout == "fixed output"
        assert attempts == 2
        assert artifact.attempt == 2
        assert artifact.prior_error == "KeyError: 'yeer'"

    def test_timeout_then_retry(self, tmp_path):
        sandbox = FakeSandboxExecutor()
        sandbox.add_rule("slow_loop", status="timeout", stderr="TIMEOUT: exceeded 2.0s")
        sandbox.add_rule("fast_path", stdout="done quickly")
        analyzer, _ = build_analyzer(tmp_path, [
            ScriptRule("coder", "TIMEOUT", "```python\nfast_path\n```"),
            ScriptRule("coder", "", "```python\nslow_loop\n```"),
        ], sandbox=sandbox)
        record = analyzer.store.get("gdp-canada")
        result, _, attempts = analyzer.execute_with_retry(record, "q", "mat-x")
        assert result.ok and attempts == 2

    def test_ceiling_exhausted_raises_with_last_stderr(self, tmp_path):
        sandbox = FakeSandboxExecutor()
        sandbox.add_rule("", status="runtime_error", stderr="ZeroDivisionError")
        analyzer, trace = build_analyzer(tmp_path, [
            ScriptRule("coder", "", "```python\nboom\n```"),
        ], sandbox=sandbox, config=TableAnalysisConfig(max_code_retries=3))
        record = analyzer.store.get("gdp-canada")
        with pytest.raises(AnalyzerError, match="ZeroDivisionError"):
            analyzer.execute_with_retry(record, "q", "mat-x")
        assert len(trace.exchanges("coder")) == 4  # 1 + 3 retries

    def test_empty_program_counts_as_failed_attempt(self, tmp_path):
        sandbox = FakeSandboxExecutor()
        sandbox.add_rule("real_code", stdout="output")
        analyzer, trace = build_analyzer(tmp_path, [
            ScriptRule("coder", "empty program", "```python\nreal_code\n```"),
            ScriptRule("coder", "", ""),
        ], sandbox=sandbox)
        record = analyzer.store.get("gdp-canada")
        result, _, attempts = analyzer.execute_with_retry(record, "q", "mat-x")
        assert result.ok
        assert attempts == 2
        assert len(sandbox.requests) == 1  # empty program never reached the sandbox


class TestAnalyzeResult:
    def _full_rules(self, verdicts: list[tuple[str, int]]):
        rules = [
            ScriptRule("judge_text", "", "TABLE: gdp-canada"),
            ScriptRule("coder", "", "```python\nplot_it\n```"),
        ]
        for response, max_uses in verdicts:
            rules.append(ScriptRule("vision", "", response, max_uses=max_uses))
        return rules

    def test_valid_verdict_builds_material(self, tmp_path):
        sandbox = FakeSandboxExecutor()
        sandbox.add_rule("plot_it", stdout="trend data", asset_names=["fig1.png"])
        analyzer, trace = build_analyzer(
            tmp_path,
            self._full_rules([("VALID: developed countries decline faster", 0)]),
            sandbox=sandbox)
        material = analyzer.analyze("decline trends", "st-1", set())
        assert material["verdict"] == "valid"
        assert material["insight"] == "developed countries decline faster"
        assert material["kind"] == "figure"
        assert material["asset_paths"] == ["assets/mat-001_1.png"]
        import os

        assert os.path.exists(os.path.join(analyzer.assets_dir, "mat-001_1.png"))

    def test_empty_output_regenerates_without_vision_call(self, tmp_path):
        sandbox = FakeSandboxExecutor()
        sandbox.add_rule("plot_it", stdout="", max_uses=1)
        sandbox.add_rule("second_try", stdout="numbers now")
        rules = [
            ScriptRule("judge_text", "", "TABLE: gdp-canada"),
            ScriptRule("coder", "empty result", "```python\nsecond_try\n```"),
            ScriptRule("coder", "", "```python\nplot_it\n```"),
            ScriptRule("vision", "", "VALID: usable numbers"),
        ]
        analyzer, trace = build_analyzer(tmp_path, rules, sandbox=sandbox)
        material = analyzer.analyze("q", "st-1", set())
        assert material["verdict"] == "valid"
        # exactly one vision exchange: the empty first round never reached the judge
        assert len(trace.exchanges("vision")) == 1
        assert trace.events_of("validation-rejected")

    def test_regenerate_then_valid(self, tmp_path):
        sandbox = FakeSandboxExecutor()
        sandbox.add_rule("plot_it", stdout="axes missing", max_uses=1)
        sandbox.add_rule("plot_fixed", stdout="axes drawn")
        rules = [
            ScriptRule("judge_text", "", "TABLE: gdp-canada"),
            ScriptRule("coder", "rejected by review", "```python\nplot_fixed\n```"),
            ScriptRule("coder", "", "```python\nplot_it\n```"),
            ScriptRule("vision", "", "REGENERATE: empty axes", max_uses=1),
            ScriptRule("vision", "", "VALID: trend visible"),
        ]
        analyzer, trace = build_analyzer(tmp_path, rules, sandbox=sandbox)
        material = analyzer.analyze("q", "st-1", set())
        assert material["insight"] == "trend visible"
        assert material["coder_attempts"] == 2
        assert len(trace.exchanges("coder")) == 2

    def test_regenerate_four_times_ceiling_three_fails(self, tmp_path):
        sandbox = FakeSandboxExecutor()
        sandbox.add_rule("plot_it", stdout="always wrong")
        analyzer, trace = build_analyzer(
            tmp_path,
            self._full_rules([("REGENERATE: wrong chart type", 0)]),
            sandbox=sandbox,
            config=TableAnalysisConfig(max_validation_retries=3))
        with pytest.raises(AnalyzerError, match="validation still rejecting"):
            analyzer.analyze("q", "st-1", set())
        assert len(trace.exchanges("vision")) == 4

    def test_attempt_accounting_matches_exchange_log(self, tmp_path):
        # error -> ok -> REGENERATE -> ok: three coder exchanges in total
        sandbox = FakeSandboxExecutor()
        sandbox.add_rule("v1", status="runtime_error", stderr="NameError: x")
        sandbox.add_rule("v2", stdout="first visible output", max_uses=1)
        sandbox.add_rule("v3", stdout="final output")
        rules = [
            ScriptRule("judge_text", "", "TABLE: gdp-canada"),
            ScriptRule("coder", "NameError: x", "```python\nv2\n```"),
            ScriptRule("coder", "rejected by review", "```python\nv3\n```"),
            ScriptRule("coder", "", "```python\nv1\n```"),
            ScriptRule("vision", "", "REGENERATE: off-topic", max_uses=1),
            ScriptRule("vision", "", "VALID: on-topic now"),
        ]
        analyzer, trace = build_analyzer(tmp_path, rules, sandbox=sandbox)
        material = analyzer.analyze("q", "st-1", set())
        assert material["coder_attempts"] == len(trace.exchanges("coder")) == 3

    def test_table_sentinel_parsed_as_table_material(self, tmp_path):
        sandbox = FakeSandboxExecutor()
        sandbox.add_rule("plot_it",
                         stdout="<<TABLE>>\n| a | b |\n| --- | --- |\n| 1 | 2 |\n<</TABLE>>")
        analyzer, _ = build_analyzer(
            tmp_path, self._full_rules([("VALID: tabulated", 0)]), sandbox=sandbox)
        material = analyzer.analyze("q", "st-1", set())
        assert material["kind"] == "table"
        assert material["table_markdown"].startswith("| a | b |")


class TestPayloadInvisibility:
    def test_sentinel_never_reaches_coder_prompts(self, tmp_path):
        sentinel = "SENTINEL-VALUE-836251"
        table = simple_table("secret", fields={"x": "str"},
                             payload=[{"x": sentinel}])
        sandbox = FakeSandboxExecutor()
        sandbox.add_rule("", stdout="summary stat")
        rules = [
            ScriptRule("judge_text", "", "TABLE: secret"),
            ScriptRule("coder", "", FENCED_OK),
            ScriptRule("vision", "", "VALID: fine"),
        ]
        analyzer, trace = build_analyzer(tmp_path, rules, sandbox=sandbox,
                                         tables=[table])
        analyzer.analyze("anything", "st-1", set())
        for exchange in trace.exchanges("coder"):
            for message in exchange.prompt:
                assert sentinel not in message["content"]
        # the payload did reach the sandbox via the data file
        import json

        with open(sandbox.requests[0].data_file) as fh:
            assert sentinel in json.dumps(json.load(fh))
