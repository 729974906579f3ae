from __future__ import annotations

import contextlib
import io
import json
import os

import pytest

from deepdesk.sandbox import ExecutionResult, SandboxExecutor, SandboxRequest


def write_bundle(path, tables: list[dict]) -> str:
    """Materialize a table bundle directory from table dicts.

    Each dict needs: id, title, summary, schema_comment, domain, payload.
    """
    os.makedirs(os.path.join(path, "payloads"), exist_ok=True)
    with open(os.path.join(path, "manifest.jsonl"), "w", encoding="utf-8") as fh:
        for table in tables:
            payload_file = f"payloads/{table['id']}.json"
            with open(os.path.join(path, payload_file), "w", encoding="utf-8") as pf:
                json.dump(table["payload"], pf)
            fh.write(json.dumps({
                "id": table["id"],
                "title": table["title"],
                "summary": table["summary"],
                "schema_comment": table["schema_comment"],
                "domain": table["domain"],
                "payload_file": payload_file,
                **({"source_uri": table["source_uri"]} if "source_uri" in table else {}),
            }) + "\n")
    return str(path)


def schema_comment(variable: str, fields: dict[str, str]) -> str:
    lines = [f"# {variable} = [...]", "# Each record has fields:"]
    lines += [f"#   - {name} ({ftype}): {name} value" for name, ftype in fields.items()]
    return "\n".join(lines)


def simple_table(table_id: str, *, title: str | None = None, domain: str = "Art",
                 fields: dict[str, str] | None = None,
                 payload: list[dict] | None = None) -> dict:
    if fields is None:
        fields = {"year": "int", "value": "float"}
    if payload is None:
        payload = [{"year": 2020, "value": 1.0}, {"year": 2021, "value": 2.0}]
    variable = table_id.replace("-", "_")
    return {
        "id": table_id,
        "title": title or f"Table {table_id}",
        "summary": f"Summary of {table_id} trends over time.",
        "schema_comment": schema_comment(variable, fields),
        "domain": domain,
        "payload": payload,
    }


class ExecSandboxExecutor(SandboxExecutor):
    """Test-only executor that really runs the code via exec().

    Used where a spec example needs actual computation (e.g. a hand-computed
    mean) rather than a scripted outcome.  Injects the data file's variables
    and ASSET_DIR, captures stdout, and maps exceptions to runtime errors.
    """

    def run(self, request: SandboxRequest) -> ExecutionResult:
        with open(request.data_file, encoding="utf-8") as fh:
            variables = json.load(fh)["variables"]
        os.makedirs(request.asset_dir, exist_ok=True)
        env: dict = {"ASSET_DIR": request.asset_dir, **variables}
        buf = io.StringIO()
        before = set(os.listdir(request.asset_dir))
        try:
            with contextlib.redirect_stdout(buf):
                exec(request.code, env)  # noqa: S102 - deliberate, test-only
        except Exception as exc:  # noqa: BLE001 - mirror the runner contract
            return ExecutionResult(
                status="runtime_error", stdout=buf.getvalue(),
                stderr=f"{type(exc).__name__}: {exc}",
            )
        produced = sorted(set(os.listdir(request.asset_dir)) - before)
        return ExecutionResult(
            status="ok", stdout=buf.getvalue(), stderr="",
            asset_paths=[os.path.join(request.asset_dir, name) for name in produced],
        )


@pytest.fixture
def exec_sandbox():
    return ExecSandboxExecutor()
