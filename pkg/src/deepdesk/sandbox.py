"""Sandbox execution contract for generated analysis code.

The engine never executes generated code in-process.  It hands a
``SandboxRequest`` to an executor and gets a ``SandboxResponse`` back:

    request JSON:  {"code", "data_file", "asset_dir", "timeout_s"}
    response JSON: {"exit_code", "stdout", "stderr",
                    "assets": [{"name", "size"}], "wall_time_s"}

``data_file`` is a JSON file ``{"variables": {name: value, ...}}`` whose
entries are bound as variables before the code runs; ``ASSET_DIR`` names the
directory figures must be saved into.  A timeout kill is reported with a
``TIMEOUT`` marker on stderr and a nonzero exit code.  The full contract is
documented in docs/sandbox-contract.md; the external runner implements it.

``SubprocessSandboxExecutor`` drives such a runner.  ``FakeSandboxExecutor``
replays scripted results (and materializes scripted asset files) so the
whole engine can be exercised without executing any generated code.
"""

from __future__ import annotations

import json
import subprocess
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

from .errors import AnalyzerError, ReplayError

STATUS_OK = "ok"
STATUS_RUNTIME_ERROR = "runtime_error"
STATUS_TIMEOUT = "timeout"

TIMEOUT_MARKER = "TIMEOUT"

_placeholder_png_bytes: bytes | None = None


def _placeholder_png() -> bytes:
    """Tiny valid PNG written when a scripted result materializes assets."""
    global _placeholder_png_bytes
    if _placeholder_png_bytes is None:
        import io

        from PIL import Image

        buf = io.BytesIO()
        Image.new("RGB", (8, 8), (200, 200, 200)).save(buf, format="PNG")
        _placeholder_png_bytes = buf.getvalue()
    return _placeholder_png_bytes


@dataclass
class SandboxRequest:
    code: str
    data_file: str
    asset_dir: str
    timeout_s: float

    def to_json(self) -> str:
        return json.dumps(
            {"code": self.code, "data_file": self.data_file,
             "asset_dir": self.asset_dir, "timeout_s": self.timeout_s},
            sort_keys=True,
        )


@dataclass
class ExecutionResult:
    """Outcome of one sandbox execution, normalized for the analyzer."""

    status: str  # ok | runtime_error | timeout
    stdout: str
    stderr: str
    asset_paths: list[str] = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


def response_to_result(response: dict, asset_dir: str) -> ExecutionResult:
    """Translate a contract response object into an ``ExecutionResult``."""
    import os

    exit_code = int(response.get("exit_code", 1))
    stderr = str(response.get("stderr", ""))
    if exit_code == 0:
        status = STATUS_OK
    elif TIMEOUT_MARKER in stderr:
        status = STATUS_TIMEOUT
    else:
        status = STATUS_RUNTIME_ERROR
    assets = []
    if status == STATUS_OK:
        assets = [os.path.join(asset_dir, a["name"]) for a in response.get("assets", [])]
    return ExecutionResult(
        status=status,
        stdout=str(response.get("stdout", "")),
        stderr=stderr,
        asset_paths=assets,
        wall_time_s=float(response.get("wall_time_s", 0.0)),
    )


class SandboxExecutor(ABC):
    @abstractmethod
    def run(self, request: SandboxRequest) -> ExecutionResult:
        ...


@dataclass
class FakeResultRule:
    """Scripted execution outcome, matched by first substring hit on the code."""

    contains: str
    status: str = STATUS_OK
    stdout: str = ""
    stderr: str = ""
    asset_names: list[str] = field(default_factory=list)
    max_uses: int = 0
    uses: int = field(default=0, compare=False)


class FakeSandboxExecutor(SandboxExecutor):
    """Replays scripted sandbox outcomes; unmatched code raises, never guesses."""

    def __init__(self, rules: list[FakeResultRule] | None = None):
        self.rules = list(rules or [])
        self.requests: list[SandboxRequest] = []

    @classmethod
    def from_entries(cls, entries: list[dict]) -> "FakeSandboxExecutor":
        return cls([
            FakeResultRule(
                contains=e.get("contains", ""),
                status=e.get("status", STATUS_OK),
                stdout=e.get("stdout", ""),
                stderr=e.get("stderr", ""),
                asset_names=list(e.get("assets", [])),
                max_uses=int(e.get("max_uses", 0)),
            )
            for e in entries
        ])

    def add_rule(self, contains: str, **kwargs) -> None:
        self.rules.append(FakeResultRule(contains=contains, **kwargs))

    def run(self, request: SandboxRequest) -> ExecutionResult:
        import os

        self.requests.append(request)
        for rule in self.rules:
            if rule.contains and rule.contains not in request.code:
                continue
            if rule.max_uses and rule.uses >= rule.max_uses:
                continue
            rule.uses += 1
            paths = []
            for name in rule.asset_names:
                os.makedirs(request.asset_dir, exist_ok=True)
                path = os.path.join(request.asset_dir, name)
                with open(path, "wb") as fh:
                    fh.write(_placeholder_png())
                paths.append(path)
            stderr = rule.stderr
            if rule.status == STATUS_TIMEOUT and TIMEOUT_MARKER not in stderr:
                stderr = (stderr + "\n" if stderr else "") + f"{TIMEOUT_MARKER}: scripted"
            return ExecutionResult(
                status=rule.status,
                stdout=rule.stdout,
                stderr=stderr,
                asset_paths=paths if rule.status == STATUS_OK else [],
            )
        raise ReplayError(
            f"no scripted sandbox result matches code ({request.code[:60]!r}...)"
        )


class SubprocessSandboxExecutor(SandboxExecutor):
    """Drives an external runner process speaking the sandbox contract.

    The runner is invoked as ``<argv...> <request.json>`` and must print the
    response JSON on stdout.
    """

    def __init__(self, argv: list[str], workdir: str):
        if not argv:
            raise AnalyzerError("sandbox.command is not configured")
        self.argv = argv
        self.workdir = workdir

    def run(self, request: SandboxRequest) -> ExecutionResult:
        import os

        os.makedirs(self.workdir, exist_ok=True)
        request_path = os.path.join(self.workdir, "request.json")
        with open(request_path, "w", encoding="utf-8") as fh:
            fh.write(request.to_json())
        started = time.monotonic()
        try:
            proc = subprocess.run(
                [*self.argv, request_path],
                capture_output=True,
                text=True,
                timeout=request.timeout_s + 30,  # the runner enforces the real limit
            )
        except subprocess.TimeoutExpired as exc:
            raise AnalyzerError(f"sandbox runner itself hung: {exc}") from exc
        wall = time.monotonic() - started
        if proc.returncode != 0 and not proc.stdout.strip():
            raise AnalyzerError(
                f"sandbox runner failed (exit {proc.returncode}): {proc.stderr[:400]}"
            )
        try:
            response = json.loads(proc.stdout)
        except json.JSONDecodeError as exc:
            raise AnalyzerError(f"sandbox runner emitted invalid JSON: {exc}") from exc
        result = response_to_result(response, request.asset_dir)
        if result.wall_time_s == 0.0:
            result.wall_time_s = wall
        return result
