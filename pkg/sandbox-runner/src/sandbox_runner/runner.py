"""Run one generated analysis program under injection, limits, and a timeout.

Invoked as ``sandbox-runner <request.json>`` (or ``python -m sandbox_runner``).
The response JSON goes to stdout; the runner exits 0 whenever it produced a
response, and nonzero only for infrastructure errors (unreadable request,
invalid asset dir).  Isolation is process-level and best-effort: headless
plotting, blocked socket creation, CPU/file-size rlimits, process-group kill
on timeout.  It is not a container.
"""

from __future__ import annotations

import json
import os
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass

EXIT_OK = 0
EXIT_INFRA = 2
TIMEOUT_EXIT_CODE = 124
TIMEOUT_MARKER = "TIMEOUT"

_FSIZE_LIMIT = 64 * 1024 * 1024  # generated figures stay far below this
_CPU_GRACE_S = 5


@dataclass(frozen=True)
class SandboxRequest:
    code: str
    data_file: str
    asset_dir: str
    timeout_s: float


class RequestError(Exception):
    """The request violates the contract; no response can be produced."""


def load_request(path: str) -> SandboxRequest:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise RequestError(f"cannot read request file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise RequestError(f"request file is not valid JSON: {exc}") from exc
    missing = {"code", "data_file", "asset_dir", "timeout_s"} - set(raw)
    if missing:
        raise RequestError(f"request missing fields: {sorted(missing)}")
    # relative paths are resolved against the invoker's cwd, never the
    # child's scratch directory
    request = SandboxRequest(
        code=str(raw["code"]),
        data_file=os.path.abspath(str(raw["data_file"])),
        asset_dir=os.path.abspath(str(raw["asset_dir"])),
        timeout_s=float(raw["timeout_s"]),
    )
    if request.timeout_s <= 0:
        raise RequestError(f"timeout_s must be > 0, got {request.timeout_s}")
    if os.path.isdir(request.asset_dir):
        if os.listdir(request.asset_dir):
            raise RequestError(f"asset_dir is not empty: {request.asset_dir}")
    else:
        os.makedirs(request.asset_dir)
    return request


def build_preamble(request: SandboxRequest) -> str:
    """Injection code prepended to the user program.

    A pure function of the request: loads the data file, binds each entry of
    ``variables`` as a module-level name, exposes ASSET_DIR, and blocks
    socket creation.  Any failure here exits nonzero before user code runs.
    """
    return f"""\
import json as _json
import socket as _socket

def _no_network(*_args, **_kwargs):
    raise OSError("network disabled in sandbox")

_socket.socket = _no_network
_socket.create_connection = _no_network

ASSET_DIR = {request.asset_dir!r}

with open({request.data_file!r}, encoding="utf-8") as _fh:
    _data = _json.load(_fh)
_variables = _data.get("variables", {{}})
if not isinstance(_variables, dict):
    raise TypeError("data file 'variables' must be an object")
for _name in _variables:
    if not isinstance(_name, str) or not _name.isidentifier():
        raise ValueError(f"invalid variable name: {{_name!r}}")
globals().update(_variables)
for _tmp in ("_fh", "_data", "_variables", "_name", "_tmp"):
    globals().pop(_tmp, None)
# --- user code follows ---
"""


def _child_limits() -> None:
    import resource

    resource.setrlimit(resource.RLIMIT_CORE, (0, 0))
    resource.setrlimit(resource.RLIMIT_FSIZE, (_FSIZE_LIMIT, _FSIZE_LIMIT))
    os.setsid()


def run_payload(request: SandboxRequest) -> dict:
    """Execute the request and return the contract response object."""
    preamble = build_preamble(request)
    started = time.monotonic()
    with tempfile.TemporaryDirectory(prefix="sandbox-run-") as scratch:
        script_path = os.path.join(scratch, "program.py")
        with open(script_path, "w", encoding="utf-8") as fh:
            fh.write(preamble)
            fh.write(request.code)
            fh.write("\n")
        env = dict(os.environ)
        env["MPLBACKEND"] = "Agg"

        import resource

        cpu_cap = int(request.timeout_s) + _CPU_GRACE_S

        def preexec():
            _child_limits()
            resource.setrlimit(resource.RLIMIT_CPU, (cpu_cap, cpu_cap))

        proc = subprocess.Popen(
            [sys.executable, script_path],
            cwd=scratch,
            env=env,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            preexec_fn=preexec,
        )
        timed_out = False
        try:
            stdout, stderr = proc.communicate(timeout=request.timeout_s)
            exit_code = proc.returncode
        except subprocess.TimeoutExpired:
            timed_out = True
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            stdout, stderr = proc.communicate()
            exit_code = TIMEOUT_EXIT_CODE
        wall = time.monotonic() - started
        if timed_out:
            marker = f"{TIMEOUT_MARKER}: wall clock exceeded {request.timeout_s}s"
            stderr = f"{stderr}\n{marker}" if stderr else marker

    assets = [
        {"name": name, "size": os.path.getsize(os.path.join(request.asset_dir, name))}
        for name in sorted(os.listdir(request.asset_dir))
    ]
    return {
        "exit_code": exit_code,
        "stdout": stdout,
        "stderr": stderr,
        "assets": assets,
        "wall_time_s": round(wall, 4),
    }


def main(argv: list[str] | None = None) -> int:
    argv = argv if argv is not None else sys.argv[1:]
    if len(argv) != 1:
        print("usage: sandbox-runner <request.json>", file=sys.stderr)
        return EXIT_INFRA
    try:
        request = load_request(argv[0])
        response = run_payload(request)
    except RequestError as exc:
        print(f"request error: {exc}", file=sys.stderr)
        return EXIT_INFRA
    print(json.dumps(response, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
