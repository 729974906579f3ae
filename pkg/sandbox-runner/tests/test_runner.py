from __future__ import annotations

import json
import os
import subprocess
import sys
import time

import pytest

from sandbox_runner.runner import (
    RequestError,
    SandboxRequest,
    build_preamble,
    load_request,
    main,
    run_payload,
)

RESPONSE_KEYS = {"assets", "exit_code", "stderr", "stdout", "wall_time_s"}


def make_request(tmp_path, code: str, variables: dict | None = None,
                 timeout_s: float = 10.0) -> SandboxRequest:
    data_file = tmp_path / "data.json"
    data_file.write_text(json.dumps({"variables": variables or {}}))
    asset_dir = tmp_path / "assets"
    asset_dir.mkdir(exist_ok=True)
    return SandboxRequest(code=code, data_file=str(data_file),
                          asset_dir=str(asset_dir), timeout_s=timeout_s)


def write_request_file(tmp_path, request: SandboxRequest) -> str:
    path = tmp_path / "request.json"
    path.write_text(json.dumps({
        "code": request.code, "data_file": request.data_file,
        "asset_dir": request.asset_dir, "timeout_s": request.timeout_s,
    }))
    return str(path)


class TestInjection:
    def test_payload_length_printed(self, tmp_path):
        payload = [{"year": 2000 + i, "growth": 0.1 * i} for i in range(10)]
        request = make_request(
            tmp_path, "print(len(real_gdp_growth_of_canada))",
            variables={"real_gdp_growth_of_canada": payload})
        response = run_payload(request)
        assert response["exit_code"] == 0
        assert response["stdout"] == "10\n"
        assert response["stderr"] == ""
        assert response["assets"] == []
        assert set(response) == RESPONSE_KEYS

    def test_multiple_variables_bound(self, tmp_path):
        request = make_request(
            tmp_path, "print(a[0]['x'] + b[0]['y'])",
            variables={"a": [{"x": 2}], "b": [{"y": 3}]})
        response = run_payload(request)
        assert response["stdout"] == "5\n"

    def test_bad_data_file_fails_before_user_code(self, tmp_path):
        request = make_request(tmp_path, "print('USER CODE RAN')")
        with open(request.data_file, "w") as fh:
            fh.write("{broken json")
        response = run_payload(request)
        assert response["exit_code"] != 0
        assert "USER CODE RAN" not in response["stdout"]

    def test_invalid_variable_name_rejected(self, tmp_path):
        data_file = tmp_path / "data.json"
        data_file.write_text(json.dumps({"variables": {"not a name": []}}))
        asset_dir = tmp_path / "assets"
        asset_dir.mkdir()
        request = SandboxRequest("print('x')", str(data_file), str(asset_dir), 5)
        response = run_payload(request)
        assert response["exit_code"] != 0
        assert "invalid variable name" in response["stderr"]

    def test_preamble_is_deterministic(self, tmp_path):
        request = make_request(tmp_path, "pass", variables={"v": [1]})
        assert build_preamble(request) == build_preamble(request)


class TestTimeout:
    def test_infinite_loop_killed_with_marker(self, tmp_path):
        request = make_request(tmp_path, "while True: pass", timeout_s=2.0)
        started = time.monotonic()
        response = run_payload(request)
        elapsed = time.monotonic() - started
        assert response["exit_code"] != 0
        assert "TIMEOUT" in response["stderr"]
        assert elapsed < 15

    def test_fast_code_unaffected(self, tmp_path):
        request = make_request(tmp_path, "print('quick')", timeout_s=2.0)
        response = run_payload(request)
        assert response["exit_code"] == 0
        assert "TIMEOUT" not in response["stderr"]


class TestAssets:
    def test_single_figure_listed_exactly(self, tmp_path):
        code = (
            "with open(f'{ASSET_DIR}/fig1.png', 'wb') as fh:\n"
            "    fh.write(b'\\x89PNG fake bytes')\n"
        )
        request = make_request(tmp_path, code)
        response = run_payload(request)
        assert response["exit_code"] == 0
        # oracle: directory listing
        listing = sorted(os.listdir(request.asset_dir))
        assert [a["name"] for a in response["assets"]] == listing == ["fig1.png"]
        assert response["assets"][0]["size"] == os.path.getsize(
            os.path.join(request.asset_dir, "fig1.png"))

    def test_figure_count_bookkeeping(self, tmp_path):
        code = (
            "for i in range(3):\n"
            "    with open(f'{ASSET_DIR}/fig{i}.png', 'wb') as fh:\n"
            "        fh.write(b'data')\n"
        )
        response = run_payload(make_request(tmp_path, code))
        assert len(response["assets"]) == 3
        assert [a["name"] for a in response["assets"]] == ["fig0.png", "fig1.png", "fig2.png"]

    def test_nonempty_asset_dir_rejected(self, tmp_path):
        request = make_request(tmp_path, "pass")
        (tmp_path / "assets" / "stale.png").write_bytes(b"old")
        path = write_request_file(tmp_path, request)
        with pytest.raises(RequestError, match="not empty"):
            load_request(path)


class TestIsolation:
    def test_socket_creation_blocked(self, tmp_path):
        code = (
            "import socket\n"
            "try:\n"
            "    socket.socket()\n"
            "    print('SOCKET OPENED')\n"
            "except OSError as exc:\n"
            "    print(f'blocked: {exc}')\n"
        )
        response = run_payload(make_request(tmp_path, code))
        assert response["exit_code"] == 0
        assert "SOCKET OPENED" not in response["stdout"]
        assert "blocked: network disabled in sandbox" in response["stdout"]

    def test_headless_plotting_env(self, tmp_path):
        code = "import os\nprint(os.environ.get('MPLBACKEND'))\n"
        response = run_payload(make_request(tmp_path, code))
        assert response["stdout"] == "Agg\n"

    def test_runtime_error_reported(self, tmp_path):
        response = run_payload(make_request(tmp_path, "raise KeyError('yeer')"))
        assert response["exit_code"] != 0
        assert "KeyError: 'yeer'" in response["stderr"]

    def test_table_sentinels_pass_through(self, tmp_path):
        code = "print('<<TABLE>>')\nprint('| a |')\nprint('<</TABLE>>')"
        response = run_payload(make_request(tmp_path, code))
        assert "<<TABLE>>\n| a |\n<</TABLE>>\n" == response["stdout"]


class TestContractInvocation:
    def test_subprocess_invocation_bit_exact_schema(self, tmp_path):
        payload = [{"year": 2000 + i} for i in range(10)]
        request = make_request(tmp_path, "print(len(real_gdp_growth_of_canada))",
                               variables={"real_gdp_growth_of_canada": payload})
        request_path = write_request_file(tmp_path, request)
        proc = subprocess.run(
            [sys.executable, "-m", "sandbox_runner", request_path],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        response = json.loads(proc.stdout)
        assert set(response) == RESPONSE_KEYS
        assert response["stdout"] == "10\n"
        assert response["exit_code"] == 0
        # keys are serialized sorted, per the contract
        assert proc.stdout.index('"assets"') < proc.stdout.index('"exit_code"')

    def test_missing_request_file_is_infra_error(self, tmp_path, capsys):
        assert main([str(tmp_path / "nope.json")]) == 2
        assert "request error" in capsys.readouterr().err

    def test_user_failure_still_exits_zero(self, tmp_path, capsys):
        request = make_request(tmp_path, "1/0")
        request_path = write_request_file(tmp_path, request)
        assert main([request_path]) == 0
        response = json.loads(capsys.readouterr().out)
        assert response["exit_code"] != 0
        assert "ZeroDivisionError" in response["stderr"]
