"""Execution shim for generated analysis code.

Implements the server side of the sandbox contract (see
docs/sandbox-contract.md in the engine repository): inject data variables,
run the program headless with a timeout, report stdout/stderr and produced
assets as JSON.
"""

from .runner import SandboxRequest, build_preamble, main, run_payload

__all__ = ["SandboxRequest", "build_preamble", "main", "run_payload"]
