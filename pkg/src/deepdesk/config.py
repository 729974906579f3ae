"""Run configuration: a small TOML-like key/value format with env interpolation.

The format is deliberately minimal so config diffs stay readable:

    # comment
    [models.planner_chat]
    endpoint = "https://api.example.com/v1"
    model = "some-chat-model"
    api_key_env = "DEEPDESK_API_KEY"
    temperature = 0.3

Values are quoted strings, integers, floats, or true/false.  ``${VAR}``
inside a string is replaced with the environment variable's value; secrets
therefore never live in the file itself.
"""

from __future__ import annotations

import os
import re
import shlex
from dataclasses import dataclass, field, fields

from .errors import ConfigError

_KEY_RE = re.compile(r"^[A-Za-z_][\w\-]*$")
_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _interpolate(value: str) -> str:
    def repl(m: re.Match) -> str:
        name = m.group(1)
        if name not in os.environ:
            raise ConfigError(f"environment variable {name} referenced in config is not set")
        return os.environ[name]

    return _ENV_RE.sub(repl, value)


def _parse_value(raw: str, where: str):
    raw = raw.strip()
    if not raw:
        raise ConfigError(f"{where}: empty value")
    if raw[0] in "\"'":
        if len(raw) < 2 or raw[-1] != raw[0]:
            raise ConfigError(f"{where}: unterminated string")
        return _interpolate(raw[1:-1])
    if raw in ("true", "false"):
        return raw == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return _interpolate(raw)


def parse_config_text(text: str) -> dict:
    """Parse config text into a nested dict keyed by dotted section path."""
    root: dict = {}
    section = root
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        where = f"line {lineno}"
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"{where}: malformed section header {stripped!r}")
            path = stripped[1:-1].strip()
            section = root
            for part in path.split("."):
                if not _KEY_RE.match(part):
                    raise ConfigError(f"{where}: bad section name {part!r}")
                section = section.setdefault(part, {})
                if not isinstance(section, dict):
                    raise ConfigError(f"{where}: section {path!r} collides with a value")
            continue
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if not _KEY_RE.match(key):
            raise ConfigError(f"{where}: bad key {key!r}")
        section[key] = _parse_value(raw, where)
    return root


@dataclass
class RoleEndpoint:
    """Transport settings for one model role.

    ``temperature`` left unset falls back to the per-role default (0 for
    judges, the coder, and vision; 0.3 for chat roles).
    """

    endpoint: str = ""
    model: str = ""
    api_key_env: str = ""
    max_tokens: int = 4096
    temperature: float | None = None


@dataclass
class StoreConfig:
    bundle_dir: str = ""
    embedding_cache: str = ""  # defaults to <bundle_dir>/embeddings.bin
    chunk_size: int = 2000
    chunk_overlap: int = 200


@dataclass
class PlannerConfig:
    min_subtasks: int = 3
    max_subtasks: int = 8
    max_tool_calls_per_subtask: int = 6
    min_analyzer_calls_per_subtask: int = 1
    history_char_budget: int = 6000


@dataclass
class TableAnalysisConfig:
    retrieve_k: int = 10
    max_code_retries: int = 3
    max_validation_retries: int = 3


@dataclass
class WebAnalysisConfig:
    max_results: int = 5
    fetch_timeout_s: float = 15.0


@dataclass
class SandboxConfig:
    command: str = ""  # argv for the external runner, e.g. "python -m sandbox_runner"
    timeout_s: float = 30.0

    def argv(self) -> list[str]:
        return shlex.split(self.command)


@dataclass
class SearchConfig:
    endpoint: str = ""


@dataclass
class EvalConfig:
    cache_dir: str = ".judge_cache"
    criteria_file: str = ""
    max_pages_per_report: int = 4


@dataclass
class RunConfig:
    models: dict[str, RoleEndpoint] = field(default_factory=dict)
    store: StoreConfig = field(default_factory=StoreConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    table_analysis: TableAnalysisConfig = field(default_factory=TableAnalysisConfig)
    web_analysis: WebAnalysisConfig = field(default_factory=WebAnalysisConfig)
    sandbox: SandboxConfig = field(default_factory=SandboxConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "out"
    script_file: str = ""  # scripted-backend rules for offline runs
    seed: int = 0

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        cfg = cls()
        known = {"models", "store", "planner", "table_analysis", "web_analysis",
                 "sandbox", "search", "eval", "output", "run"}
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown config section [{key}]")
        for role, sub in data.get("models", {}).items():
            cfg.models[role] = _fill(RoleEndpoint, sub, f"models.{role}")
        cfg.store = _fill(StoreConfig, data.get("store", {}), "store")
        cfg.planner = _fill(PlannerConfig, data.get("planner", {}), "planner")
        cfg.table_analysis = _fill(TableAnalysisConfig, data.get("table_analysis", {}), "table_analysis")
        cfg.web_analysis = _fill(WebAnalysisConfig, data.get("web_analysis", {}), "web_analysis")
        cfg.sandbox = _fill(SandboxConfig, data.get("sandbox", {}), "sandbox")
        cfg.search = _fill(SearchConfig, data.get("search", {}), "search")
        cfg.eval = _fill(EvalConfig, data.get("eval", {}), "eval")
        out = data.get("output", {})
        if "dir" in out:
            cfg.output_dir = str(out["dir"])
        run = data.get("run", {})
        cfg.script_file = str(run.get("script", ""))
        cfg.seed = int(run.get("seed", 0))
        cfg._validate()
        return cfg

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        return cls.from_mapping(parse_config_text(text))

    def _validate(self) -> None:
        positive = [
            ("planner.min_subtasks", self.planner.min_subtasks),
            ("planner.max_subtasks", self.planner.max_subtasks),
            ("planner.max_tool_calls_per_subtask", self.planner.max_tool_calls_per_subtask),
            ("table_analysis.retrieve_k", self.table_analysis.retrieve_k),
            ("store.chunk_size", self.store.chunk_size),
            ("sandbox.timeout_s", self.sandbox.timeout_s),
            ("web_analysis.max_results", self.web_analysis.max_results),
        ]
        for name, value in positive:
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        non_negative = [
            ("table_analysis.max_code_retries", self.table_analysis.max_code_retries),
            ("table_analysis.max_validation_retries", self.table_analysis.max_validation_retries),
            ("store.chunk_overlap", self.store.chunk_overlap),
            ("planner.min_analyzer_calls_per_subtask", self.planner.min_analyzer_calls_per_subtask),
        ]
        for name, value in non_negative:
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
        if self.planner.min_subtasks > self.planner.max_subtasks:
            raise ConfigError("planner.min_subtasks exceeds planner.max_subtasks")
        if self.planner.min_analyzer_calls_per_subtask > self.planner.max_tool_calls_per_subtask:
            raise ConfigError(
                "planner.min_analyzer_calls_per_subtask exceeds planner.max_tool_calls_per_subtask"
            )
        if self.store.chunk_overlap >= self.store.chunk_size:
            raise ConfigError("store.chunk_overlap must be smaller than store.chunk_size")

    def require_bundle_dir(self) -> str:
        if not self.store.bundle_dir:
            raise ConfigError("store.bundle_dir is required but not set")
        if not os.path.isdir(self.store.bundle_dir):
            raise ConfigError(f"store.bundle_dir does not exist: {self.store.bundle_dir}")
        return self.store.bundle_dir

    def embedding_cache_path(self) -> str:
        if self.store.embedding_cache:
            return self.store.embedding_cache
        return os.path.join(self.store.bundle_dir, "embeddings.bin")


def _fill(dc_type, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a section, got {data!r}")
    allowed = {f.name: f.type for f in fields(dc_type)}
    obj = dc_type()
    for key, value in data.items():
        if key not in allowed:
            raise ConfigError(f"unknown config key {where}.{key}")
        current = getattr(obj, key)
        if current is None:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{where}.{key}: expected number, got {value!r}")
            setattr(obj, key, float(value))
            continue
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where}.{key}: expected true/false, got {value!r}")
        elif isinstance(current, int) and not isinstance(value, int):
            raise ConfigError(f"{where}.{key}: expected integer, got {value!r}")
        elif isinstance(current, float) and not isinstance(value, (int, float)):
            raise ConfigError(f"{where}.{key}: expected number, got {value!r}")
        elif isinstance(current, str) and not isinstance(value, str):
            raise ConfigError(f"{where}.{key}: expected string, got {value!r}")
        setattr(obj, key, float(value) if isinstance(current, float) else value)
    return obj
