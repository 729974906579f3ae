"""Run trajectory: an append-only log of steps, model exchanges, and materials.

Everything a run produces flows through here so that two runs against the
same scripted backend serialize to byte-identical ``trajectory.json`` files.
Timestamps deliberately live in ``meta.json``, never in the trajectory.
"""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass, field


@dataclass
class ModelExchange:
    """One model call, recorded verbatim."""

    index: int
    role: str
    prompt: list[dict]
    response: str
    attempt: int = 1
    latency_s: float = 0.0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    image_digests: list[str] = field(default_factory=list)


@dataclass
class TrajectoryStep:
    index: int
    phase: str  # plan | research | write | refine
    subtask_id: str | None
    tool_call: dict | None
    material_ids: list[str] = field(default_factory=list)
    materials: list[dict] = field(default_factory=list)
    exchanges: list[ModelExchange] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "phase": self.phase,
            "subtask_id": self.subtask_id,
            "tool_call": self.tool_call,
            "material_ids": list(self.material_ids),
            "materials": [dict(m) for m in self.materials],
            "exchanges": [asdict(e) for e in self.exchanges],
        }


class RunTrace:
    """Thread-safe trajectory accumulator for a single research run."""

    def __init__(self, question_id: str = ""):
        self.question_id = question_id
        self.steps: list[TrajectoryStep] = []
        self.events: list[dict] = []
        self._materials: dict[str, dict] = {}
        self._all_exchanges: list[ModelExchange] = []
        self._material_count = 0
        self._current: TrajectoryStep | None = None
        self._lock = threading.Lock()

    # -- steps ---------------------------------------------------------------

    def begin_step(self, phase: str, subtask_id: str | None = None,
                   tool_call: dict | None = None) -> TrajectoryStep:
        with self._lock:
            step = TrajectoryStep(
                index=len(self.steps) + 1,
                phase=phase,
                subtask_id=subtask_id,
                tool_call=tool_call,
            )
            self.steps.append(step)
            self._current = step
            return step

    def end_step(self) -> None:
        with self._lock:
            self._current = None

    # -- exchanges -------------------------------------------------------------

    def record_exchange(self, role: str, prompt: list[dict], response: str, *,
                        attempt: int = 1, latency_s: float = 0.0,
                        prompt_tokens: int = 0, completion_tokens: int = 0,
                        image_digests: list[str] | None = None) -> ModelExchange:
        with self._lock:
            exchange = ModelExchange(
                index=len(self._all_exchanges),
                role=role,
                prompt=[dict(m) for m in prompt],
                response=response,
                attempt=attempt,
                latency_s=latency_s,
                prompt_tokens=prompt_tokens,
                completion_tokens=completion_tokens,
                image_digests=list(image_digests or []),
            )
            self._all_exchanges.append(exchange)
            if self._current is not None:
                self._current.exchanges.append(exchange)
            return exchange

    def exchanges(self, role: str | None = None) -> list[ModelExchange]:
        out = list(self._all_exchanges)
        if role is not None:
            out = [e for e in out if e.role == role]
        return out

    # -- materials -------------------------------------------------------------

    def next_material_id(self) -> str:
        with self._lock:
            self._material_count += 1
            return f"mat-{self._material_count:03d}"

    def register_material(self, material: dict) -> None:
        material_id = material["id"]
        with self._lock:
            if material_id in self._materials:
                raise ValueError(f"material {material_id} registered twice")
            self._materials[material_id] = material
            if self._current is not None:
                self._current.material_ids.append(material_id)
                self._current.materials.append(material)

    def material(self, material_id: str) -> dict:
        return self._materials[material_id]

    def material_ids(self) -> list[str]:
        return list(self._materials)

    # -- events ------------------------------------------------------------------

    def log_event(self, kind: str, message: str) -> None:
        with self._lock:
            self.events.append({
                "kind": kind,
                "message": message,
                "step": self._current.index if self._current else None,
            })

    def events_of(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["kind"] == kind]

    # -- serialization -------------------------------------------------------------

    def to_json(self) -> str:
        steps = [step.to_dict() for step in self.steps]
        return json.dumps(steps, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
