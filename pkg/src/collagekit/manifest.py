"""Run manifest: the resolved parameters, seeds, paths and counters of one
CLI invocation, persisted next to its outputs so the run can be re-derived
and repeated bit-exactly."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    seed: int
    config: dict
    inputs: dict
    outputs: dict
    counters: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    tool: str = "collagekit"
    version: str = __version__

    def to_command(self) -> list[str]:
        """The exact CLI invocation this manifest describes."""
        return ["collagekit", self.command, *self.argv]

    def write(self, path: Path | str) -> None:
        payload = {
            "tool": self.tool, "version": self.version,
            "command": self.command, "argv": self.argv, "seed": self.seed,
            "config": self.config, "inputs": self.inputs,
            "outputs": self.outputs, "counters": self.counters,
            "timing": self.timing,
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    @classmethod
    def read(cls, path: Path | str) -> "RunManifest":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(command=raw["command"], argv=raw["argv"], seed=raw["seed"],
                   config=raw["config"], inputs=raw["inputs"],
                   outputs=raw["outputs"], counters=raw.get("counters", {}),
                   timing=raw.get("timing", {}), tool=raw.get("tool", "collagekit"),
                   version=raw.get("version", __version__))


class StageTimer:
    def __init__(self) -> None:
        self.timing: dict[str, float] = {}
        self._start = time.perf_counter()
        self._last = self._start

    def mark(self, stage: str) -> None:
        now = time.perf_counter()
        self.timing[stage] = round(now - self._last, 6)
        self._last = now

    def done(self) -> dict[str, float]:
        self.timing["total"] = round(time.perf_counter() - self._start, 6)
        return self.timing
