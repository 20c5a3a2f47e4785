"""Per-frame deadline accounting for the real-time contract."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field


@dataclass
class FrameBudget:
    target_fps: int = 24
    budget_ms: float = 0.0
    miss_policy: str = "repeat_last"

    def __post_init__(self):
        if not self.budget_ms:
            self.budget_ms = 1000.0 / self.target_fps
        if self.miss_policy not in ("repeat_last", "degrade_sampler"):
            raise ValueError(f"unknown miss policy {self.miss_policy!r}")


@dataclass
class TickRecord:
    frame: int
    tick_ms: float
    miss: bool
    policy: str = ""
    planner_ms: float = 0.0
    prompt_rev: int = 0
    overflow_drops: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class Telemetry:
    budget: FrameBudget
    records: list[TickRecord] = field(default_factory=list)
    total_tick_ms: float = 0.0
    miss_count: int = 0
    planner_timeouts: int = 0
    overflow_drops: int = 0

    def add(self, rec: TickRecord) -> None:
        self.records.append(rec)
        self.total_tick_ms += rec.tick_ms
        if rec.miss:
            self.miss_count += 1
        self.overflow_drops += rec.overflow_drops

    def json_lines(self) -> list[str]:
        return [r.to_json() for r in self.records]

    def summary(self) -> dict:
        times = sorted(r.tick_ms for r in self.records)

        def pct(p: float) -> float:
            if not times:
                return 0.0
            idx = min(len(times) - 1, int(round(p / 100 * (len(times) - 1))))
            return times[idx]

        return {
            "frames": len(self.records),
            "budget_ms": self.budget.budget_ms,
            "total_tick_ms": self.total_tick_ms,
            "misses": self.miss_count,
            "planner_timeouts": self.planner_timeouts,
            "overflow_drops": self.overflow_drops,
            "p50_ms": pct(50), "p95_ms": pct(95), "p99_ms": pct(99),
        }
