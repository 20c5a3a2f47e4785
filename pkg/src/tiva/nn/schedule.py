"""Learning-rate schedule: linear warmup then cosine decay to a floor."""

from __future__ import annotations

import math


def warmup_cosine(step: int, total: int, base_lr: float,
                  warmup: int = 100, floor: float = 0.1) -> float:
    if step < warmup:
        return base_lr * (step + 1) / warmup
    span = max(total - warmup, 1)
    t = min((step - warmup) / span, 1.0)
    return base_lr * (floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * t)))
