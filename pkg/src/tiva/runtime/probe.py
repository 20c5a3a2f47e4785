"""Interruption probe: scripted barge-ins against a live session.

Context-assembly correctness (the barge-in is visible exactly one frame
after arrival) is checked from session manifests independently of model
behavior; the behavioral half measures frames from barge-in onset to the
agent's speech activity dropping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .session import ACTIVITY_RMS, DuplexSession


@dataclass
class ProbeReport:
    barge_in_frame: int | None
    response_frames: int | None          # onset -> agent activity drop
    context_ok: bool = True
    context_detail: str = ""
    activity: list[bool] = field(default_factory=list)


def run_interruption_probe(session: DuplexSession, total_frames: int,
                           barge_in_frame: int | None,
                           tone_hz: float = 220.0) -> ProbeReport:
    """Drive `total_frames` ticks; interlocutor audio starts at the barge-in
    frame and stays on.  No barge-in (None) is the negative control."""
    cfg = session.model.cfg.audio
    spf = session.spf
    activity: list[bool] = []
    emit_lag = session.generator.emit_lag
    for i in range(total_frames):
        out = session.tick()
        activity.append(bool(np.sqrt((out.pcm ** 2).mean()) > ACTIVITY_RMS))
        # interlocutor speech during frame i's interval (after tick i starts)
        if barge_in_frame is not None and i >= barge_in_frame:
            t = (np.arange(spf) + i * spf) / cfg.sample_rate
            session.ingest_audio(0.5 * np.sin(2 * np.pi * tone_hz * t).astype(np.float32))

    # context check: audio ingested during frame i appears in frame i+1's
    # manifest events and not in frame i's
    ok, detail = True, ""
    if barge_in_frame is not None:
        for m in session.manifests:
            for kind, arrived in m.get("events", []):
                if arrived >= m["emitted_frame"]:
                    ok, detail = False, f"frame {m['emitted_frame']} saw event from {arrived}"
        saw = [m["emitted_frame"] for m in session.manifests
               if any(k == "human_audio" for k, _ in m.get("events", []))]
        if saw and min(saw) != barge_in_frame + 1:
            ok, detail = False, f"first visibility at {min(saw)}, expected {barge_in_frame + 1}"

    response = None
    if barge_in_frame is not None:
        # activity timeline lags emission by emit_lag frames
        onset = barge_in_frame + emit_lag
        was_active = any(activity[max(0, onset - 6):onset + 1])
        if was_active:
            for j in range(onset, len(activity)):
                if not activity[j]:
                    response = j - onset
                    break
    return ProbeReport(barge_in_frame, response, ok, detail, activity)
