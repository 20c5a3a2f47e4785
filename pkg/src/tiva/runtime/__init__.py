from .planner import (DEFAULT_HORIZON_FRAMES, KEYFRAME_COUNT, AsyncPlanner,
                      Plan, PlanRequest, RulePlanner)
from .probe import ProbeReport, run_interruption_probe
from .session import (ACTIVITY_RMS, AgentFrame, DuplexSession, SessionFault,
                      StreamingContextualizer)
from .telemetry import FrameBudget, Telemetry, TickRecord
