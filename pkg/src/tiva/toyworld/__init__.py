from .world import (FRAME_H, FRAME_W, OVERLAP_FRAMES, DialogueSample,
                    ScenarioSpec, Segment, compose_initial_frame,
                    idle_splice_spec, manipulation_spec, render_avatar_frame,
                    render_scenario, single_speaker_spec, speaker_tone_hz,
                    turn_taking_spec)
from .curriculum import (DEFAULT_MIX, STAGES, build_curriculum, build_customized,
                         check_mask_rules, make_sample)
from .prefs import (BANNED_WORDS, CRITERIA, AgentSegment, PreferencePair,
                    label_pair, synthesize_preferences)
from .dataset import load_dataset, load_sample, save_dataset, save_sample
