from .delay import (DelayPattern, apply_delay, completed_steps, delayed_view,
                    invert_delay)
from .diffusion import (DiffusionHead, DiffusionSchedule, timestep_embedding,
                        token_rng_streams)
from .layout import AssembledBatch, FrameLayout, TokenizedDialogue, assemble_training_batch
from .model import DuplexBackbone, uniform_audio_nll
from .generate import FrameGenerator, FrameOutput, sample_categorical
