from .pipelines import (STAGES, LossReport, TrainConfig, backbone_config_hash,
                        evaluate_losses, tokenize_dialogue, train_stage1,
                        train_stage2)
from .evaluate import (ACTIVITY_RMS_THRESHOLD, EVAL_SUITES, Rollout,
                       closed_loop_rollout, eval_identity, eval_manipulation,
                       eval_turn_taking, evaluate, f1_score, frame_activity,
                       locate_object)
