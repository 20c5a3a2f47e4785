from .reward import (REWARD_SEGMENT_FRAMES, RewardModel, RewardReport,
                     pairwise_accuracy, reward_loss, segment_dialogue,
                     tokenize_pairs, train_reward_model)
from .ppo import (PpoConfig, PpoStats, RolloutBuffer, ValueHead,
                  clipped_surrogate, collect_rollouts, gae_advantages,
                  ppo_update)
