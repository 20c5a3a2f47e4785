from .tensor import (Tensor, causal_attention, concat, conv1d, cross_entropy,
                     embedding, forward_backward, log_softmax, no_grad,
                     pad_time, rms_norm, softmax, stack, upsample_zero)
from .modules import (AttentionConfig, Embedding, FeedForward, Linear, Module,
                      MultiHeadAttention, RMSNorm, TransformerBlock, apply_rope,
                      attention, causal_mask, l2_normalize, rope_tables,
                      trunc_normal)
from .optim import AdamW, OptimizerState
from .schedule import warmup_cosine
from .checkpoint import (CheckpointError, check_config_hash, config_hash,
                         load_checkpoint, load_checkpoint_file,
                         save_checkpoint, save_checkpoint_file)
