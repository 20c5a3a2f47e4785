from .codec import (AudioCodec, AudioTokenGrid, ResidualQuantizer,
                    float_to_pcm16, pcm16_to_float)
from .train import CodecDivergence, CodecReport, reconstruction_mse, train_codec
