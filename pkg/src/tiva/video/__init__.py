from .codec import (GRAY_LEVEL, FrameDecoder, FrameEncoder, TemporalTransformer,
                    VideoCodec, VideoTokenFrame, patchify, psnr, unpatchify)
from .motion import MotionEncoder, MotionPose, sixd_to_rotation
from .train import VideoReport, train_video_codec, train_video_codec_clips
