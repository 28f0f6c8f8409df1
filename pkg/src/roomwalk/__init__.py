"""roomwalk: camera-conditioned autoregressive synthesis of room walkthroughs.

Given one image of a procedural 3D room world and a camera trajectory, a
causal transformer over vector-quantized image tokens generates the frames a
camera would see along the path.  Relative cameras condition the model twice:
as input tokens, and as an additive attention bias computed from each frame
pair's relative transform.
"""

from . import checkpoint, codec, geometry, metrics, optim, sampler, tensor, trainer
from . import transformer, worldgen
from .codec import Codec, CodecConfig, train_codec
from .geometry import CameraPose, Intrinsics, RelativeTransform
from .metrics import feature_stats, frechet, psnr
from .sampler import RolloutConfig, RolloutSession, beam_search_frame, rollout
from .trainer import ClipDataset, TrainConfig, ablation_run, train_model
from .transformer import ModelConfig, SceneTransformer, desk_config, paper_config
from .worldgen import SceneSpec, export_dataset, generate_scene, generate_trajectory, render

__version__ = "0.1.0"
