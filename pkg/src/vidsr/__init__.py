"""Real-time video super-resolution with spatio-temporal networks and motion compensation."""

from .autograd import Tensor, backward, no_grad
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .cost import fusion_costs, mc_ops, network_ops, pipeline_costs, steady_state_ops
from .data import FrameBlock, Patch, SampleSet, VideoClip, downscale, extract_samples
from .metrics import bicubic_upscale, psnr_video, ssim, ssim_video
from .motion import MCNetwork, compensate, compensate_block
from .networks import NetworkSpec, SRNetwork, build_network, forward_sr, stream_super_resolve
from .trainer import TrainConfig, Trainer, pretrain_mc, train_joint, train_sr, validate

__version__ = "0.1.0"
