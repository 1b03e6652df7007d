"""Ghost-free HDR fusion with structure-tensor guidance, in numpy."""

from .image_io import HdrImage, LdrImage, load_hdr, load_ldr, save_hdr
from .losses import LossValue, loss, psnr_l, psnr_mu
from .network import NetworkConfig, NetworkParams, forward, init_params, load_params, save_params
from .pipeline import FusionJob, fuse_pair, fuse_sequence, select_reference
from .radiometry import InputStack, TonemapConfig, assemble_input, ldr_to_hdr, tonemap_mu

__all__ = [
    "FusionJob",
    "HdrImage",
    "InputStack",
    "LdrImage",
    "LossValue",
    "NetworkConfig",
    "NetworkParams",
    "TonemapConfig",
    "assemble_input",
    "forward",
    "fuse_pair",
    "fuse_sequence",
    "init_params",
    "ldr_to_hdr",
    "load_hdr",
    "load_ldr",
    "load_params",
    "loss",
    "psnr_l",
    "psnr_mu",
    "save_hdr",
    "save_params",
    "select_reference",
    "tonemap_mu",
]
