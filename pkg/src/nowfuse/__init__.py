"""nowfuse: spatiotemporal fusion of radar-like and satellite-like grids."""

from . import _threads  # noqa: F401  (pins BLAS to one thread)
from .blend import (AlphaMap, CoverageGeometry, NoiseSpec, alpha_blend,
                    build_alpha_inference, build_alpha_training, corrupt,
                    inference_mask, noise_field)
from .flow import (FlowParams, FrameSequence, estimate_flow, interpolate,
                   resample_cadence, warp)
from .grid import (FlowField, Grid, MaskGrid, NfgFormatError, Tensor4,
                   clamp01, export_png, read_flow, read_grid, read_mask,
                   read_nfg, resample_bilinear, write_flow, write_grid,
                   write_nfg)
from .metrics import SsimParams, psnr, seam_energy, ssim
from .network import (NetConfig, NetworkParams, TrainBatch, TrainConfig,
                      composite, grad, init_params, inpaint, load_params,
                      loss, net_forward, save_params, train)
from .pconv import (PConvLayer, mask_update_binary, mask_update_soft,
                    pconv_forward)
from .synth import (SceneSpec, SensorSpec, gen_sequence, make_training_set,
                    radar_view, render_field, satellite_view)

__version__ = "0.1.0"
