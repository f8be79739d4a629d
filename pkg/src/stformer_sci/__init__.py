"""Video snapshot compressive imaging: CACTI simulation and STFormer reconstruction."""

from .forward import MaskCube, Measurement, encode, gen_masks, init_estimate
from .metrics import QualityReport, eval_dataset, psnr, ssim
from .model import ModelConfig, ModelParams, build_model, stformer_forward
from .tensor import Tensor, backward, grad_check, no_grad

__version__ = "0.1.0"
