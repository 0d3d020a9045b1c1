"""Brain-signal to multi-modal embedding decoding on a small numpy autodiff core.

Modules:

- ``tensor``: reverse-mode autodiff tensors and finite-difference checks
- ``signals``: epochs, synthetic benchmark, band/region selection, NDEC files
- ``foveation``: fovea masks, blur, similarity memory bank, blur-radius policy
- ``encoders``: per-modality expert encoders
- ``objectives``: masked contrastive, InfoNCE and alignment losses
- ``fusion``: transformer fusion over the four expert embeddings
- ``align``: shared-trunk / per-modality-head alignment
- ``metrics``: retrieval, similarity heatmaps, saliency, PixCorr, SSIM
- ``pipeline``, ``report``, ``cli``: training, evaluation and reporting
"""

from .align import STHParams, TrainingDiverged, init_sth, sth_forward, sth_infer, sth_train_step
from .checkpoint import CheckpointBundle, CheckpointError, ConfigMismatchError
from .config import ConfigError, RunConfig, load_config, parse_config
from .encoders import ENCODER_VARIANTS, ExpertParams, expert_forward, init_experts
from .foveation import (BankStats, FoveaParams, MemoryBank, UMPolicy, apply_foveation, ema_update,
                        fovea_mask, gaussian_blur, select_sigma, similarity_score, stub_encode)
from .fusion import FusionParams, fuse, fusion_forward, init_fusion, modality_mask, tokenize_project
from .images import ImageBuffer, ImageFormatError, read_pnm, write_pnm
from .metrics import (RetrievalReport, RSAMatrix, Topography, UndefinedVarianceError, pixcorr,
                      rsa_heatmap, saliency_topography, ssim, topk_retrieval)
from .objectives import LossConfig, infonce_loss, scm_loss, scm_mask, sth_loss
from .pipeline import UnsupportedAxisError, run_ablate, run_eval, run_train
from .report import emit_report
from .signals import (BANDS, MODALITIES, BandSpec, EmptySelectionError, EpochBatch, Split,
                      bandpass_filter, read_epochs, select_region, synth_dataset, write_epochs)
from .tensor import (ContractError, NonFiniteError, ShapeError, TapeError, Tensor, grad_check,
                     no_grad, precision)

__version__ = "0.1.0"
