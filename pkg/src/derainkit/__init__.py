"""Self-supervised single-image deraining toolkit.

Locates rain-streak pixels with a dictionary-learned prior, then trains
per-image pixel-wise actor-critic agents whose filtering actions remove
the streaks, guided by stochastic pseudo-derained references and a
no-reference quality score.
"""

from .agent import (
    TrainConfig,
    Trajectory,
    StepRecord,
    derain,
    forward,
    rollout,
    select_actions,
    step_state,
    train,
)
from .brisque import ScorerModel, brisque_features, brisque_score, load_scorer, mscn
from .config import RunConfig, SynthConfig, load_config, parse_config
from .filters import ACTION_SET, FilterSpec, apply_action
from .image import MetricReport, load_image, new_image, psnr, save_image, ssim, to_grayscale
from .nn import NetworkParams, init_networks, load_params, save_params
from .pseudoref import SamplerConfig, sample_pseudo_reference
from .rainmask import MaskConfig, compute_rdp, load_mask, save_mask

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
