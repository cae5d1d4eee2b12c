"""Boundary adversarial attack toolkit.

Crafts adversarial examples by perturbing only a growing border of the
input image, with a built-in CNN inference runtime, comparison attacks
(patch / frame / whole-image iterated FGSM), campaign metrics and
class-activation attention maps.
"""

__version__ = "0.1.0"

from .attack import (  # noqa: F401
    AttackConfig,
    AttackOutcome,
    AttackRegion,
    boundary,
    boundary_attack,
    epsilon_schedule,
    frame,
    masked_fgsm_step,
    patch,
    region_attack,
    region_mask,
    whole,
)
from .metrics import EvalRecord, EvalSet, MetricsReport, metrics_report  # noqa: F401
from .model import LayerSpec, ModelGraph  # noqa: F401
from .tensor import DOMAIN_01, DOMAIN_255, PixelDomain, Tensor  # noqa: F401
from .weights import load_model, load_model_file, save_model  # noqa: F401
