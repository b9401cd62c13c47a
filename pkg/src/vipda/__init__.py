"""Partial domain adaptation with adversarial feature alignment,
class-conditional latent regularization and pseudo-label class weighting,
exercised on synthetic domain-shift scenarios."""

from .core_math import (
    DiagGaussianParams,
    entropy,
    js_divergence,
    log_gaussian_diag,
    softmax,
)
from .data import (
    ScenarioDataset,
    ScenarioSpec,
    TrainView,
    batch_iterator,
    generate_scenario,
    load_dataset,
    save_dataset,
)
from .engine import (
    TrainConfig,
    TrainState,
    alpha_schedule,
    fit,
    load_checkpoint,
    lr_schedule,
    reestimate,
    save_checkpoint,
    sgd_step,
    source_only_config,
    variant_config,
)
from .evaluation import EvalReport, evaluate, run_ablation
from .labeling import (
    CenterBank,
    LabelingState,
    class_centers,
    class_weights,
    confidence_threshold,
    confident_targets,
    estimate_labeling,
    pseudo_label,
    similarity,
)
from .losses import (
    LossBreakdown,
    adv_loss,
    cda_loss,
    class_loss,
    em_loss,
    recon_loss,
    total_loss,
)
from .networks import (
    ClassPriorBank,
    LatentGaussian,
    NetConfig,
    classify,
    decode,
    discriminate,
    forward_latent,
    grad_reverse,
    init_params,
    sample_latent,
)

__version__ = "0.1.0"
