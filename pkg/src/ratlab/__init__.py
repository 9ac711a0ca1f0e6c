"""Semi-supervised learning with adversarial transformations.

Consistency regularization where the perturbation is a norm-bounded,
identity-anchored, parameter-differentiable transformation chosen
adversarially via power iteration with finite-difference Hessian-vector
products. The additive-noise special case reproduces virtual adversarial
training exactly; composite transformations and epsilon rampup extend the
smoothing region. Ships with the standard consistency baselines, a small
autodiff core, a two-moons testbed, and an experiment CLI.
"""

from .autograd import (
    GraphError,
    NonFiniteError,
    Tensor,
    concat,
    gather_rows,
    grad,
    kl_categorical,
    log_softmax,
)
from .transforms import (
    GeometryError,
    TransformParams,
    TransformSpec,
    apply,
    bilinear_sample,
    bind_rotation_centers,
    compose,
    identity_grid,
    identity_params,
    normalize_to,
    param_norm,
)
from .adversarial import (
    AdvConfig,
    RampSchedule,
    identity_gradient_norm,
    lds_t,
    rampup_value,
    random_transform_params,
    tadv_params,
    vadv_perturbation,
)
from .objectives import (
    METHODS,
    MethodConfig,
    entropy_term,
    lambda_schedule,
    mean_teacher_step,
    pi_model_loss,
    probability_mse,
    pseudo_label_loss,
    rat_objective,
    supervised_loss,
    vat_objective,
)
from .models import MlpModel, mlp_forward
from .data import (
    DatasetSplit,
    MoonsGeometry,
    arc_distance,
    load_image_dataset,
    make_moons,
    moons_rotation_transform,
    moons_to_csv,
)
from .preprocessing import ZcaState, augment, gcn, zca_apply, zca_fit
from .training import (
    AdamState,
    RunMetrics,
    TrainingDiverged,
    adam_init,
    adam_step,
    evaluate,
    export_boundary,
    lr_schedule,
    run_trials,
    train,
    trial_summary,
)
from .config import (
    ConfigError,
    DatasetConfig,
    ExperimentConfig,
    TrainingConfig,
    parse_config,
    parse_config_text,
    serialize_config,
    set_config_value,
)
from .tensor_io import matrix_to_csv, read_tensors, write_tensors
from .estimator import RatClassifier

__version__ = "0.1.0"
