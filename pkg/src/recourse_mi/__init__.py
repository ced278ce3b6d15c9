"""recourse-mi: membership-inference auditing for algorithmic recourse.

Quantifies how much a model's training data leaks through counterfactual
recourses: distance-based attacks (simple thresholding and a one-sided
shadow-model LRT), loss-based baselines, three recourse generators, ROC
metrics focused on the low-FPR regime, and balanced-accuracy bounds under
differentially private recourse.
"""
from .attack import (
    AttackScore,
    Guess,
    LogNormalFit,
    NormalFit,
    RecourseConfig,
    ShadowEnsemble,
    build_shadow_distances,
    cfd_lrt_decide,
    cfd_lrt_score,
    cfd_statistic,
    fit_lognormal_mle,
    fit_normal_mle,
    lognormal_quantile,
    loss_attack_score,
    loss_lrt_score,
    threshold_attack,
    train_shadow_ensemble,
)
from .data import (
    Dataset,
    ScalerParams,
    SplitBundle,
    SyntheticSpec,
    generate_synthetic,
    load_tabular,
    split,
    standardize,
)
from .metrics import (
    MetricsReport,
    RocCurve,
    auc,
    balanced_accuracy,
    export_log_roc,
    roc,
    tpr_at_fpr,
)
from .nn import (
    Model,
    TrainConfig,
    VaeModel,
    bce_loss,
    input_gradient,
    load_model,
    logit_confidence,
    predict_proba,
    save_model,
    train_classifier,
    train_vae,
)
from .privacy import DpBound, dp_ba_bound
from .recourse import (
    CostFn,
    RecourseResult,
    ScfeParams,
    SearchParams,
    cchvae,
    cost,
    growing_spheres,
    scfe,
    uniform_l1_ball_sample,
)
from .runner import (
    ExperimentConfig,
    ExperimentReport,
    GameSample,
    config_from_dict,
    emit_summary,
    load_config,
    play_game,
    run_experiment,
    run_sweep,
)

__version__ = "0.1.0"
