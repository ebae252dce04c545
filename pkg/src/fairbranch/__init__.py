"""Fair multi-task learning with parameter-similarity branching and
branch-scoped fairness-gradient conflict correction."""

from .branching import BranchEvent, Schedule, branch_condition, branch_event, form_branches
from .conflict import ConflictRecord, conflict_cosine, detect_conflict, fbgrad_pass, fbgrad_project
from .data import (
    Dataset,
    SplitSpec,
    Standardizer,
    SyntheticSpec,
    batch_iter,
    generate_synthetic,
    load_csv,
    stratified_split,
    write_csv,
)
from .grouping import (
    AffinityTable,
    TaskGroup,
    affinity_set,
    center_gram,
    linear_cka,
    slhc_pair,
    update_task_groups,
)
from .metrics import (
    EvalResult,
    conflict_report,
    discrimination_gain,
    evaluate,
    fairness_violation,
    knowledge_gain,
)
from .network import (
    GradientSet,
    Layer,
    Topology,
    apply_update,
    forward,
    init_model,
    parameter_count,
    per_task_gradients,
    predict_proba,
    relative_parameters,
)
from .objectives import intra_task_lambda, nll_loss, robust_fairness_loss
from .trainer import (
    TrainConfig,
    TrainReport,
    convergence_check,
    train_fairbranch,
    train_stl,
    train_vanilla_mtl,
)

__version__ = "0.1.0"

__all__ = [
    "affinity_set",
    "AffinityTable",
    "apply_update",
    "batch_iter",
    "branch_condition",
    "branch_event",
    "BranchEvent",
    "center_gram",
    "conflict_cosine",
    "conflict_report",
    "ConflictRecord",
    "convergence_check",
    "Dataset",
    "detect_conflict",
    "discrimination_gain",
    "EvalResult",
    "evaluate",
    "fairness_violation",
    "fbgrad_pass",
    "fbgrad_project",
    "form_branches",
    "forward",
    "generate_synthetic",
    "GradientSet",
    "init_model",
    "intra_task_lambda",
    "knowledge_gain",
    "Layer",
    "linear_cka",
    "load_csv",
    "nll_loss",
    "parameter_count",
    "per_task_gradients",
    "predict_proba",
    "relative_parameters",
    "robust_fairness_loss",
    "Schedule",
    "slhc_pair",
    "SplitSpec",
    "Standardizer",
    "stratified_split",
    "SyntheticSpec",
    "TaskGroup",
    "Topology",
    "train_fairbranch",
    "train_stl",
    "train_vanilla_mtl",
    "TrainConfig",
    "TrainReport",
    "update_task_groups",
    "write_csv",
]
