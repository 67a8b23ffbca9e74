"""Multitask SVM/LSSVM training with low-rank coupling over a task grid.

Tasks indexed by a multi-dimensional grid share R latent directions; a
per-task mixing vector (the elementwise product of one factor row per grid
mode) weights those directions into the task's model.  Training alternates
between refitting the shared directions and refitting factor rows, each
step a convex subproblem: a box-and-equality QP for the hinge/tube variants
or a saddle-point linear system for the least-squares variants.
"""

from .baselines import (
    BaselineModel,
    baseline_decision,
    baseline_predict,
    train_independent,
    train_pooled,
)
from .data import (
    GroundTruth,
    MultiTaskDataset,
    SynthConfig,
    config_grid,
    from_task_blocks,
    generate_synthetic,
    kfold_cv,
    load_csv,
    make_folds,
    save_csv,
)
from .errors import (
    ConvergenceError,
    DatasetFormatError,
    DegenerateConstraintsError,
    EmptyTaskError,
    FactorizationError,
    IllPosedProblemError,
    InvalidIndexError,
    TensorMtlError,
    TrainingError,
    UnsupportedKernelError,
)
from .factors import (
    CpFactors,
    DualSharedFactor,
    complement_products,
    explicit_shared_matrix,
    explicit_weights,
    init_factors,
    latent_features,
    mixing_matrix,
    mixing_vector,
    ones_factors,
    relatedness_gram,
    slice_features,
)
from .grid import TaskGrid
from .kernels import GramCache, KernelSpec, coupled_gram, kernel_eval, kernel_matrix
from .linsolve import (
    CholeskyFactor,
    SaddleSolution,
    SaddleSystem,
    assemble_mode_row_system,
    assemble_shared_system,
    cholesky_spd,
    solve_saddle,
)
from .metrics import (
    ClassificationReport,
    RegressionReport,
    classification_report,
    per_task_accuracy,
    per_task_regression,
    regression_report,
    report_to_csv,
    report_to_text,
)
from .model_io import load_model, save_model
from .qp import (
    QpProblem,
    QpSolution,
    SplitProblem,
    project_feasible,
    recover_bias,
    solve_qp,
    split_absolute_penalty,
)
from .trainers import (
    ConvergenceTrace,
    TrainConfig,
    TrainedModel,
    carry_duals,
    decision_function,
    predict,
    predict_batch,
    train,
)

__version__ = "0.1.0"
