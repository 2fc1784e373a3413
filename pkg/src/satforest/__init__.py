"""Attention-weighted random forest regressors trained by one QP or LP."""

from .attention import (
    AttentionConfig,
    CoefficientBundle,
    SatRfModel,
    assemble_coefficients,
    attention_row,
    coefficient_bundle,
    predict,
    predict_batch,
    self_attention_matrix,
    softmax_baseline,
    stable_softmax,
)
from .data import (
    DataError,
    Dataset,
    FoldPlan,
    gen_friedman,
    gen_regression,
    gen_sparse_uncorrelated,
    load_csv,
    make_folds,
    save_csv,
    split_train_test,
)
from .evaluation import benchmark, grid_search, mae, paired_t_test, r2, sweep
from .forest import Forest, LeafAssignment, Tree, assign, fit_forest
from .model_io import load_forest, load_model, save_forest, save_model
from .multihead import HeadSpec, multihead_predict, verify_linearity
from .optim import (
    SolverReport,
    TrainingProblem,
    project_simplex,
    solve_lp,
    solve_qp,
    train,
)

__version__ = "0.1.0"
