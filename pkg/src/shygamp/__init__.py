"""Sparse multinomial logistic regression via simplified hybrid generalized
approximate message passing: sum-product (approximate-MMSE) and min-sum (MAP)
variants with online EM / SURE hyperparameter tuning."""

from . import errors
from .dataio import (
    Preprocessor,
    ReportRecord,
    error_rate_estimate,
    preprocess,
    read_csv,
    read_svmlight,
    split_folds,
    split_fraction,
    write_svmlight,
)
from .engine import (
    GampConfig,
    GampState,
    TrainResult,
    backward_variances,
    damp,
    forward_variance,
    make_denoisers,
    run,
)
from .input_denoisers import (
    BgPrior,
    Gm1d,
    LaplacePrior,
    bg_denoise,
    default_bg_prior,
    em_update_bg,
    fit_gm_1d,
    laplace_denoise,
    sure_objective,
    sure_objective_derivative,
    sure_tune_lambda,
)
from .kernels import backend_name
from .model import (
    Dataset,
    SparsityReport,
    WeightMatrix,
    k99,
    l0,
    predict,
    predict_labels,
    sparsity_report,
)
from .output_denoisers import (
    GmLikApprox,
    MomentResult,
    fit_softmax_gm_approx,
    gaussian_cdf_partial_moments,
    moments_bruteforce,
    msa_z_newton,
    softmax,
    spa_moments_gm,
    spa_moments_is,
    spa_moments_ni,
    spa_moments_ts,
)
from .synth import (
    ClassModel,
    calibrate_variance,
    expected_error,
    gen_dataset,
    gen_means,
    make_class_model,
)

__version__ = "0.1.0"
