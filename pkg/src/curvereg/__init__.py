"""curvereg: registration and generalized FPCA for incomplete functional data."""

from .bspline import AUTO, BsplineBasis, WarpingFunction, design_matrix, eval_warp, \
    greville_identity_beta, penalized_spline_fit
from .constropt import ConstraintSet, MaximizeResult, OptimOptions, build_constraints, maximize
from .expfam import Binomial, Family, Gamma, Gaussian, irls_weights, loglik, \
    loglik_grad_eta, make_family
from .funcdata import Curve, FunctionalDataset, IncompletenessMode, from_arrays, \
    load_csv, write_curves
from .gfpca import (GfpcaConfig, GfpcaModel, MarginalMean, assemble_crossproducts,
                    center_curves, eigendecompose, estimate_marginal_mean, estimate_scores,
                    fit_gfpca, latent_covariance, select_num_fpcs, smooth_covariance)
from .joint import MEAN_CURVE, JointConfig, JointState, fixed_num_fpcs_override, run_joint
from .registration import (RegistrationConfig, RegistrationResult, TemplateFunction,
                           penalty, register_all, register_curve, registered_dataset,
                           resolve_dispersion)
from .simbench import (MethodConfig, SimSetting, SimTruth, lv_psi, mise_h, mise_y, mse_d,
                       run_benchmark, simulate)

__version__ = "0.1.0"
