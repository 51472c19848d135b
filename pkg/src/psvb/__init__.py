"""Parseval multichannel filter banks, 1-Lipschitz denoisers and PnP reconstruction on periodic grids."""

from .builders import (
    FrameShift, GenShift, Householder, ModuleChain, Mult, NToPN, OneToN, Patch, Projection,
    Scaled, USVh, bcop_chain, build_frame_shift, build_gen_shift, build_householder,
    build_mult, build_N_to_pN, build_one_to_N, build_patch, build_projection, build_usv,
    chain_adjoint, chain_compile, compile_u_form, compile_w_form, convert_factorizations,
    random_orthogonal,
)
from .inverse import (
    FbsConfig, FbsResult, IdentityModel, MaskedFourier, PeriodicBlur, SamplingMask,
    SolverDivergence, check_forward_stability, check_solution_stability, fbs_solve,
    grad_quadratic, lipschitz_of_gradient, make_mask, phantom, psnr,
)
from .lipschitz import (
    Activation, AveragedDenoiser, CnnDenoiser, FrameThresholdDenoiser, SplineActivation,
    averaged_apply, certify_network, cnn_forward, frame_threshold_denoiser, haar_frame,
    nonlinear_layer_lipschitz, project_unit_lipschitz, relu, spectral_normalize, spline_eval,
    spline_lipschitz,
)
from .multifilter import MultiFilter, adjoint, apply, canonicalize, compose, compose_all
from .signal import DimensionError, Grid, MultiSignal, flip, inner_product, norm, shift
from .spectral import (
    ParsevalReport, freq_response, gram_projector_check, is_parseval, norm_probe,
    operator_norm, oversampled_norm,
)

__version__ = "0.1.0"
