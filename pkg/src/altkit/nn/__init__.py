from .gradcheck import check_layer, gradient_check, numeric_gradient, relative_error
from .layers import (Affine, AttentionContext, BatchNorm, Conv2d, Dropout, FeatureMapAffine, Layer, MaxPoolFreq,
                     Parameter, ReLU, ShapeError, TDNNF, TimeRestrictedAttention, log_softmax,
                     log_softmax_xent, orthogonality_error, semi_orthogonal_step,
                     time_restricted_self_attention)

__all__ = ["Affine", "AttentionContext", "BatchNorm", "Conv2d", "Dropout", "FeatureMapAffine", "Layer", "MaxPoolFreq",
           "Parameter", "ReLU", "ShapeError", "TDNNF", "TimeRestrictedAttention", "check_layer",
           "gradient_check", "log_softmax", "log_softmax_xent", "numeric_gradient",
           "orthogonality_error", "relative_error", "semi_orthogonal_step",
           "time_restricted_self_attention"]
