"""Class activation mapping on a small numpy CNN runtime, with ADCC evaluation."""

__version__ = "0.1.0"

from ._kernels import BACKEND  # noqa: E402
from .cams import (  # noqa: E402
    METHOD_IDS,
    MethodConfig,
    SaliencyMap,
    assemble_cam,
    compute_cam,
    explanation_map,
    fake_cam,
    gap_cam,
    grad_cam,
    grad_cam_pp,
    score_cam,
    smooth_grad_cam_pp,
    xgrad_cam,
)
from .metrics import (  # noqa: E402
    METRIC_IDS,
    MetricRecord,
    adcc,
    average_drop,
    average_increase,
    coherency,
    complexity,
    deletion_curve,
    insertion_curve,
)
from .nn import Model, build_model, forward, grad_activations, score_on  # noqa: E402
