"""Class activation mapping methods.

Every method computes channel weights for the target-layer activations and
hands them to :func:`assemble_cam`, which forms ``ReLU(sum_k w_k * A_k)``,
upsamples it to the input resolution and rescales it to [0, 1].
"""

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import nn
from .errors import ConfigError, ContractError, UnsupportedArchitectureError
from .tensor import DEGENERATE_EPS, as_tensor, bilinear_upsample, normalize_max

METHOD_IDS = (
    "gap-cam",
    "grad-cam",
    "xgrad-cam",
    "grad-cam++",
    "smooth-grad-cam++",
    "score-cam",
    "fake-cam",
)


@dataclass(frozen=True)
class SaliencyMap:
    map: np.ndarray  # [H, W] in [0, 1]
    degenerate: bool = False

    @property
    def shape(self):
        return self.map.shape


@dataclass(frozen=True)
class MethodConfig:
    smooth_samples: int = 16
    smooth_sigma_fraction: float = 0.15
    score_baseline: Optional[np.ndarray] = None  # None -> all-zero input
    score_use_logits: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.smooth_samples < 1:
            raise ConfigError("smooth_samples must be >= 1")
        if not self.smooth_sigma_fraction >= 0:
            raise ConfigError("smooth_sigma_fraction must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["score_baseline"] = "zeros" if self.score_baseline is None else "custom"
        return d


DEFAULT_CONFIG = MethodConfig()


def assemble_cam(acts, weights, out_h, out_w):
    """Combine activations ``[N,h,w]`` with scalar ``[N]`` or matrix ``[N,h,w]`` weights."""
    acts = as_tensor(acts, ndim=3, name="activations")
    w = as_tensor(weights, name="weights")
    if w.ndim == 1:
        if w.shape[0] != acts.shape[0]:
            raise ContractError(f"{w.shape[0]} weights for {acts.shape[0]} channels")
        combo = np.tensordot(w, acts, axes=1)
    elif w.ndim == 3:
        if w.shape != acts.shape:
            raise ContractError(f"matrix weights {w.shape} do not match activations {acts.shape}")
        combo = (w * acts).sum(axis=0)
    else:
        raise ContractError(f"weights must be [N] or [N,h,w], got {w.shape}")
    cam = np.maximum(combo, 0.0)
    up = np.maximum(bilinear_upsample(cam, out_h, out_w), 0.0)
    m, degenerate = normalize_max(up)
    return SaliencyMap(m, degenerate)


def explanation_map(x, s):
    """Mask every channel of ``x [C,H,W]`` by the saliency map."""
    x = as_tensor(x, ndim=3, name="image")
    m = s.map if isinstance(s, SaliencyMap) else as_tensor(s, ndim=2, name="map")
    if x.shape[1:] != m.shape:
        raise ContractError(f"image {x.shape} and map {m.shape} differ spatially")
    return x * m[None, :, :]


def _acts_grads(model, x, c):
    acts, g, _ = nn.activations_and_grads(model, x, c)
    return acts[0], g[0]


def _out_hw(model):
    return model.input_shape[1], model.input_shape[2]


def gap_cam_weights(model, c):
    if not model.has_gap_head():
        kinds = [layer.kind for layer in model.head]
        raise UnsupportedArchitectureError(
            f"gap-cam needs a GAP -> fc head after the target layer, found {kinds}")
    c = nn._check_class(model, c)
    return model.weights[model.head[-1].name][0][c].copy()


def gap_cam(model, x, c, cfg=DEFAULT_CONFIG):
    w = gap_cam_weights(model, c)
    acts = nn.activations_batch(model, x)[0]
    return assemble_cam(acts, w, *_out_hw(model))


def grad_cam_weights(grads):
    return grads.mean(axis=(1, 2))


def grad_cam(model, x, c, cfg=DEFAULT_CONFIG):
    acts, g = _acts_grads(model, x, c)
    return assemble_cam(acts, grad_cam_weights(g), *_out_hw(model))


def xgrad_cam_weights(acts, grads):
    sums = acts.sum(axis=(1, 2))
    ok = np.abs(sums) >= DEGENERATE_EPS
    safe = np.where(ok, sums, 1.0)
    w = (acts * grads).sum(axis=(1, 2)) / safe
    return np.where(ok, w, 0.0)


def xgrad_cam(model, x, c, cfg=DEFAULT_CONFIG):
    acts, g = _acts_grads(model, x, c)
    return assemble_cam(acts, xgrad_cam_weights(acts, g), *_out_hw(model))


def grad_cam_pp_weights(acts, g1, g2=None, g3=None):
    """Grad-CAM++ channel weights from first-order gradients.

    With an exponential link on the class score, the second and third
    derivatives reduce to powers of the gradient; ``g2``/``g3`` default to
    ``g1**2``/``g1**3`` but may be supplied pre-averaged (Smooth Grad-CAM++).
    """
    if g2 is None:
        g2 = g1 * g1
    if g3 is None:
        g3 = g2 * g1
    sum_a = acts.sum(axis=(1, 2))[:, None, None]
    denom = 2.0 * g2 + sum_a * g3
    ok = np.abs(denom) >= DEGENERATE_EPS
    beta = np.where(ok, g2 / np.where(ok, denom, 1.0), 0.0)
    return (beta * np.maximum(g1, 0.0)).sum(axis=(1, 2))


def grad_cam_pp(model, x, c, cfg=DEFAULT_CONFIG):
    acts, g = _acts_grads(model, x, c)
    return assemble_cam(acts, grad_cam_pp_weights(acts, g), *_out_hw(model))


def smooth_samples(x, cfg):
    """The noisy inputs used by Smooth Grad-CAM++, shape ``[n, C, H, W]``."""
    x = as_tensor(x, ndim=3, name="image")
    sigma = cfg.smooth_sigma_fraction * float(x.max() - x.min())
    rng = np.random.default_rng(cfg.seed)
    noise = rng.normal(0.0, sigma, size=(cfg.smooth_samples, *x.shape))
    return x[None] + noise


def _running_mean(mean, value, count):
    # incremental form: identical samples leave the mean bit-identical
    return mean + (value - mean) / count


def smooth_grad_cam_pp(model, x, c, cfg=DEFAULT_CONFIG):
    xs = smooth_samples(x, cfg)
    shape = model.activation_shape
    m_a = np.zeros(shape)
    m1 = np.zeros(shape)
    m2 = np.zeros(shape)
    m3 = np.zeros(shape)
    # one sample per pass so each matches a plain grad-cam++ call bit-for-bit
    for i in range(xs.shape[0]):
        ai, gi = _acts_grads(model, xs[i], c)
        gi2 = gi * gi
        m_a = _running_mean(m_a, ai, i + 1)
        m1 = _running_mean(m1, gi, i + 1)
        m2 = _running_mean(m2, gi2, i + 1)
        m3 = _running_mean(m3, gi2 * gi, i + 1)
    return assemble_cam(m_a, grad_cam_pp_weights(m_a, m1, m2, m3), *_out_hw(model))


def score_cam_masks(acts, out_h, out_w):
    """Per-channel upsampled activations rescaled to [0, 1], ``[N, H, W]``."""
    up = np.maximum(bilinear_upsample(acts, out_h, out_w), 0.0)
    peak = up.max(axis=(1, 2), keepdims=True)
    return np.where(peak >= DEGENERATE_EPS, up / np.where(peak >= DEGENERATE_EPS, peak, 1.0), 0.0)


def score_cam_weights(model, x, c, acts, cfg=DEFAULT_CONFIG):
    x = as_tensor(x, ndim=3, name="image")
    masks = score_cam_masks(acts, x.shape[1], x.shape[2])
    baseline = np.zeros_like(x) if cfg.score_baseline is None else as_tensor(cfg.score_baseline, ndim=3)
    batch = np.concatenate([x[None] * masks[:, None], baseline[None]], axis=0)
    conf = nn.scores_on_batch(model, batch, c, use_logits=cfg.score_use_logits)
    increase = conf[:-1] - conf[-1]
    return nn.softmax(increase)


def score_cam(model, x, c, cfg=DEFAULT_CONFIG):
    acts = nn.activations_batch(model, x)[0]
    w = score_cam_weights(model, x, c, acts, cfg)
    return assemble_cam(acts, w, *_out_hw(model))


def fake_cam(acts, out_h, out_w):
    """A map of ones with a zeroed top-left pixel, independent of the input."""
    m = np.ones((out_h, out_w))
    m[0, 0] = 0.0
    return SaliencyMap(m, False)


def fake_cam_method(model, x, c, cfg=DEFAULT_CONFIG):
    return fake_cam(None, *_out_hw(model))


METHODS = {
    "gap-cam": gap_cam,
    "grad-cam": grad_cam,
    "xgrad-cam": xgrad_cam,
    "grad-cam++": grad_cam_pp,
    "smooth-grad-cam++": smooth_grad_cam_pp,
    "score-cam": score_cam,
    "fake-cam": fake_cam_method,
}


def get_method(method_id):
    try:
        return METHODS[method_id]
    except KeyError:
        raise ConfigError(f"unknown method {method_id!r}; choose from {', '.join(METHOD_IDS)}") from None


def compute_cam(method_id, model, x, c, cfg=DEFAULT_CONFIG):
    return get_method(method_id)(model, x, c, cfg)
