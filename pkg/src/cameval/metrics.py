"""Per-image saliency evaluation metrics and the ADCC score.

Percentages (drop, increase, coherency, complexity, adcc) are on a 0-100
scale; insertion/deletion AUCs are on the probability scale [0, 1].
"""

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import cams, nn
from .errors import ConfigError, ContractError
from .tensor import DEGENERATE_EPS, as_tensor, gaussian_blur, mean_l1, pearson

METRIC_IDS = ("avg-drop", "avg-inc", "insertion", "deletion", "coherency", "complexity", "adcc")
RECORD_FIELDS = (
    "avg_drop",
    "avg_increase",
    "insertion_auc",
    "deletion_auc",
    "coherency",
    "complexity",
    "adcc",
)


@dataclass
class MetricRecord:
    avg_drop: Optional[float] = None
    avg_increase: Optional[float] = None
    insertion_auc: Optional[float] = None
    deletion_auc: Optional[float] = None
    coherency: Optional[float] = None
    complexity: Optional[float] = None
    adcc: Optional[float] = None

    def to_dict(self):
        return asdict(self)


@dataclass
class Curve:
    kind: str  # "insertion" | "deletion"
    fractions: np.ndarray
    confidences: np.ndarray
    auc: float


def average_drop(y_c, o_c):
    """Relative confidence drop in percent; 0 when ``y_c`` is (near) zero."""
    if y_c < DEGENERATE_EPS:
        return 0.0
    return max(0.0, y_c - o_c) / y_c * 100.0


def average_increase(y_c, o_c):
    return 100.0 if y_c < o_c else 0.0


def trapezoid_auc(fractions, confidences):
    f = np.asarray(fractions, dtype=np.float64)
    v = np.asarray(confidences, dtype=np.float64)
    return float(np.sum((v[1:] + v[:-1]) * 0.5 * np.diff(f)))


def pixel_order(saliency):
    """Pixel indices by descending saliency, ties broken by row-major index."""
    m = saliency.map if isinstance(saliency, cams.SaliencyMap) else np.asarray(saliency)
    return np.argsort(-m.ravel(), kind="stable")


def _step_counts(n_pixels, steps):
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    steps = min(int(steps), n_pixels)
    counts = (np.arange(steps + 1) * n_pixels) // steps
    return steps, counts


def _curve(kind, model, x, c, saliency, steps, start, finish, use_logits):
    x = as_tensor(x, ndim=3, name="image")
    ch, h, w = x.shape
    p = h * w
    steps, counts = _step_counts(p, steps)
    order = pixel_order(saliency)
    src = finish.reshape(ch, p)
    frames = np.empty((steps + 1, ch, p))
    cur = start.reshape(ch, p).copy()
    frames[0] = cur
    for i in range(1, steps + 1):
        idx = order[counts[i - 1] : counts[i]]
        cur[:, idx] = src[:, idx]
        frames[i] = cur
    conf = nn.scores_on_batch(model, frames.reshape(steps + 1, ch, h, w), c, use_logits=use_logits)
    fractions = np.arange(steps + 1) / steps
    return Curve(kind, fractions, conf, trapezoid_auc(fractions, conf))


def deletion_curve(model, x, c, saliency, steps, baseline=0.0, use_logits=False):
    """Replace the most salient pixels by ``baseline`` in ``steps`` increments."""
    x = as_tensor(x, ndim=3, name="image")
    target = np.empty_like(x)
    target[:] = np.reshape(baseline, (-1, 1, 1)) if np.ndim(baseline) else baseline
    return _curve("deletion", model, x, c, saliency, steps, x, target, use_logits)


def insertion_curve(model, x, c, saliency, steps, blur_sigma=None, use_logits=False):
    """Reveal original pixels, most salient first, on a blurred copy of ``x``."""
    x = as_tensor(x, ndim=3, name="image")
    sigma = x.shape[1] / 8.0 if blur_sigma is None else blur_sigma
    return _curve("insertion", model, x, c, saliency, steps, gaussian_blur(x, sigma), x, use_logits)


def _as_method(method):
    if isinstance(method, str):
        return cams.get_method(method)
    return method


def coherency_maps(method, model, x, c, cfg=cams.DEFAULT_CONFIG):
    """The CAM of ``x`` and the CAM of its own explanation map."""
    fn = _as_method(method)
    s1 = fn(model, x, c, cfg)
    s2 = fn(model, cams.explanation_map(x, s1), c, cfg)
    return s1, s2


def coherency_from_maps(s1, s2):
    """Return ``(coherency_percent, degenerate)`` for two saliency maps."""
    a = s1.map if isinstance(s1, cams.SaliencyMap) else s1
    b = s2.map if isinstance(s2, cams.SaliencyMap) else s2
    degenerate = bool(np.std(a) < DEGENERATE_EPS or np.std(b) < DEGENERATE_EPS)
    r = pearson(a, b)
    if degenerate:
        # undefined correlation: all-or-nothing on pointwise agreement
        return (100.0 if r == 1.0 else 0.0), True
    return (r + 1.0) / 2.0 * 100.0, False


def coherency(method, model, x, c, cfg=cams.DEFAULT_CONFIG):
    s1, s2 = coherency_maps(method, model, x, c, cfg)
    return coherency_from_maps(s1, s2)[0]


def complexity(saliency):
    m = saliency.map if isinstance(saliency, cams.SaliencyMap) else saliency
    return mean_l1(m) * 100.0


def adcc(drop, coherency, complexity):
    """Harmonic mean of coherency, 100-complexity and 100-drop (all percentages)."""
    for name, v in (("drop", drop), ("coherency", coherency), ("complexity", complexity)):
        if not (0.0 <= v <= 100.0):
            raise ContractError(f"adcc: {name}={v} outside [0, 100]")
    terms = (coherency / 100.0, 1.0 - complexity / 100.0, 1.0 - drop / 100.0)
    if min(terms) < DEGENERATE_EPS:
        return 0.0
    return 3.0 / sum(1.0 / t for t in terms) * 100.0


def check_metric_ids(ids):
    bad = [m for m in ids if m not in METRIC_IDS]
    if bad:
        raise ConfigError(f"unknown metric(s) {bad}; choose from {', '.join(METRIC_IDS)}")
    if not ids:
        raise ConfigError("at least one metric is required")
