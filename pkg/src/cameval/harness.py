"""Batch evaluation: datasets, per-image method x metric runs, aggregation, reports."""

import csv
import io as _io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, cams, metrics, nn
from . import io as tio
from ._kernels import BACKEND
from .errors import ConfigError, EmptyDatasetError

log = logging.getLogger(__name__)

REPORT_FORMAT = "cam-eval-report/1"
CSV_HEADER = ("image_id", "method") + metrics.RECORD_FIELDS

# Fake-CAM row of the reference ImageNet/VGG-16 results, shown for scale.
FAKE_CAM_REFERENCE = {
    "avg_drop": 0.15,
    "avg_increase": 45.51,
    "coherency": 100.00,
    "complexity": 100.00,
    "adcc": 0.01,
}


@dataclass
class EvalConfig:
    model_path: Optional[str] = None
    images: str = "synth:8"
    classes: str = "top1"
    methods: tuple = cams.METHOD_IDS
    metrics: tuple = metrics.METRIC_IDS
    steps: Optional[int] = None  # None -> min(P, 100)
    seed: int = 0
    jobs: int = 1
    json_path: Optional[str] = None
    csv_path: Optional[str] = None
    svg_dir: Optional[str] = None
    smooth_samples: int = 16
    smooth_sigma_fraction: float = 0.15
    mean: tuple = tio.IMAGENET_MEAN
    std: tuple = tio.IMAGENET_STD
    dedupe_equivalent: bool = False
    record_timing: bool = False
    model: Optional[nn.Model] = field(default=None, repr=False)

    def validate(self):
        if not self.methods:
            raise ConfigError("at least one method is required")
        for m in self.methods:
            cams.get_method(m)
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("duplicate method ids")
        metrics.check_metric_ids(self.metrics)
        if self.steps is not None and self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.model is None and not self.model_path:
            raise ConfigError("a model path is required")
        cams.MethodConfig(self.smooth_samples, self.smooth_sigma_fraction)

    def echo(self):
        """Result-affecting settings; execution knobs (jobs, paths) are left out."""
        return {
            "model": self.model_path if self.model_path else "<in-memory>",
            "images": self.images,
            "classes": self.classes,
            "methods": list(self.methods),
            "metrics": list(self.metrics),
            "steps": self.steps,
            "seed": self.seed,
            "smooth_samples": self.smooth_samples,
            "smooth_sigma_fraction": self.smooth_sigma_fraction,
            "score_baseline": "zeros",
            "deletion_baseline": 0.0,
            "insertion_blur_sigma": "H/8",
            "mean": list(self.mean),
            "std": list(self.std),
            "dedupe_equivalent": self.dedupe_equivalent,
        }


@dataclass
class EvalReport:
    rows: list  # dicts, ordered by image then method
    aggregate: list  # dicts, one per method
    curves: dict  # (image_id, method, kind) -> metrics.Curve
    warnings: list
    provenance: dict

    def to_dict(self):
        return {
            "format": REPORT_FORMAT,
            "provenance": self.provenance,
            "rows": self.rows,
            "aggregate": self.aggregate,
            "warnings": self.warnings,
        }


# ---------------------------------------------------------------------------
# datasets


def _sub_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def synthetic_image(seed, h=32, w=32, n_blobs=3):
    """Coloured Gaussian blobs over low-amplitude noise, values in [0, 1]."""
    rng = np.random.default_rng(seed)
    img = 0.15 * rng.random((3, h, w)) + 0.1
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        s = rng.uniform(0.08, 0.25) * min(h, w)
        color = rng.random(3)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        img += color[:, None, None] * blob[None]
    return np.clip(img, 0.0, 1.0)


def synthetic_dataset(n, seed, h=32, w=32):
    return [tio.ImageRecord(f"synth-{i:04d}", synthetic_image(_sub_seed(seed, i), h, w)) for i in range(n)]


def resolve_images(source, seed, input_hw):
    """Load ImageRecords from ``synth:N``, ``@list`` of CTF1 files, or a PPM directory."""
    if source.startswith("synth:"):
        try:
            n = int(source[6:])
        except ValueError:
            raise ConfigError(f"bad synthetic source {source!r}") from None
        records = synthetic_dataset(n, seed, *input_hw)
    elif source.startswith("@"):
        listing = Path(source[1:])
        base = listing.parent
        records = []
        for line in listing.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            p = Path(line) if Path(line).is_absolute() else base / line
            t = tio.read_tensor(p)
            if t.ndim != 3 or t.shape[0] != 3:
                raise ConfigError(f"{p}: image tensors must be [3,H,W], got {t.shape}")
            records.append(tio.ImageRecord(p.stem, t))
    else:
        d = Path(source)
        if not d.is_dir():
            raise ConfigError(f"image source {source!r} is not a directory, @list or synth:N")
        records = [tio.read_ppm(p) for p in sorted(d.glob("*.ppm"))]
    if not records:
        raise EmptyDatasetError(f"no images found in {source!r}")
    records.sort(key=lambda r: r.id)
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate image ids in dataset")
    return records


def class_policy(spec, num_classes):
    """Return a function ``(image_id, probs) -> class index``."""
    if spec == "top1":
        return lambda image_id, probs: int(np.argmax(probs))
    if spec.startswith("fixed:"):
        try:
            k = int(spec[6:])
        except ValueError:
            raise ConfigError(f"bad class policy {spec!r}") from None
        if not 0 <= k < num_classes:
            raise ConfigError(f"fixed class {k} outside [0, {num_classes})")
        return lambda image_id, probs: k
    if spec.startswith("@"):
        table = {}
        for line in Path(spec[1:]).read_text().splitlines():
            parts = line.replace(",", " ").split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 2:
                raise ConfigError(f"bad class file line {line!r}")
            k = int(parts[1])
            if not 0 <= k < num_classes:
                raise ConfigError(f"class {k} for {parts[0]} outside [0, {num_classes})")
            table[parts[0]] = k

        def lookup(image_id, probs):
            if image_id not in table:
                raise ConfigError(f"no class given for image {image_id!r}")
            return table[image_id]

        return lookup
    raise ConfigError(f"unknown class policy {spec!r}")


# ---------------------------------------------------------------------------
# evaluation


def _needs(selected):
    s = set(selected)
    adcc = "adcc" in s
    return {
        "drop": adcc or "avg-drop" in s,
        "increase": "avg-inc" in s,
        "explained": adcc or "avg-drop" in s or "avg-inc" in s,
        "coherency": adcc or "coherency" in s,
        "complexity": adcc or "complexity" in s,
        "insertion": "insertion" in s,
        "deletion": "deletion" in s,
        "adcc": adcc,
    }


def evaluate_image(model, image_id, x, c, methods, selected, steps, mcfg):
    """All selected metrics of every method for one preprocessed input."""
    need = _needs(selected)
    rows, curves, warnings = [], {}, []
    y_c = nn.score_on(model, x, c)
    if y_c < metrics.DEGENERATE_EPS:
        warnings.append(f"{image_id}: y_c below 1e-12, drop recorded as 0")
    for method_id in methods:
        fn = cams.get_method(method_id)
        s1 = fn(model, x, c, mcfg)
        rec = metrics.MetricRecord()
        row = {"image_id": image_id, "method": method_id, "target_class": c, "y_c": y_c}
        if s1.degenerate:
            warnings.append(f"{image_id}/{method_id}: degenerate (all-zero) CAM")
        if need["explained"]:
            o_c = nn.score_on(model, cams.explanation_map(x, s1), c)
            row["o_c"] = o_c
            if need["drop"]:
                rec.avg_drop = metrics.average_drop(y_c, o_c)
            if need["increase"]:
                rec.avg_increase = metrics.average_increase(y_c, o_c)
        if need["coherency"]:
            s2 = fn(model, cams.explanation_map(x, s1), c, mcfg)
            rec.coherency, degenerate = metrics.coherency_from_maps(s1, s2)
            if degenerate:
                warnings.append(f"{image_id}/{method_id}: constant map in coherency, scored {rec.coherency:.0f}")
        if need["complexity"]:
            rec.complexity = metrics.complexity(s1)
        if need["insertion"]:
            cur = metrics.insertion_curve(model, x, c, s1, steps)
            rec.insertion_auc = cur.auc
            curves[(image_id, method_id, "insertion")] = cur
        if need["deletion"]:
            cur = metrics.deletion_curve(model, x, c, s1, steps)
            rec.deletion_auc = cur.auc
            curves[(image_id, method_id, "deletion")] = cur
        if need["adcc"]:
            rec.adcc = metrics.adcc(rec.avg_drop, rec.coherency, rec.complexity)
        row.update(rec.to_dict())
        rows.append(row)
    return rows, curves, warnings


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(sum(vals) / len(vals)) if vals else None


def aggregate(rows, methods=None):
    """Per-method means of every metric, plus both ADCC aggregations."""
    if methods is None:
        methods = list(dict.fromkeys(r["method"] for r in rows))
    out = []
    for m in methods:
        group = [r for r in rows if r["method"] == m]
        if not group:
            log.warning("no rows for method %s; excluded from aggregate", m)
            continue
        agg = {"method": m, "images": len(group)}
        for f in metrics.RECORD_FIELDS:
            agg[f] = _mean(r.get(f) for r in group)
        agg["adcc_of_means"] = None
        if None not in (agg["avg_drop"], agg["coherency"], agg["complexity"]):
            agg["adcc_of_means"] = metrics.adcc(agg["avg_drop"], agg["coherency"], agg["complexity"])
        out.append(agg)
    return out


def _prepare(cfg):
    cfg.validate()
    model = cfg.model if cfg.model is not None else tio.read_model(cfg.model_path)
    methods = list(cfg.methods)
    notices = []
    if "gap-cam" in methods and not model.has_gap_head():
        raise ConfigError("gap-cam requires a model whose target layer feeds GAP -> fc")
    if cfg.dedupe_equivalent and model.has_gap_head() and "xgrad-cam" in methods and "grad-cam" in methods:
        methods.remove("xgrad-cam")
        notices.append("xgrad-cam skipped: identical to grad-cam on a GAP-head model (--dedupe-equivalent)")
    records = resolve_images(cfg.images, cfg.seed, model.input_shape[1:])
    policy = class_policy(cfg.classes, model.num_classes)
    return model, methods, records, policy, notices


def run_eval(cfg):
    started = time.perf_counter()
    model, methods, records, policy, notices = _prepare(cfg)
    h, w = model.input_shape[1:]
    steps = cfg.steps if cfg.steps is not None else min(h * w, 100)

    def work(index_record):
        index, rec = index_record
        x = tio.preprocess(rec, h, w, cfg.mean, cfg.std)
        probs = nn.forward(model, x).probs
        c = rec.target if rec.target is not None else policy(rec.id, probs)
        mcfg = cams.MethodConfig(cfg.smooth_samples, cfg.smooth_sigma_fraction, seed=_sub_seed(cfg.seed, index))
        return evaluate_image(model, rec.id, x, c, methods, cfg.metrics, steps, mcfg)

    items = list(enumerate(records))
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(it) for it in items]

    rows, curves, warnings = [], {}, list(notices)
    for r, cv, wn in results:
        rows.extend(r)
        curves.update(cv)
        warnings.extend(wn)
    provenance = {
        "tool": "cam-eval",
        "version": __version__,
        "formats": {"report": REPORT_FORMAT, "tensor": "CTF1", "model": "MCN1"},
        "backend": BACKEND,
        "config": cfg.echo(),
        "steps": steps,
        "images": [r.id for r in records],
    }
    if cfg.record_timing:
        provenance["wall_time_s"] = time.perf_counter() - started
    return EvalReport(rows, aggregate(rows, methods), curves, warnings, provenance)


# ---------------------------------------------------------------------------
# output


def report_json(report):
    return json.dumps(report.to_dict(), indent=2) + "\n"


def report_csv(report):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in report.rows:
        vals = [row.get(f) for f in metrics.RECORD_FIELDS]
        writer.writerow([row["image_id"], row["method"]] + ["" if v is None else f"{v:.6f}" for v in vals])
    return buf.getvalue()


def emit_report(report, json_path=None, csv_path=None):
    if json_path:
        Path(json_path).write_text(report_json(report))
    if csv_path:
        Path(csv_path).write_text(report_csv(report))


def curve_svg(curve, title="", width=320, height=240, seed=None):
    """Render one confidence curve as a standalone SVG document."""
    left, right, top, bottom = 44, 12, 28, 36
    pw, ph = width - left - right, height - top - bottom

    def px(f):
        return left + f * pw

    def py(v):
        return top + (1.0 - min(1.0, max(0.0, v))) * ph

    pts = " ".join(f"{px(f):.3f},{py(v):.3f}" for f, v in zip(curve.fractions, curve.confidences))
    esc = title.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f"<title>{esc}</title>",
        *([f"<desc>seed={seed}</desc>"] if seed is not None else []),
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for t in (0.0, 0.5, 1.0):
        lines.append(f'<text x="{px(t):.3f}" y="{top + ph + 14}" font-size="10" text-anchor="middle">{t:g}</text>')
        lines.append(f'<text x="{left - 4}" y="{py(t) + 3:.3f}" font-size="10" text-anchor="end">{t:g}</text>')
    lines += [
        f'<text x="{left + pw / 2:g}" y="{height - 4}" font-size="10" text-anchor="middle">fraction of pixels {"inserted" if curve.kind == "insertion" else "deleted"}</text>',
        f'<text x="{left}" y="16" font-size="11">{esc}</text>',
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{pts}"/>',
        f'<text x="{left + pw}" y="16" font-size="11" text-anchor="end">AUC={curve.auc:.4f}</text>',
        "</svg>",
    ]
    return "\n".join(lines) + "\n"


def emit_curves_svg(curves, out_dir, seed=None):
    """Write one SVG per (image, method, kind); returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for key in sorted(curves):
        curve = curves[key]
        if len(curve.fractions) < 2:
            log.warning("skipping curve %s: fewer than 2 samples", key)
            continue
        image_id, method_id, kind = key
        path = out / f"{image_id}__{method_id}__{kind}.svg"
        path.write_text(curve_svg(curve, f"{image_id} / {method_id} / {kind}", seed=seed))
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# Fake-CAM sanity check


@dataclass
class FakeCheckResult:
    passed: bool
    failures: list
    table: str
    report: EvalReport


def fake_check(cfg, threshold=5.0):
    """Evaluate Fake-CAM next to the configured methods and check it loses on ADCC."""
    methods = list(cfg.methods)
    if "fake-cam" not in methods:
        methods.append("fake-cam")
    needed = ("avg-drop", "avg-inc", "coherency", "complexity", "adcc")
    selected = tuple(dict.fromkeys(list(cfg.metrics) + list(needed)))
    sub = EvalConfig(**{**cfg.__dict__, "methods": tuple(methods), "metrics": selected})
    report = run_eval(sub)
    by_method = {a["method"]: a for a in report.aggregate}
    fake = by_method["fake-cam"]
    others = [a for a in report.aggregate if a["method"] != "fake-cam"]
    failures = []
    if fake["adcc"] >= threshold:
        failures.append(f"Fake-CAM ADCC {fake['adcc']:.4f} is not below {threshold}")
    for a in others:
        if fake["adcc"] > a["adcc"]:
            failures.append(f"Fake-CAM ADCC {fake['adcc']:.4f} exceeds {a['method']} ({a['adcc']:.4f})")
        if fake["avg_drop"] > a["avg_drop"]:
            failures.append(f"Fake-CAM avg-drop {fake['avg_drop']:.4f} exceeds {a['method']} ({a['avg_drop']:.4f})")
    return FakeCheckResult(not failures, failures, format_table(report.aggregate), report)


def format_table(aggregate_rows, reference=FAKE_CAM_REFERENCE):
    """Method x metric summary; insertion/deletion AUCs are shown x100 to share the percent scale."""
    cols = ["avg_drop", "avg_increase", "coherency", "complexity", "adcc"]
    heads = ["Avg Drop", "Avg Inc", "Coherency", "Complexity", "ADCC"]
    for key, head in (("insertion_auc", "Insertion"), ("deletion_auc", "Deletion")):
        if any(a.get(key) is not None for a in aggregate_rows):
            cols.append(key)
            heads.append(head)

    def cell(row, c):
        v = row.get(c)
        if v is None:
            return f"{'-':>12}"
        return f"{v * 100 if c.endswith('_auc') else v:>12.2f}"

    lines = [f"{'Method':<20}" + "".join(f"{h:>12}" for h in heads)]
    for a in aggregate_rows:
        lines.append(f"{a['method']:<20}" + "".join(cell(a, c) for c in cols))
    lines.append(f"{'fake-cam (ref)':<20}" + "".join(cell(reference, c) for c in cols))
    return "\n".join(lines)
