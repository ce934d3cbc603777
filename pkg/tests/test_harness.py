import json
from pathlib import Path

import numpy as np
import pytest

from cameval import harness, metrics, nn
from cameval import io as tio
from cameval.errors import ConfigError, EmptyDatasetError
from cameval.metrics import Curve

GOLDEN_CSV = Path(__file__).parent / "golden" / "tinygap_seed42.csv"


def config(model=None, **kw):
    model = model if model is not None else nn.build_model("tinygap", 10, seed=0)
    kw.setdefault("images", "synth:2")
    kw.setdefault("smooth_samples", 2)
    return harness.EvalConfig(model=model, **kw)


def outputs(report, tmp):
    harness.emit_curves_svg(report.curves, tmp, seed=report.provenance["config"]["seed"])
    svgs = {p.name: p.read_bytes() for p in sorted(Path(tmp).glob("*.svg"))}
    return harness.report_json(report), harness.report_csv(report), svgs


def test_fake_cam_single_image():
    r = harness.run_eval(config(images="synth:1", methods=("fake-cam",), metrics=("adcc",)))
    assert len(r.rows) == 1
    row = r.rows[0]
    assert row["coherency"] == 100.0
    assert row["complexity"] == pytest.approx(100 * 1023 / 1024, abs=1e-12)
    assert row["insertion_auc"] is None


def test_single_image_aggregate_equals_row():
    r = harness.run_eval(config(images="synth:1", methods=("grad-cam", "score-cam")))
    for agg in r.aggregate:
        (row,) = [x for x in r.rows if x["method"] == agg["method"]]
        for f in metrics.RECORD_FIELDS:
            assert agg[f] == row[f]


def test_row_count_and_order():
    r = harness.run_eval(config(images="synth:3", methods=("score-cam", "grad-cam"), metrics=("avg-drop",)))
    assert [(x["image_id"], x["method"]) for x in r.rows] == [
        (f"synth-{i:04d}", m) for i in range(3) for m in ("score-cam", "grad-cam")
    ]


class TestAggregate:
    def rows(self, field, values, method="m"):
        return [{"method": method, field: v} for v in values]

    def test_mean_drop(self):
        assert harness.aggregate(self.rows("avg_drop", [0.0, 50.0]))[0]["avg_drop"] == 25.0

    def test_mean_increase(self):
        assert harness.aggregate(self.rows("avg_increase", [100.0, 0.0, 0.0, 100.0]))[0]["avg_increase"] == 50.0

    def test_adcc_of_mean_triple(self):
        rows = [{"method": "m", "avg_drop": 26.13, "coherency": 93.83, "complexity": 20.27}]
        assert harness.aggregate(rows)[0]["adcc_of_means"] == pytest.approx(81.66, abs=0.05)

    def test_empty_group_excluded(self, caplog):
        out = harness.aggregate(self.rows("avg_drop", [1.0]), ["m", "ghost"])
        assert [a["method"] for a in out] == ["m"]
        assert "ghost" in caplog.text

    def test_recomputation_from_rows(self):
        r = harness.run_eval(config(images="synth:3", methods=("grad-cam", "fake-cam")))
        for agg in r.aggregate:
            group = [x for x in r.rows if x["method"] == agg["method"]]
            for f in metrics.RECORD_FIELDS:
                assert agg[f] == pytest.approx(np.mean([x[f] for x in group]), abs=1e-9)


@pytest.fixture(scope="module")
def report():
    return harness.run_eval(config(images="synth:1", methods=("grad-cam",)))


class TestOutputs:
    def test_json_reparse(self, report):
        back = json.loads(harness.report_json(report))
        assert back == json.loads(json.dumps(report.to_dict()))
        assert back["rows"][0]["adcc"] == report.rows[0]["adcc"]
        assert back["provenance"]["config"]["seed"] == 0
        assert back["format"] == harness.REPORT_FORMAT

    def test_no_wall_time_by_default(self, report):
        assert "wall_time_s" not in report.provenance

    def test_csv_two_lines(self, report):
        lines = harness.report_csv(report).splitlines()
        assert len(lines) == 2
        assert lines[0] == "image_id,method,avg_drop,avg_increase,insertion_auc,deletion_auc,coherency,complexity,adcc"
        assert all(len(v.split(".")[1]) == 6 for v in lines[1].split(",")[2:])

    def test_emit_report_files(self, report, tmp_path):
        harness.emit_report(report, tmp_path / "r.json", tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text() == harness.report_csv(report)
        assert json.loads((tmp_path / "r.json").read_text())["rows"] == json.loads(json.dumps(report.rows))

    def test_unwritable_path(self, report, tmp_path):
        with pytest.raises(OSError, match="nope"):
            harness.emit_report(report, json_path=tmp_path / "nope" / "r.json")

    def test_svg_per_curve(self, report, tmp_path):
        paths = harness.emit_curves_svg(report.curves, tmp_path, seed=5)
        assert sorted(p.name for p in paths) == [
            "synth-0000__grad-cam__deletion.svg", "synth-0000__grad-cam__insertion.svg"]
        text = paths[0].read_text()
        assert text.startswith("<svg") and "<polyline" in text and "<desc>seed=5</desc>" in text


class TestSvg:
    def test_constant_curve(self):
        cur = Curve("deletion", np.linspace(0, 1, 5), np.full(5, 0.5), 0.5)
        svg = harness.curve_svg(cur)
        assert "AUC=0.5000" in svg
        pts = svg.split('points="')[1].split('"')[0].split()
        assert len({p.split(",")[1] for p in pts}) == 1

    def test_triangle(self):
        f, v = np.array([0.0, 1.0]), np.array([1.0, 0.0])
        assert "AUC=0.5000" in harness.curve_svg(Curve("insertion", f, v, metrics.trapezoid_auc(f, v)))

    def test_degenerate_curve_skipped(self, tmp_path, caplog):
        cur = Curve("deletion", np.array([0.0]), np.array([0.3]), 0.0)
        assert harness.emit_curves_svg({("a", "m", "deletion"): cur}, tmp_path) == []
        assert "fewer than 2" in caplog.text


class TestDeterminism:
    def test_repeat_and_jobs(self, tmp_path):
        cfg = dict(images="synth:4", methods=("grad-cam", "smooth-grad-cam++", "score-cam"), steps=10)
        base = outputs(harness.run_eval(config(**cfg)), tmp_path / "a")
        again = outputs(harness.run_eval(config(**cfg)), tmp_path / "b")
        par = outputs(harness.run_eval(config(jobs=4, **cfg)), tmp_path / "c")
        assert base == again == par

    def test_seed_changes_data(self):
        a = harness.run_eval(config(images="synth:1", methods=("fake-cam",), metrics=("avg-drop",), seed=1))
        b = harness.run_eval(config(images="synth:1", methods=("fake-cam",), metrics=("avg-drop",), seed=2))
        assert a.rows[0]["y_c"] != b.rows[0]["y_c"]

    @pytest.mark.slow
    def test_golden_csv(self):
        cfg = harness.EvalConfig(model=nn.build_model("tinygap", 10, seed=0), images="synth:8", seed=42)
        assert harness.report_csv(harness.run_eval(cfg)) == GOLDEN_CSV.read_text()


class TestConfigErrors:
    @pytest.mark.parametrize("kw", [
        {"methods": ("grad-cam", "magic-cam")},
        {"metrics": ("adcc", "vibes")},
        {"methods": ()},
        {"metrics": ()},
        {"steps": 0},
        {"jobs": 0},
        {"classes": "fixed:99"},
        {"classes": "sometimes"},
        {"images": "synth:x"},
    ])
    def test_rejected(self, kw):
        with pytest.raises(ConfigError):
            harness.run_eval(config(**kw))

    def test_empty_dataset(self, tmp_path):
        with pytest.raises(EmptyDatasetError):
            harness.run_eval(config(images=str(tmp_path)))
        with pytest.raises(EmptyDatasetError):
            harness.run_eval(config(images="synth:0"))

    def test_gap_cam_needs_gap_head(self):
        with pytest.raises(ConfigError):
            harness.run_eval(config(nn.build_model("tinyflat", 4, seed=0), methods=("gap-cam",)))

    def test_no_model(self):
        with pytest.raises(ConfigError):
            harness.run_eval(harness.EvalConfig())


def test_dedupe_equivalent():
    kw = dict(images="synth:1", methods=("grad-cam", "xgrad-cam"), metrics=("avg-drop",))
    assert len(harness.run_eval(config(**kw)).rows) == 2
    r = harness.run_eval(config(dedupe_equivalent=True, **kw))
    assert [x["method"] for x in r.rows] == ["grad-cam"]
    assert any("xgrad-cam skipped" in w for w in r.warnings)


class TestSources:
    def test_ppm_directory(self, tmp_path):
        rng = np.random.default_rng(0)
        for name in ("b", "a"):
            tio.write_ppm(tmp_path / f"{name}.ppm", rng.random((3, 40, 36)))
        (tmp_path / "notes.txt").write_text("ignored")
        r = harness.run_eval(config(images=str(tmp_path), methods=("fake-cam",), metrics=("avg-drop",)))
        assert [x["image_id"] for x in r.rows] == ["a", "b"]

    def test_ctf_list(self, tmp_path):
        rng = np.random.default_rng(1)
        tio.write_tensor(tmp_path / "one.ctf", rng.random((3, 32, 32)))
        tio.write_tensor(tmp_path / "two.ctf", rng.random((3, 48, 40)))
        (tmp_path / "list.txt").write_text("# images\none.ctf\n\ntwo.ctf\n")
        r = harness.run_eval(config(images=f"@{tmp_path / 'list.txt'}", methods=("fake-cam",),
                                    metrics=("avg-drop",)))
        assert [x["image_id"] for x in r.rows] == ["one", "two"]

    def test_ctf_list_rejects_wrong_rank(self, tmp_path):
        tio.write_tensor(tmp_path / "flat.ctf", np.zeros((32, 32)))
        (tmp_path / "list.txt").write_text("flat.ctf\n")
        with pytest.raises(ConfigError):
            harness.run_eval(config(images=f"@{tmp_path / 'list.txt'}"))

    def test_class_file(self, tmp_path):
        (tmp_path / "classes.txt").write_text("synth-0000 3\nsynth-0001,7\n")
        r = harness.run_eval(config(classes=f"@{tmp_path / 'classes.txt'}", methods=("fake-cam",),
                                    metrics=("avg-drop",)))
        assert [x["target_class"] for x in r.rows] == [3, 7]

    def test_class_file_missing_image(self, tmp_path):
        (tmp_path / "classes.txt").write_text("synth-0000 3\n")
        with pytest.raises(ConfigError):
            harness.run_eval(config(classes=f"@{tmp_path / 'classes.txt'}", methods=("fake-cam",),
                                    metrics=("avg-drop",)))

    def test_fixed_and_top1(self):
        r = harness.run_eval(config(classes="fixed:4", methods=("fake-cam",), metrics=("avg-drop",)))
        assert {x["target_class"] for x in r.rows} == {4}
        model = nn.build_model("tinygap", 10, seed=0)
        r = harness.run_eval(config(model, methods=("fake-cam",), metrics=("avg-drop",)))
        for row, rec in zip(r.rows, harness.synthetic_dataset(2, 0)):
            x = tio.preprocess(rec, 32, 32)
            assert row["target_class"] == int(np.argmax(nn.forward(model, x).probs))


def test_fake_check_passes_on_synthetic_data():
    res = harness.fake_check(config(images="synth:4", methods=("grad-cam", "score-cam")))
    assert res.passed, res.failures
    fake = next(a for a in res.report.aggregate if a["method"] == "fake-cam")
    assert fake["coherency"] == pytest.approx(100.0, abs=0.01)
    assert "fake-cam (ref)" in res.table and "0.01" in res.table


def test_fake_check_reports_failures():
    res = harness.fake_check(config(images="synth:2", methods=("grad-cam",)), threshold=0.0)
    assert not res.passed
    assert any("not below 0.0" in f for f in res.failures)
