import json
from pathlib import Path

import pytest

import partmatch as pm
from partmatch.cli import main
from partmatch.overlay import emit_overlay_svg


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    out = root / "corpus"
    rc = main(["--seed", "3", "synth", "--template", "box-car", "--per-bin", "2",
               "--test-per-bin", "1", "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def model_path(corpus):
    path = corpus.parent / "model.json"
    rc = main(["--seed", "3", "train", "--corpus", str(corpus), "--out", str(path)])
    assert rc == 0
    return path


class TestSynth:
    def test_manifest_and_file_count(self, corpus):
        manifest = json.loads((corpus / "manifest.json").read_text())
        assert len(manifest["splits"]["train"]) == 16
        fgrds = list(corpus.glob("*.fgrd"))
        assert len(fgrds) == 2 * (16 + 8)  # coarse + fine per image

    def test_deterministic_across_runs(self, corpus, tmp_path):
        again = tmp_path / "again"
        rc = main(["--seed", "3", "synth", "--template", "box-car", "--per-bin", "2",
                   "--test-per-bin", "1", "--out", str(again)])
        assert rc == 0
        for name in sorted(p.name for p in corpus.iterdir()):
            assert (again / name).read_bytes() == (corpus / name).read_bytes(), name


class TestTrainDetectEval:
    def test_full_pipeline(self, corpus, model_path, tmp_path, capsys):
        model = pm.read_model(model_path)
        assert len(model.parts) >= 8
        dets = tmp_path / "dets.json"
        rc = main(["--seed", "3", "detect", "--corpus", str(corpus), "--model",
                   str(model_path), "--out", str(dets)])
        assert rc == 0
        records = json.loads(dets.read_text())
        assert records and {"image_id", "part_id", "box", "score"} <= set(records[0])
        report_path = tmp_path / "report.json"
        table_path = tmp_path / "table.txt"
        rc = main(["eval", "--corpus", str(corpus), "--dets", str(dets),
                   "--out", str(report_path), "--table", str(table_path)])
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert report["map"] >= 0.9
        table = table_path.read_text()
        assert table.splitlines()[0].split() == ["Approach", "L0", "L1", "L2", "L3"]

    def test_detect_deterministic(self, corpus, model_path, tmp_path):
        outs = []
        for name in ("a.json", "b.json"):
            path = tmp_path / name
            rc = main(["--seed", "3", "detect", "--corpus", str(corpus), "--model",
                       str(model_path), "--out", str(path)])
            assert rc == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_detect_occlusion_flag(self, corpus, model_path, tmp_path):
        clean = tmp_path / "l0.json"
        occluded = tmp_path / "l2.json"
        main(["--seed", "3", "detect", "--corpus", str(corpus), "--model", str(model_path),
              "--out", str(clean)])
        rc = main(["--seed", "3", "detect", "--corpus", str(corpus), "--model",
                   str(model_path), "--occlude", "L2", "--out", str(occluded)])
        assert rc == 0
        assert clean.read_bytes() != occluded.read_bytes()

    def test_detect_predicted_viewpoint(self, corpus, model_path, tmp_path):
        out = tmp_path / "pred_dets.json"
        rc = main(["--seed", "3", "detect", "--corpus", str(corpus), "--model",
                   str(model_path), "--viewpoint", "predict", "--out", str(out)])
        assert rc == 0
        assert json.loads(out.read_text())

    def test_parallel_jobs_match_sequential(self, corpus, model_path, tmp_path):
        seq = tmp_path / "seq.json"
        par = tmp_path / "par.json"
        main(["--seed", "3", "detect", "--corpus", str(corpus), "--model",
              str(model_path), "--out", str(seq)])
        rc = main(["--seed", "3", "--jobs", "4", "detect", "--corpus", str(corpus),
                   "--model", str(model_path), "--out", str(par)])
        assert rc == 0
        assert seq.read_bytes() == par.read_bytes()


class TestMatchCommand:
    def test_match_with_svg(self, corpus, tmp_path):
        manifest = json.loads((corpus / "manifest.json").read_text())
        a = corpus / f"{manifest['splits']['train'][0]}.fgrd"
        b = corpus / f"{manifest['splits']['train'][1]}.fgrd"
        out = tmp_path / "m.json"
        svg = tmp_path / "m.svg"
        rc = main(["match", "--a", str(a), "--b", str(b), "--out", str(out),
                   "--svg", str(svg)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert {"source_id", "target_id", "pairs"} <= set(doc)
        text = svg.read_text()
        assert text.count("<line ") == len(doc["pairs"])

    def test_missing_file_is_runtime_error(self, tmp_path):
        rc = main(["match", "--a", str(tmp_path / "nope.fgrd"), "--b",
                   str(tmp_path / "nope2.fgrd"), "--out", str(tmp_path / "m.json")])
        assert rc == 1

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_match_json_to_stdout(self, corpus, capsys):
        manifest = json.loads((corpus / "manifest.json").read_text())
        a = corpus / f"{manifest['splits']['train'][0]}.fgrd"
        rc = main(["match", "--a", str(a), "--b", str(a)])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["pairs"]


class TestMeshOverride:
    def test_corpus_mesh_accepted(self, corpus, tmp_path):
        model = tmp_path / "m.json"
        rc = main(["--seed", "3", "train", "--corpus", str(corpus),
                   "--mesh", str(corpus / "mesh.obj"), "--out", str(model)])
        assert rc == 0
        assert pm.read_model(model).parts

    def test_misaligned_mesh_rejected(self, corpus, tmp_path, capsys):
        bad = tmp_path / "tiny.obj"
        bad.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        rc = main(["--seed", "3", "train", "--corpus", str(corpus),
                   "--mesh", str(bad), "--out", str(tmp_path / "m.json")])
        assert rc == 1
        assert "misalign" in capsys.readouterr().err


class TestPredictViewpointCommand:
    def test_outputs_energies(self, corpus, tmp_path):
        manifest = json.loads((corpus / "manifest.json").read_text())
        test_id = manifest["splits"]["test"][0]
        out = tmp_path / "vp.json"
        rc = main(["predict-viewpoint", "--test", str(corpus / f"{test_id}.fgrd"),
                   "--fine", str(corpus / f"{test_id}.fine.fgrd"),
                   "--corpus", str(corpus), "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert set(doc) == {"azimuth", "coarse_azimuth", "energies"}
        truth = pm.read_grid(corpus / f"{test_id}.fgrd").meta.viewpoint.azimuth
        err = abs((doc["azimuth"] - truth + 180) % 360 - 180)
        assert err <= 10.0


class TestOverlaySvg:
    def test_empty_is_valid(self):
        doc = emit_overlay_svg((224, 224), (224, 224))
        assert doc.startswith("<svg") and doc.rstrip().endswith("</svg>")
        assert doc.count("<rect") == 2  # the two panels
        assert "<line" not in doc

    def test_three_matches_three_lines(self):
        lines = [((1, 2), (3, 4)), ((5, 6), (7, 8)), ((9, 10), (11, 12))]
        doc = emit_overlay_svg((224, 224), (224, 224), lines)
        assert doc.count("<line ") == 3

    def test_boxes_at_known_coordinates(self):
        doc = emit_overlay_svg((100, 100), (100, 100),
                               detections=[(10, 20, 30, 50)],
                               ground_truth=[(12, 22, 32, 52)])
        assert 'class="det" x="10.00" y="20.00" width="20.00" height="30.00"' in doc
        assert 'class="gt" x="12.00" y="22.00" width="20.00" height="30.00"' in doc

    def test_deterministic(self):
        args = ((64, 48), (64, 64), [((0, 0), (1, 1))], [(1, 1, 5, 5)], [(2, 2, 6, 6)])
        assert emit_overlay_svg(*args) == emit_overlay_svg(*args)
