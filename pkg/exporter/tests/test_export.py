import numpy as np
import pytest

import partmatch as pm
from partmatch_exporter import ExportSpec, MissingWeightsError, export_features, load_crop
from partmatch_exporter.cli import main


class TestGeometry:
    def test_224_crop_grid_shapes(self, weights_path, image_224, tmp_path):
        spec = ExportSpec([image_224], tmp_path, weights_path)
        export_features(spec)
        coarse = pm.read_grid(tmp_path / "crop224.fgrd")
        assert (coarse.rows, coarse.cols, coarse.dim) == (14, 14, 512)
        assert coarse.stride == 16.0
        fine = pm.read_grid(tmp_path / "crop224.fine.fgrd")
        assert (fine.rows, fine.cols, fine.dim) == (28, 28, 256)
        assert fine.stride == 8.0

    def test_short_axis_rescale(self, weights_path, image_landscape, tmp_path):
        # 400x300 -> short axis 224 -> 299x224 -> coarse grid 14 rows x 18 cols
        spec = ExportSpec([image_landscape], tmp_path, weights_path)
        export_features(spec)
        coarse = pm.read_grid(tmp_path / "wide.fgrd")
        assert coarse.rows == 14 and coarse.cols == 18
        assert (coarse.meta.width, coarse.meta.height) == (299, 224)

    def test_crop_box_applied(self, weights_path, image_landscape, tmp_path):
        spec = ExportSpec([image_landscape], tmp_path, weights_path,
                          boxes={"wide": (10, 10, 234, 234)})
        export_features(spec)
        coarse = pm.read_grid(tmp_path / "wide.fgrd")
        assert (coarse.rows, coarse.cols) == (14, 14)


class TestGridContract:
    def test_cells_unit_norm(self, weights_path, image_224, tmp_path):
        export_features(ExportSpec([image_224], tmp_path, weights_path))
        for name in ("crop224.fgrd", "crop224.fine.fgrd"):
            grid = pm.read_grid(tmp_path / name)
            norms = np.linalg.norm(grid.data.astype(np.float64), axis=2)
            dead = norms <= 1e-12
            assert np.allclose(norms[~dead], 1.0, atol=1e-5)

    def test_roundtrip_through_primary_reader(self, weights_path, image_224, tmp_path):
        export_features(ExportSpec([image_224], tmp_path, weights_path))
        grid = pm.read_grid(tmp_path / "crop224.fgrd")
        out = tmp_path / "rewritten.fgrd"
        pm.write_grid(grid, out)
        assert out.read_bytes() == (tmp_path / "crop224.fgrd").read_bytes()
        again = pm.read_grid(out)
        assert np.array_equal(again.data, grid.data)
        assert again.meta.image_id == "crop224"

    def test_reexport_byte_identical(self, weights_path, image_224, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        export_features(ExportSpec([image_224], a, weights_path))
        export_features(ExportSpec([image_224], b, weights_path))
        for name in ("crop224.fgrd", "crop224.fine.fgrd"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestErrors:
    def test_missing_weights(self, image_224, tmp_path):
        with pytest.raises(MissingWeightsError):
            export_features(ExportSpec([image_224], tmp_path, tmp_path / "none.pth"))

    def test_unreadable_image(self, weights_path, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not an image")
        with pytest.raises(OSError):
            export_features(ExportSpec([bad], tmp_path, weights_path))

    def test_spec_validation(self, weights_path, image_224, tmp_path):
        with pytest.raises(ValueError):
            ExportSpec([image_224], tmp_path, weights_path, short_axis=0)
        with pytest.raises(ValueError):
            ExportSpec([image_224], tmp_path, weights_path, layers=("coarse", "coarse"))

    def test_load_crop_box_validation(self, image_224):
        with pytest.raises(ValueError):
            load_crop(image_224, box=(50, 50, 10, 80))


class TestCli:
    def test_export_command(self, weights_path, image_224, tmp_path, capsys):
        rc = main(["export", "--images", str(image_224), "--weights", str(weights_path),
                   "--out", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "crop224.fgrd").exists()

    def test_missing_weights_is_error_exit(self, image_224, tmp_path):
        rc = main(["export", "--images", str(image_224), "--weights",
                   str(tmp_path / "none.pth"), "--out", str(tmp_path)])
        assert rc == 1

    def test_make_weights_then_export(self, image_224, tmp_path):
        w = tmp_path / "w.pth"
        assert main(["make-weights", "--seed", "1", "--out", str(w)]) == 0
        assert main(["export", "--images", str(image_224), "--weights", str(w),
                     "--out", str(tmp_path / "out")]) == 0
