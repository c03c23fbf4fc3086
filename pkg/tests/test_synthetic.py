import json

import numpy as np
import pytest

import partmatch as pm
from partmatch.grid import grids_equal
from partmatch.synthetic import (
    PART_NAMES,
    SceneReference,
    make_proxy_mesh,
    scene_from_manifest,
    synth_dataset,
    synth_feature_grid,
)


class TestProxyMesh:
    @pytest.mark.parametrize("template", ["box-car", "box-bike"])
    def test_watertight_with_eight_parts(self, template):
        mesh, parts = make_proxy_mesh(template)
        assert len(parts) == 8
        assert len({v for _, v in parts}) == 8
        edges = set()
        edge_count = {}
        for t in mesh.triangles:
            for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                key = (min(a, b), max(a, b))
                edges.add(key)
                edge_count[key] = edge_count.get(key, 0) + 1
        # Euler characteristic of a closed genus-0 surface
        assert len(mesh.vertices) - len(edges) + len(mesh.triangles) == 2
        # watertight: every edge shared by exactly two triangles
        assert set(edge_count.values()) == {2}

    def test_normalized(self):
        mesh, _ = make_proxy_mesh()
        assert mesh.diagonal == pytest.approx(1.0)
        assert np.allclose((mesh.vertices.min(0) + mesh.vertices.max(0)) / 2, 0, atol=1e-12)

    def test_bad_template(self):
        with pytest.raises(ValueError):
            make_proxy_mesh("hovercraft")

    def test_degenerate_dims(self):
        with pytest.raises(ValueError):
            make_proxy_mesh("box-car", dims=(4.5, 0.0, 1.5))


class TestSynthFeatureGrid:
    def test_deterministic(self, scene):
        vp = scene.viewpoint(60.0)
        a, _, _ = synth_feature_grid(scene, vp, 0.0, (1,), "coarse", "x")
        b, _, _ = synth_feature_grid(scene, vp, 0.0, (1,), "coarse", "x")
        assert grids_equal(a, b)

    def test_correspondence_keys_are_visible_vertex_cells(self, scene):
        vp = scene.viewpoint(200.0)
        g, corr, _ = synth_feature_grid(scene, vp, 0.0, (2,), "coarse", "x")
        vis = pm.visible_vertices(scene.mesh, vp)
        for (i, j), (v, px) in corr.items():
            assert vis[v]
            assert int(px[1] // g.stride) == i and int(px[0] // g.stride) == j
        # every visible vertex that lands in bounds is represented by its cell
        from partmatch.geometry import project_points

        px_all, _ = project_points(scene.mesh.vertices, vp)
        for v in np.nonzero(vis)[0]:
            x, y = px_all[v]
            i, j = int(y // g.stride), int(x // g.stride)
            if 0 <= i < g.rows and 0 <= j < g.cols:
                assert (i, j) in corr

    def test_self_recovery_rate(self, scene):
        hits = total = 0
        for k in range(5):
            vp = scene.viewpoint(72.0 * k + 10.0)
            real, corr_r, _ = synth_feature_grid(scene, vp, 0.05, (3, k), "coarse", "r")
            ref, corr_s, _ = synth_feature_grid(scene, vp, 0.0, (4, k), "coarse", "s")
            m = pm.match_images(real, ref)
            va = {c: v for c, (v, _) in corr_r.items()}
            vb = {c: v for c, (v, _) in corr_s.items()}
            hits += sum(1 for p in m.pairs
                        if p.src in va and p.dst in vb and va[p.src] == vb[p.dst])
            total += len(m.pairs)
        assert total > 0 and hits / total >= 0.95

    def test_annotations_on_visible_parts_only(self, scene):
        vp = scene.viewpoint(0.0)
        _, _, annos = synth_feature_grid(scene, vp, 0.0, (5,), "coarse", "x")
        vis = pm.visible_vertices(scene.mesh, vp)
        part_vis = {pid: bool(vis[v]) for pid, v in scene.parts}
        assert {a.part_id for a in annos} == {pid for pid, ok in part_vis.items() if ok}

    def test_descriptor_uniqueness_under_xi(self, scene):
        d = scene.descriptors
        dots = d @ d.T
        n = len(d)
        dist = np.sqrt(np.maximum(2.0 - 2.0 * dots, 0.0))
        off = dist[~np.eye(n, dtype=bool)]
        assert (off <= 0.9).mean() < 0.01

    def test_unit_norm_cells(self, scene):
        vp = scene.viewpoint(33.0)
        g, _, _ = synth_feature_grid(scene, vp, 0.05, (6,), "fine", "x")
        norms = np.linalg.norm(g.data.astype(np.float64), axis=2)
        assert np.allclose(norms, 1.0, atol=1e-6)


class TestSynthDataset:
    def test_sixteen_training_files(self, scene, tmp_path):
        manifest = synth_dataset(scene, 2, 1, tmp_path / "c", sigma=0.05, seed=3)
        assert len(manifest["splits"]["train"]) == 16
        assert len(manifest["splits"]["test"]) == 8
        for image_id in manifest["splits"]["train"]:
            assert (tmp_path / "c" / f"{image_id}.fgrd").exists()
            assert (tmp_path / "c" / f"{image_id}.fine.fgrd").exists()
            assert (tmp_path / "c" / f"{image_id}.anns.json").exists()
        assert (tmp_path / "c" / "mesh.obj").exists()
        assert manifest["part_names"] == list(PART_NAMES)

    def test_same_seed_byte_identical(self, scene, tmp_path):
        synth_dataset(scene, 1, 1, tmp_path / "a", sigma=0.05, seed=3)
        synth_dataset(scene, 1, 1, tmp_path / "b", sigma=0.05, seed=3)
        for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_elevated_test_split(self, scene, tmp_path):
        manifest = synth_dataset(scene, 1, 1, tmp_path / "c", seed=3, test_elevation=20.0)
        corpus = tmp_path / "c"
        test_grid = pm.read_grid(corpus / f"{manifest['splits']['test'][0]}.fgrd")
        assert test_grid.meta.viewpoint.elevation == 20.0
        train_grid = pm.read_grid(corpus / f"{manifest['splits']['train'][0]}.fgrd")
        assert train_grid.meta.viewpoint.elevation == 0.0

    def test_scene_rebuild_from_manifest(self, scene, tmp_path):
        manifest = synth_dataset(scene, 1, 0, tmp_path / "c", seed=3)
        with open(tmp_path / "c" / "manifest.json") as fh:
            loaded = json.load(fh)
        rebuilt = scene_from_manifest(loaded)
        assert np.array_equal(rebuilt.descriptors, scene.descriptors)
        assert np.allclose(rebuilt.mesh.vertices, scene.mesh.vertices)
        # reference grids regenerate identically
        vp = scene.viewpoint(45.0)
        a, _, _ = synth_feature_grid(scene, vp, 0.0, 0, "coarse", "r")
        b, _, _ = synth_feature_grid(rebuilt, vp, 0.0, 0, "coarse", "r")
        assert grids_equal(a, b)

    def test_end_to_end_identifiability_sigma_zero(self, scene):
        reference = SceneReference(scene)
        samples = []
        images = []
        for b, center in enumerate(range(0, 360, 45)):
            vp = scene.viewpoint(float(center) + 7.0)
            iid = f"s0_{b}"
            coarse, _, annos = synth_feature_grid(scene, vp, 0.0, (8, b), "coarse", iid)
            fine, _, _ = synth_feature_grid(scene, vp, 0.0, (8, b), "fine", iid)
            samples.append(pm.TrainingSample(coarse, annos, fine))
            images.append((iid, coarse, fine, annos, vp))
        model = pm.train(samples, scene.mesh, reference)
        dets_all, gts_all = {}, {}
        for iid, coarse, fine, annos, vp in images:
            dets_all[iid] = pm.detect(coarse, model, scene.mesh, reference, vp, fine)
            gts_all[iid] = annos
        assert pm.evaluate(dets_all, gts_all).map == pytest.approx(1.0)
