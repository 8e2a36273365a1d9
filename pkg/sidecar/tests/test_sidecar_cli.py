"""CLI tests plus the engine-integration round trip."""

import numpy as np
from intrinsics import IterationParams, load_image, run_decomposition
from intrinsics.semantics import build_grid, load_patch_features, load_proposals

from sidecar.cli import main


class TestExportCommand:
    def test_export_succeeds_and_loads_in_engine(self, scene_path, tmp_path, capsys):
        spft = tmp_path / "scene.spft"
        sppr = tmp_path / "scene.sppr"
        argv = [
            "export",
            "--image", str(scene_path),
            "--spft", str(spft),
            "--sppr", str(sppr),
        ]
        assert main(argv) == 0
        out = capsys.readouterr().out
        assert "9 patches x 4096" in out
        feats = load_patch_features(spft, build_grid(120, 120))
        assert feats.source_tag == "external"
        assert feats.feature_dim == 4096
        props = load_proposals(sppr, 120, 120)
        assert 1 <= props.count <= 256
        assert np.all((props.scores >= 0.0) & (props.scores <= 1.0))

    def test_missing_image_fails(self, tmp_path, capsys):
        argv = [
            "export",
            "--image", str(tmp_path / "nope.png"),
            "--spft", str(tmp_path / "a.spft"),
            "--sppr", str(tmp_path / "b.sppr"),
        ]
        assert main(argv) == 1
        assert "cannot read image" in capsys.readouterr().err

    def test_unknown_method_fails(self, scene_path, tmp_path, capsys):
        argv = [
            "export",
            "--image", str(scene_path),
            "--method", "mcg",
            "--spft", str(tmp_path / "a.spft"),
            "--sppr", str(tmp_path / "b.sppr"),
        ]
        assert main(argv) == 1
        assert "unavailable" in capsys.readouterr().err


class TestEngineIntegration:
    def test_external_backend_decomposition_end_to_end(self, scene_path, exported):
        img = load_image(scene_path)
        result = run_decomposition(
            img,
            IterationParams(iterations=1, sample_count=8, cg_max_iter=600),
            features_path=exported["spft"],
            proposals_path=exported["sppr"],
        )
        assert result.backend == "external"
        assert len(result.history) == 1
        final = result.history[-1]
        assert np.allclose(final.reflectance * final.shading, img.data, atol=1e-10)
        recon = result.merged_reflectance * result.merged_shading
        assert np.abs(recon - img.data).max() <= 1e-10
        print("[PASS] sidecar integration: external-backend decomposition")
