"""Command-line behaviour: exit codes, bundle layout, metadata echoes."""

import json

import numpy as np
import pytest

from intrinsics import ImageBuffer, load_bundle, relight_intensity, save_image
from intrinsics.cli import main
from intrinsics.imgcore import load_image
from intrinsics.pipeline import recolor_illumination
from intrinsics.semantics import build_grid, load_patch_features, load_proposals


@pytest.fixture
def tiny_image(tmp_path):
    refl = np.zeros((32, 32, 3))
    refl[:, :16] = [0.7, 0.3, 0.3]
    refl[:, 16:] = [0.2, 0.5, 0.8]
    yy, xx = np.mgrid[0:32, 0:32]
    shade = 0.4 + 0.6 * np.exp(-((yy - 8) ** 2 + (xx - 8) ** 2) / (2 * 14.0**2))
    path = tmp_path / "in.png"
    save_image(path, ImageBuffer(refl * shade[:, :, None]))
    return path


def decompose(path, out, *extra):
    return main(["decompose", str(path), "--out", str(out), "--k", "1",
                 "--param", "sample_count=6", *extra])


class TestDecompose:
    def test_missing_input_exits_1(self, tmp_path):
        assert main(["decompose", str(tmp_path / "nope.png"), "--out", str(tmp_path / "b")]) == 1

    def test_bundle_written_with_history(self, tiny_image, tmp_path, capsys):
        out = tmp_path / "bundle"
        rc = main(["decompose", str(tiny_image), "--out", str(out), "--k", "2",
                   "--param", "sample_count=6"])
        assert rc == 0
        assert str(out) in capsys.readouterr().out
        assert len(list((out / "iters").iterdir())) == 3 * 2
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["params"]["iterations"] == 2

    def test_variant_v4_zeroes_reflectance_weights(self, tiny_image, tmp_path):
        out = tmp_path / "bundle"
        assert decompose(tiny_image, out, "--variant", "v4") == 0
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["params"]["gamma_mid"] == 0.0
        assert meta["params"]["gamma_global"] == 0.0
        assert meta["params"]["lambda_mid"] == 0.02

    def test_param_override_echoed_in_metadata(self, tiny_image, tmp_path):
        out = tmp_path / "bundle"
        assert decompose(tiny_image, out, "--param", "coupling=80", "--seed", "3") == 0
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["params"]["coupling"] == 80.0
        assert meta["params"]["seed"] == 3

    def test_unknown_param_rejected(self, tiny_image, tmp_path):
        assert decompose(tiny_image, tmp_path / "b", "--param", "nope=3") == 1

    def test_backend_flags_mutually_exclusive(self, tiny_image, tmp_path):
        assert decompose(tiny_image, tmp_path / "b", "--backend", "external") == 1
        assert decompose(tiny_image, tmp_path / "b", "--backend", "builtin",
                         "--features", "x.spft") == 1

    def test_deterministic_given_seed(self, tiny_image, tmp_path):
        assert decompose(tiny_image, tmp_path / "b1", "--seed", "5") == 0
        assert decompose(tiny_image, tmp_path / "b2", "--seed", "5") == 0
        npz1 = (tmp_path / "b1" / "components.npz").read_bytes()
        npz2 = (tmp_path / "b2" / "components.npz").read_bytes()
        assert npz1 == npz2


class TestRelight:
    def test_neutral_tint_reproduces_reconstruction(self, tiny_image, tmp_path):
        out = tmp_path / "bundle"
        assert decompose(tiny_image, out) == 0
        assert main(["relight-color", "--bundle", str(out), "--ab", "0,0"]) == 0
        arrays = load_bundle(out)
        expected = recolor_illumination(
            arrays["merged_reflectance"], arrays["merged_shading"], (0.0, 0.0)
        )
        save_image(tmp_path / "expected.png", expected)
        assert (out / "relit_color.png").read_bytes() == (tmp_path / "expected.png").read_bytes()

    def test_intensity_scale_zero_keeps_additive_term_only(self, tiny_image, tmp_path):
        out = tmp_path / "bundle"
        assert decompose(tiny_image, out) == 0
        assert main(["relight-intensity", "--bundle", str(out), "--scale", "0"]) == 0
        arrays = load_bundle(out)
        expected = relight_intensity(
            arrays["reflectance"],
            arrays["shading"],
            np.exp(arrays["log_reflectance"]),
            np.exp(arrays["log_shading"]),
            ImageBuffer(arrays["input"]),
            scale=0.0,
        )
        save_image(tmp_path / "expected.png", expected)
        assert (out / "relit_intensity.png").read_bytes() == (tmp_path / "expected.png").read_bytes()

    def test_missing_bundle_exits_1(self, tmp_path):
        assert main(["relight-color", "--bundle", str(tmp_path), "--ab", "1,2"]) == 1

    def test_bad_ab_exits_1(self, tiny_image, tmp_path):
        out = tmp_path / "bundle"
        assert decompose(tiny_image, out) == 0
        assert main(["relight-color", "--bundle", str(out), "--ab", "zero"]) == 1


class TestEval:
    def judgement_file(self, tmp_path):
        payload = {
            "intrinsic_points": [
                {"id": 1, "x": 0.1, "y": 0.5},
                {"id": 2, "x": 0.9, "y": 0.5},
            ],
            "intrinsic_comparisons": [
                {"point1": 1, "point2": 2, "darker": "1", "darker_score": 1.0}
            ],
        }
        path = tmp_path / "ann.json"
        path.write_text(json.dumps(payload))
        return path

    def two_tone(self, tmp_path, name="pred.png"):
        data = np.full((10, 10, 3), 0.8)
        data[:, :5] = 0.2
        path = tmp_path / name
        save_image(path, ImageBuffer(data))
        return path

    def test_whdr_match_prints_zero(self, tmp_path, capsys):
        rc = main(["eval", "whdr", "--pred", str(self.two_tone(tmp_path)),
                   "--judgements", str(self.judgement_file(tmp_path))])
        assert rc == 0
        row = json.loads(capsys.readouterr().out.strip())
        assert row["metric"] == "whdr"
        assert row["value"] == 0.0
        assert row["params"]["delta"] == 0.10

    def test_lmse_identical_prints_zero(self, tmp_path, capsys):
        pred = self.two_tone(tmp_path)
        rc = main(["eval", "lmse", "--pred", str(pred), "--gt", str(pred)])
        assert rc == 0
        assert json.loads(capsys.readouterr().out.strip())["value"] == 0.0

    def test_malformed_judgements_exit_1(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        rc = main(["eval", "whdr", "--pred", str(self.two_tone(tmp_path)),
                   "--judgements", str(bad)])
        assert rc == 1

    def test_missing_reference_flag_exit_1(self, tmp_path):
        assert main(["eval", "whdr", "--pred", str(self.two_tone(tmp_path))]) == 1

    def test_batch_directory_mode(self, tmp_path, capsys):
        preds = tmp_path / "preds"
        gts = tmp_path / "gts"
        preds.mkdir()
        gts.mkdir()
        for name in ("a", "b"):
            self.two_tone(preds, f"{name}.png")
            self.two_tone(gts, f"{name}.png")
        csv_path = tmp_path / "summary.csv"
        rc = main(["eval", "lmse", "--pred", str(preds), "--gt", str(gts),
                   "--csv", str(csv_path)])
        assert rc == 0
        lines = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert len(lines) == 3  # two images + mean row
        assert lines[-1]["image"] == "mean"
        assert lines[-1]["params"]["images"] == 2
        assert csv_path.exists()

    def test_batch_jobs_matches_serial(self, tmp_path, capsys):
        preds = tmp_path / "preds"
        gts = tmp_path / "gts"
        preds.mkdir()
        gts.mkdir()
        for name in ("a", "b", "c"):
            self.two_tone(preds, f"{name}.png")
            self.two_tone(gts, f"{name}.png")
        assert main(["eval", "lmse", "--pred", str(preds), "--gt", str(gts)]) == 0
        serial = capsys.readouterr().out
        assert main(["eval", "lmse", "--pred", str(preds), "--gt", str(gts),
                     "--jobs", "3"]) == 0
        assert capsys.readouterr().out == serial


class TestFeatures:
    def test_export_loads_back(self, tmp_path):
        rng = np.random.default_rng(0)
        path = tmp_path / "img.png"
        save_image(path, ImageBuffer(rng.uniform(0.1, 0.9, size=(120, 120, 3))))
        spft, sppr = tmp_path / "f.spft", tmp_path / "p.sppr"
        rc = main(["features", str(path), "--out-spft", str(spft), "--out-sppr", str(sppr)])
        assert rc == 0
        img = load_image(path)
        grid = build_grid(img.width, img.height, 60, 30)
        feats = load_patch_features(spft, grid)
        assert feats.patch_count == 9  # 120x120 at 60/30 -> 3 positions per axis
        props = load_proposals(sppr, img.width, img.height)
        assert 1 <= props.count <= 256

    def test_image_below_patch_size_exits_1(self, tiny_image, tmp_path):
        rc = main(["features", str(tiny_image),
                   "--out-spft", str(tmp_path / "f.spft"),
                   "--out-sppr", str(tmp_path / "p.sppr")])
        assert rc == 1
