"""Format-level tests: grid enumeration, RLE runs, and file headers."""

import struct

import numpy as np
import pytest

from sidecar import encode_runs, grid_origins, write_patch_features, write_proposals


class TestGrid:
    def test_stride_positions_row_major(self):
        origins = grid_origins(120, 120)
        expected = [[y, x] for y in (0, 30, 60) for x in (0, 30, 60)]
        assert origins.tolist() == expected

    def test_last_patch_snaps_inward(self):
        origins = grid_origins(64, 64)
        assert len(origins) == 4
        assert sorted({y for y, _ in origins}) == [0, 4]
        assert sorted({x for _, x in origins}) == [0, 4]

    def test_exact_fit_single_patch(self):
        assert grid_origins(60, 60).tolist() == [[0, 0]]

    def test_too_small_image_rejected(self):
        with pytest.raises(ValueError, match="smaller than patch"):
            grid_origins(59, 120)
        with pytest.raises(ValueError, match="stride"):
            grid_origins(120, 120, stride=0)


class TestRunLengthEncoding:
    def test_known_runs(self):
        mask = np.array([0, 1, 1, 0, 0, 1, 0, 1, 1, 1], dtype=bool)
        assert encode_runs(mask).tolist() == [[1, 2], [5, 1], [7, 3]]

    def test_empty_and_full(self):
        assert encode_runs(np.zeros(6, dtype=bool)).shape == (0, 2)
        assert encode_runs(np.ones(6, dtype=bool)).tolist() == [[0, 6]]

    def test_runs_sorted_disjoint_and_lossless(self):
        rng = np.random.default_rng(11)
        mask = rng.random(500) < 0.4
        runs = encode_runs(mask)
        starts = runs[:, 0].astype(int)
        lengths = runs[:, 1].astype(int)
        assert np.all(lengths >= 1)
        assert np.all(starts[1:] >= (starts + lengths)[:-1])
        rebuilt = np.zeros(500, dtype=bool)
        for start, length in zip(starts, lengths):
            rebuilt[start : start + length] = True
        assert np.array_equal(rebuilt, mask)


class TestWriters:
    def test_spft_header_and_payload(self, tmp_path):
        path = tmp_path / "t.spft"
        matrix = np.arange(12, dtype=np.float64).reshape(2, 6)
        write_patch_features(path, matrix, 90, 70, 60, 30)
        raw = path.read_bytes()
        assert struct.unpack("<4s7I", raw[:32]) == (b"SPFT", 1, 90, 70, 60, 30, 2, 6)
        payload = np.frombuffer(raw[32:], dtype="<f4")
        assert payload.tolist() == list(range(12))

    def test_spft_rejects_bad_matrices(self, tmp_path):
        with pytest.raises(ValueError, match="2-D"):
            write_patch_features(tmp_path / "t", np.zeros(4), 90, 70, 60, 30)
        with pytest.raises(ValueError, match="non-finite"):
            write_patch_features(
                tmp_path / "t", np.full((2, 2), np.nan), 90, 70, 60, 30
            )

    def test_sppr_header_and_runs(self, tmp_path):
        path = tmp_path / "t.sppr"
        masks = np.zeros((2, 4, 5), dtype=bool)
        masks[0, 1, 1:4] = True  # flat run (6, 3)
        masks[1, :, 2] = True  # one single-pixel run per row
        write_proposals(path, masks, np.array([1.0, 0.25]))
        raw = path.read_bytes()
        assert struct.unpack("<4s4I", raw[:20]) == (b"SPPR", 1, 5, 4, 2)
        assert struct.unpack_from("<fI", raw, 20) == (1.0, 1)
        assert struct.unpack_from("<II", raw, 28) == (6, 3)
        assert struct.unpack_from("<fI", raw, 36) == (0.25, 4)

    def test_sppr_rejects_bad_inputs(self, tmp_path):
        masks = np.zeros((1, 3, 3), dtype=bool)
        with pytest.raises(ValueError, match="\\[0, 1\\]"):
            write_proposals(tmp_path / "t", masks, np.array([1.5]))
        with pytest.raises(ValueError, match="one score per mask"):
            write_proposals(tmp_path / "t", masks, np.array([0.5, 0.5]))
        with pytest.raises(ValueError, match="boolean"):
            write_proposals(tmp_path / "t", masks.astype(int), np.array([0.5]))
