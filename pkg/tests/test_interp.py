"""Tests for the sparse interpolation operator H."""

import numpy as np
import pytest

from fglr.camera import MappingTable, build_mapping_table, identity_calibration, make_synthetic_calibration
from fglr.imgcore import BayerImage
from fglr.interp import apply_H, build_H, gather_window


def fake_table(coords, valid=None):
    coords = np.asarray(coords, dtype=np.float64)
    if valid is None:
        valid = np.ones(coords.shape[:2], dtype=bool)
    return MappingTable(coords, valid)


def table_at(points, shape=(1, 1)):
    """Single-patch table whose pixel (x, y) maps to points[y][x]."""
    return fake_table(np.asarray(points, dtype=np.float64).reshape(shape[1], shape[0], 2))


def random_bayer(rng, h=12, w=12):
    return BayerImage(rng.uniform(0, 1, size=(h, w)))


class TestRedBlueWeights:
    def test_exact_lattice_site_single_weight(self):
        rng = np.random.default_rng(0)
        bayer = random_bayer(rng)
        table = table_at([[(4.0, 6.0)]])  # a red site (even, even)
        op = build_H(table, bayer, (0, 0, 1, 1), "R")
        rows, cols, weights = op.entries()
        assert len(weights) == 1 and weights[0] == 1.0
        assert apply_H(op, gather_window(bayer, op.window))[0] == bayer.data[6, 4]

    def test_cell_center_four_quarters(self):
        rng = np.random.default_rng(1)
        bayer = random_bayer(rng)
        table = table_at([[(5.0, 5.0)]])  # center of the red cell (4..6)^2
        op = build_H(table, bayer, (0, 0, 1, 1), "R")
        _, _, weights = op.entries()
        assert len(weights) == 4
        assert np.allclose(np.sort(weights), 0.25, atol=1e-15)
        expected = bayer.data[4:8:2, 4:8:2].mean()
        assert apply_H(op, gather_window(bayer, op.window))[0] == pytest.approx(expected, abs=1e-15)

    def test_blue_lattice_phase(self):
        rng = np.random.default_rng(2)
        bayer = random_bayer(rng)
        table = table_at([[(5.0, 7.0)]])  # a blue site (odd, odd)
        op = build_H(table, bayer, (0, 0, 1, 1), "B")
        _, _, weights = op.entries()
        assert len(weights) == 1 and weights[0] == 1.0
        assert apply_H(op, gather_window(bayer, op.window))[0] == bayer.data[7, 5]

    def test_border_fallback_single_nearest(self):
        rng = np.random.default_rng(3)
        bayer = random_bayer(rng, 6, 6)
        table = table_at([[(5.0, 2.0)]])  # red stencil needs x=6, out of bounds
        op = build_H(table, bayer, (0, 0, 1, 1), "R")
        _, _, weights = op.entries()
        assert len(weights) == 1 and weights[0] == 1.0
        assert apply_H(op, gather_window(bayer, op.window))[0] == bayer.data[2, 4]


class TestGreenWeights:
    def test_exact_green_site(self):
        rng = np.random.default_rng(4)
        bayer = random_bayer(rng)
        table = table_at([[(3.0, 6.0)]])  # green: odd + even
        op = build_H(table, bayer, (0, 0, 1, 1), "G")
        _, _, weights = op.entries()
        assert len(weights) == 1 and weights[0] == 1.0
        assert apply_H(op, gather_window(bayer, op.window))[0] == bayer.data[6, 3]

    def test_red_site_four_equal_greens(self):
        rng = np.random.default_rng(5)
        bayer = random_bayer(rng)
        table = table_at([[(4.0, 4.0)]])  # red site: 4 greens at distance 1
        op = build_H(table, bayer, (0, 0, 1, 1), "G")
        _, _, weights = op.entries()
        assert len(weights) == 4
        assert np.allclose(weights, 0.25, atol=1e-15)
        expected = (bayer.data[4, 3] + bayer.data[4, 5] + bayer.data[3, 4] + bayer.data[5, 4]) / 4
        assert apply_H(op, gather_window(bayer, op.window))[0] == pytest.approx(expected, abs=1e-15)


class TestOperatorProperties:
    def build_random_case(self, seed, channel):
        rng = np.random.default_rng(seed)
        bayer = random_bayer(rng, 32, 32)
        coords = rng.uniform(3.0, 28.0, size=(4, 5, 2))
        table = fake_table(coords)
        op = build_H(table, bayer, (0, 0, 5, 4), channel)
        return rng, bayer, op

    @pytest.mark.parametrize("channel", ["R", "G", "B"])
    def test_rows_sum_to_one(self, channel):
        _, _, op = self.build_random_case(6, channel)
        sums = np.asarray(op.matrix.sum(axis=1)).ravel()
        assert np.abs(sums - 1.0).max() < 1e-12

    @pytest.mark.parametrize("channel", ["R", "G", "B"])
    def test_partition_of_unity(self, channel):
        _, bayer, op = self.build_random_case(7, channel)
        constant = BayerImage(np.full(bayer.data.shape, 0.7))
        out = apply_H(op, gather_window(constant, op.window))
        assert np.abs(out - 0.7).max() < 1e-12

    @pytest.mark.parametrize("channel", ["R", "G", "B"])
    def test_weights_nonnegative(self, channel):
        _, _, op = self.build_random_case(8, channel)
        _, _, weights = op.entries()
        assert (weights >= 0).all()

    @pytest.mark.parametrize("channel", ["R", "G", "B"])
    def test_locality(self, channel):
        rng = np.random.default_rng(9)
        bayer = random_bayer(rng, 32, 32)
        coords = rng.uniform(1.0, 30.0, size=(4, 4, 2))
        table = fake_table(coords)
        op = build_H(table, bayer, (0, 0, 4, 4), channel)
        rows, cols, weights = op.entries()
        wx0, wy0, ww, _ = op.window
        for r, c, w in zip(rows, cols, weights):
            if w == 0:
                continue
            site = np.array([wx0 + c % ww, wy0 + c // ww])
            mapped = coords[r // 4, r % 4]
            assert np.abs(site - mapped).max() <= 3.0

    def test_columns_reference_matching_color(self):
        rng = np.random.default_rng(10)
        bayer = random_bayer(rng, 32, 32)
        coords = rng.uniform(3.0, 28.0, size=(3, 3, 2))
        table = fake_table(coords)
        for channel in "RGB":
            op = build_H(table, bayer, (0, 0, 3, 3), channel)
            _, cols, weights = op.entries()
            wx0, wy0, ww, _ = op.window
            for c, w in zip(cols, weights):
                if w > 0:
                    assert bayer.color_at(wx0 + c % ww, wy0 + c // ww) == channel

    def test_invalid_rows_are_zero(self):
        rng = np.random.default_rng(11)
        bayer = random_bayer(rng, 16, 16)
        coords = rng.uniform(4.0, 12.0, size=(2, 2, 2))
        valid = np.array([[True, False], [True, True]])
        table = fake_table(coords, valid)
        op = build_H(table, bayer, (0, 0, 2, 2), "R")
        row_sums = np.asarray(np.abs(op.matrix).sum(axis=1)).ravel()
        assert row_sums[1] == 0.0
        assert (row_sums[[0, 2, 3]] > 0).all()

    def test_linearity(self):
        rng = np.random.default_rng(12)
        bayer = random_bayer(rng, 16, 16)
        table = fake_table(rng.uniform(3.0, 12.0, size=(3, 3, 2)))
        op = build_H(table, bayer, (0, 0, 3, 3), "G")
        y1 = rng.normal(size=op.cols)
        y2 = rng.normal(size=op.cols)
        lhs = apply_H(op, 0.3 * y1 + 1.7 * y2)
        rhs = 0.3 * apply_H(op, y1) + 1.7 * apply_H(op, y2)
        assert np.abs(lhs - rhs).max() < 1e-14

    def test_matches_dense_matvec_oracle(self):
        rng = np.random.default_rng(13)
        bayer = random_bayer(rng, 24, 24)
        table = fake_table(rng.uniform(3.0, 20.0, size=(4, 4, 2)))
        for channel in "RGB":
            op = build_H(table, bayer, (0, 0, 4, 4), channel)
            y = rng.uniform(size=op.cols)
            dense = op.matrix.toarray()
            oracle = np.array([float(np.dot(dense[r], y)) for r in range(op.rows)])
            assert np.abs(apply_H(op, y) - oracle).max() < 1e-12

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(14)
        bayer = random_bayer(rng)
        table = fake_table(rng.uniform(3.0, 8.0, size=(2, 2, 2)))
        op = build_H(table, bayer, (0, 0, 2, 2), "R")
        with pytest.raises(ValueError, match="dimension"):
            apply_H(op, np.zeros(op.cols + 1))

    def test_zero_input_gives_zero_output(self):
        rng = np.random.default_rng(15)
        bayer = random_bayer(rng)
        table = fake_table(rng.uniform(3.0, 8.0, size=(2, 2, 2)))
        op = build_H(table, bayer, (0, 0, 2, 2), "B")
        assert np.array_equal(apply_H(op, np.zeros(op.cols)), np.zeros(4))


class TestWithRealMapping:
    def test_identity_mapping_gathers_cfa_samples(self):
        cal = identity_calibration(16)
        table = build_mapping_table(cal)
        rng = np.random.default_rng(16)
        bayer = random_bayer(rng, 16, 16)
        op = build_H(table, bayer, (0, 0, 16, 16), "R")
        out = apply_H(op, gather_window(bayer, op.window)).reshape(16, 16)
        # At red sites the interpolation gathers the captured sample (up to
        # the trig round-off of the identity mapping itself).
        assert np.abs(out[0::2, 0::2] - bayer.data[0::2, 0::2]).max() < 1e-12

    def test_synthetic_calibration_full_patch(self):
        cal = make_synthetic_calibration(rect_size=32)
        table = build_mapping_table(cal)
        rng = np.random.default_rng(17)
        bayer = random_bayer(rng, 64, 64)
        for channel in "RGB":
            op = build_H(table, bayer, (0, 0, 32, 32), channel)
            sums = np.asarray(op.matrix.sum(axis=1)).ravel()
            assert np.abs(sums - 1.0).max() < 1e-12

    def test_matrix_market_dump(self, tmp_path):
        rng = np.random.default_rng(18)
        bayer = random_bayer(rng)
        table = fake_table(rng.uniform(3.0, 8.0, size=(2, 2, 2)))
        op = build_H(table, bayer, (0, 0, 2, 2), "G")
        path = tmp_path / "H.mtx"
        op.dump_matrix_market(path)
        assert path.with_suffix(".mtx").exists()
