import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from brainnet_moe.connectome import (ConnectivityMatrix, load_matrix, log_normalize, parse_matrix, save_matrix,
                                     to_subnetworks)
from brainnet_moe.errors import DegenerateInputError, ShapeError, SymmetryError


def symmetric_counts(n, rng):
    upper = np.triu(rng.integers(0, 500, (n, n)), 1).astype(float)
    return upper + upper.T


class TestParsing:
    def test_csv_with_header(self):
        sc = parse_matrix("A,B\n0,3\n3,0\n")
        assert sc.region_labels == ["A", "B"]
        np.testing.assert_array_equal(sc.values, [[0, 3], [3, 0]])

    def test_dense_text(self):
        sc = parse_matrix("0 1 2\n1 0 4\n2 4 0\n", format="dense-text")
        assert sc.n_regions == 3
        assert sc.region_labels == ["R000", "R001", "R002"]

    def test_asymmetric(self):
        with pytest.raises(SymmetryError):
            parse_matrix("0,1\n2,0")

    def test_not_square(self):
        with pytest.raises(ShapeError):
            parse_matrix("0,1,2\n1,0,3\n")

    def test_negative_count(self):
        with pytest.raises(ValueError):
            ConnectivityMatrix(np.array([[0.0, -1.0], [-1.0, 0.0]]))

    def test_nan(self):
        with pytest.raises(ValueError):
            ConnectivityMatrix(np.array([[0.0, np.nan], [np.nan, 0.0]]))

    def test_duplicate_labels(self):
        with pytest.raises(ValueError):
            ConnectivityMatrix(np.zeros((2, 2)), ["x", "x"])

    def test_symmetry_tolerance(self):
        ConnectivityMatrix(np.array([[0.0, 1.0], [1.0 + 1e-10, 0.0]]))

    def test_save_load_round_trip(self, tmp_path):
        sc = ConnectivityMatrix(symmetric_counts(5, np.random.default_rng(0)), list("abcde"))
        save_matrix(sc, tmp_path / "m.csv")
        back = load_matrix(tmp_path / "m.csv")
        np.testing.assert_array_equal(back.values, sc.values)
        assert back.region_labels == list("abcde")
        assert ".0" not in (tmp_path / "m.csv").read_text()


class TestNormalize:
    def test_two_by_two_by_hand(self):
        nc = log_normalize(ConnectivityMatrix(np.array([[0.0, 7.0], [7.0, 0.0]])))
        assert nc.mu == 1.5 and nc.sigma == 1.5
        np.testing.assert_allclose(nc.values, [[-1, 1], [1, -1]], atol=1e-12)

    def test_zero_maps_to_log_zero(self):
        nc = log_normalize(ConnectivityMatrix(np.array([[0.0, 3.0], [3.0, 0.0]])))
        assert nc.values[0, 0] * nc.sigma + nc.mu == 0.0

    def test_constant_matrix(self):
        with pytest.raises(DegenerateInputError):
            log_normalize(ConnectivityMatrix(np.full((3, 3), 4.0)))

    @given(st.integers(2, 12), st.integers(0, 2**32 - 1))
    @settings(max_examples=60)
    def test_zero_mean_unit_std(self, n, seed):
        m = symmetric_counts(n, np.random.default_rng(seed))
        if np.ptp(m) == 0:
            return
        v = log_normalize(ConnectivityMatrix(m)).values
        assert abs(v.mean()) < 1e-6
        assert abs(v.std() - 1.0) < 1e-6

    @given(arrays(np.float64, (4, 4), elements=st.floats(0, 1e4)))
    @settings(max_examples=60)
    def test_monotone(self, raw):
        m = np.triu(raw, 1) + np.triu(raw, 1).T
        try:
            v = log_normalize(ConnectivityMatrix(m)).values
        except DegenerateInputError:
            return
        order = np.argsort(m, axis=None, kind="stable")
        assert np.all(np.diff(v.reshape(-1)[order]) >= -1e-12)


class TestSubnetworks:
    def test_rows(self):
        nc = log_normalize(ConnectivityMatrix(np.array([[0.0, 7.0], [7.0, 0.0]])))
        batch = to_subnetworks(nc, "s1")
        assert len(batch) == 2
        np.testing.assert_allclose(batch.rows[0], [-1, 1])
        np.testing.assert_allclose(batch.rows[1], [1, -1])

    def test_restack_round_trip(self):
        nc = log_normalize(ConnectivityMatrix(symmetric_counts(7, np.random.default_rng(2))))
        np.testing.assert_array_equal(to_subnetworks(nc, "s").stack(), nc.values)
