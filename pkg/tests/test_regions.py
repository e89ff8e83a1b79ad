import numpy as np
import pytest

from roadcast.regions import partition_by_quadrant, validate_partition


def two_node(delta):
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    pos = np.array([[0.0, 0.0], [delta[0], delta[1]]])
    return partition_by_quadrant(a, pos)


class TestQuadrantConvention:
    @pytest.mark.parametrize(
        "delta,region",
        [
            ((1.0, 1.0), 0),   # ++ northeast
            ((1.0, -1.0), 1),  # +-
            ((-1.0, 1.0), 2),  # -+
            ((-1.0, -1.0), 3),  # --
            ((0.0, 0.0), 0),   # ties count as nonnegative
            ((0.0, -1.0), 1),
            ((-1.0, 0.0), 2),
        ],
    )
    def test_sign_to_region(self, delta, region):
        tensor = two_node(delta)
        assert tensor[region, 0, 1] == 1.0
        assert tensor.sum() == 1.0


class TestPartitionProperties:
    def random_case(self, seed, n=10):
        rng = np.random.default_rng(seed)
        a = (rng.uniform(size=(n, n)) < 0.4).astype(float)
        np.fill_diagonal(a, 0.0)
        pos = rng.normal(size=(n, 2))
        return a, pos

    def test_completeness_and_disjointness(self):
        a, pos = self.random_case(1)
        tensor = partition_by_quadrant(a, pos)
        assert tensor.shape == (4, 10, 10)
        assert np.array_equal(tensor.sum(axis=0), a)
        assert np.all((tensor != 0).sum(axis=0) <= 1)
        assert validate_partition(tensor, a)

    def test_weighted_adjacency_supported(self):
        a, pos = self.random_case(2)
        a *= np.random.default_rng(3).uniform(0.5, 2.0, size=a.shape)
        tensor = partition_by_quadrant(a, pos)
        assert np.array_equal(tensor.sum(axis=0), a)

    def test_permutation_equivariance(self):
        a, pos = self.random_case(4)
        tensor = partition_by_quadrant(a, pos)
        rng = np.random.default_rng(5)
        perm = rng.permutation(10)
        permuted = partition_by_quadrant(a[np.ix_(perm, perm)], pos[perm])
        assert np.array_equal(permuted, tensor[:, perm][:, :, perm])

    def test_higher_dimensional_positions(self):
        a, _ = self.random_case(6)
        pos = np.random.default_rng(7).normal(size=(10, 3))
        tensor = partition_by_quadrant(a, pos)
        assert tensor.shape == (8, 10, 10)
        assert validate_partition(tensor, a)

    def test_nonzero_diagonal_rejected(self):
        a = np.eye(3)
        with pytest.raises(ValueError, match="diagonal"):
            partition_by_quadrant(a, np.zeros((3, 2)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="positions"):
            partition_by_quadrant(np.zeros((3, 3)), np.zeros((4, 2)))


class TestValidatePartition:
    def test_constructed_partition_valid(self):
        rng = np.random.default_rng(8)
        a = (rng.uniform(size=(6, 6)) < 0.5).astype(float)
        np.fill_diagonal(a, 0.0)
        tensor = partition_by_quadrant(a, rng.normal(size=(6, 2)))
        assert validate_partition(tensor, a) is True

    def test_moved_entry_detected(self):
        rng = np.random.default_rng(9)
        a = (rng.uniform(size=(6, 6)) < 0.5).astype(float)
        np.fill_diagonal(a, 0.0)
        tensor = partition_by_quadrant(a, rng.normal(size=(6, 2)))
        i, j = np.argwhere(tensor[0] != 0)[0]
        tensor[1, i, j] = tensor[0, i, j]  # duplicate into a second region
        assert validate_partition(tensor, a) is False

    def test_zero_matrix_valid(self):
        assert validate_partition(np.zeros((4, 3, 3)), np.zeros((3, 3))) is True

    def test_diagonal_violation_detected(self):
        tensor = np.zeros((4, 3, 3))
        tensor[2, 1, 1] = 1.0
        a = tensor.sum(axis=0)
        assert validate_partition(tensor, a) is False
