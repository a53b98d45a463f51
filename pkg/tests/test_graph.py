import numpy as np
import pytest

from stgcvae import graph


class TestKernelAdjacency:
    def test_two_agents_two_meters(self):
        a = graph.kernel_adjacency(np.array([[0.0, 0.0], [2.0, 0.0]]))
        np.testing.assert_allclose(a, [[0, 0.5], [0.5, 0]])

    def test_single_agent(self):
        a = graph.kernel_adjacency(np.array([[1.0, 1.0]]))
        assert a.shape == (1, 1)
        assert a[0, 0] == 0.0

    def test_three_agent_hand_distances(self):
        a = graph.kernel_adjacency(np.array([[0, 0], [1, 0], [0, 1]], float))
        assert a[0, 1] == pytest.approx(1.0)
        assert a[0, 2] == pytest.approx(1.0)
        assert a[1, 2] == pytest.approx(1 / np.sqrt(2))

    def test_colocated_guard(self):
        a = graph.kernel_adjacency(np.array([[0, 0], [0, 0]], float))
        assert np.all(a == 0)
        assert np.all(np.isfinite(a))

    def test_scaling_homogeneity(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(-3, 3, (5, 2))
        a1 = graph.kernel_adjacency(p)
        a2 = graph.kernel_adjacency(2.5 * p)
        np.testing.assert_allclose(a2, a1 / 2.5, atol=1e-12)


class TestNormalize:
    def test_single_agent_is_one(self):
        series = graph.AdjacencySeries(np.zeros((1, 1, 1)))
        out = graph.normalize(series)
        np.testing.assert_allclose(out.matrices, [[[1.0]]])
        assert out.normalized

    def test_two_agent_hand_case(self):
        # a12 = 1: A+I = [[1,1],[1,1]], degrees 2 -> all entries 0.5
        a = np.array([[[0.0, 1.0], [1.0, 0.0]]])
        out = graph.normalize(graph.AdjacencySeries(a))
        np.testing.assert_allclose(out.matrices[0], 0.5)

    def test_spectral_radius_bounded(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            n = rng.integers(1, 8)
            pos = rng.uniform(-5, 5, (3, n, 2))
            normed = graph.normalized_adjacency(pos)
            for m in normed:
                eig = np.linalg.eigvalsh(m)
                assert eig.min() >= -1 - 1e-10
                assert eig.max() <= 1 + 1e-10

    def test_symmetry_preserved(self):
        rng = np.random.default_rng(2)
        pos = rng.uniform(-5, 5, (4, 6, 2))
        normed = graph.normalized_adjacency(pos)
        np.testing.assert_allclose(normed, np.swapaxes(normed, 1, 2),
                                   atol=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        pos = rng.uniform(-5, 5, (2, 5, 2))
        perm = rng.permutation(5)
        direct = graph.normalized_adjacency(pos[:, perm, :])
        permuted = graph.normalized_adjacency(pos)[:, perm][:, :, perm]
        np.testing.assert_allclose(direct, permuted, atol=1e-12)
