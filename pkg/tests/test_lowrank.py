import numpy as np
import pytest
from scipy.sparse import csr_matrix, diags, identity

from domainuq.errors import NotPSD
from domainuq.lowrank import (DenseOracle, KLBasis, klbasis_from_text,
                              klbasis_to_text, pivoted_cholesky, reduced_eigs,
                              truncate)


def gaussian_kernel_matrix(n):
    x = np.linspace(0.0, 1.0, n)
    return np.exp(-(x[:, None] - x[None, :]) ** 2)


class TestPivotedCholesky:
    def test_identity(self):
        factor = pivoted_cholesky(DenseOracle(np.eye(3)), 1e-12)
        assert factor.rank == 3
        assert factor.trace_residual == 0.0
        # columns are unit vectors (in pivot order)
        recon = factor.columns @ factor.columns.T
        assert np.array_equal(recon, np.eye(3))

    def test_rank_one(self):
        v = np.array([2.0, 1.0])
        factor = pivoted_cholesky(DenseOracle(np.outer(v, v)), 1e-12)
        assert factor.rank == 1
        assert factor.pivots[0] == 0
        assert np.allclose(factor.columns[:, 0], v, rtol=1e-15)

    def test_gaussian_kernel_rank_matches_dense_count(self):
        C = gaussian_kernel_matrix(10)
        factor = pivoted_cholesky(DenseOracle(C), 1e-6)
        w = np.linalg.eigvalsh(C)
        count = int(np.sum(w > 1e-6 * np.trace(C)))
        assert abs(factor.rank - count) <= 1

    def test_residual_history_monotone(self):
        C = gaussian_kernel_matrix(30)
        factor = pivoted_cholesky(DenseOracle(C), 1e-10)
        hist = factor.residual_history
        assert (hist >= 0.0).all()
        assert (np.diff(hist) <= 0.0).all()
        assert factor.trace_residual <= 1e-10 * np.trace(C)
        assert not factor.hit_max_rank

    def test_max_rank_flag(self):
        C = gaussian_kernel_matrix(30)
        factor = pivoted_cholesky(DenseOracle(C), 1e-12, max_rank=2)
        assert factor.rank == 2
        assert factor.hit_max_rank

    def test_diagonal_reconstruction_at_pivots(self):
        C = gaussian_kernel_matrix(25) + np.diag(np.linspace(0, 0.5, 25))
        factor = pivoted_cholesky(DenseOracle(C), 1e-8)
        recon = np.einsum("ik,ik->i", factor.columns, factor.columns)
        for p in factor.pivots:
            assert np.isclose(recon[p], C[p, p], rtol=1e-12)

    def test_trace_norm_reconstruction(self):
        C = gaussian_kernel_matrix(40)
        tol = 1e-7
        factor = pivoted_cholesky(DenseOracle(C), tol)
        resid = C - factor.columns @ factor.columns.T
        # residual of a PSD matrix: trace norm equals the trace
        assert np.trace(resid) <= tol * np.trace(C) * (1 + 1e-9)

    def test_lower_triangular_in_pivot_order(self):
        C = gaussian_kernel_matrix(20)
        factor = pivoted_cholesky(DenseOracle(C), 1e-10)
        for k in range(factor.rank):
            assert np.array_equal(
                factor.columns[factor.pivots[:k], k], np.zeros(k))

    def test_not_psd_raises(self):
        C = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3 and -1
        with pytest.raises(NotPSD):
            pivoted_cholesky(DenseOracle(C), 1e-12)

    def test_deterministic_tie_break(self):
        factor = pivoted_cholesky(DenseOracle(np.eye(4)), 1e-12)
        assert np.array_equal(factor.pivots, [0, 1, 2, 3])


class TestReducedEigs:
    def test_identity_factor_and_mass(self):
        factor = pivoted_cholesky(DenseOracle(np.eye(2)), 1e-12)
        basis = reduced_eigs(factor, csr_matrix(identity(2)), block=1)
        assert np.allclose(basis.mu, [1.0, 1.0])
        # modes are (signed, possibly reordered) unit vectors
        assert np.allclose(np.sort(np.abs(basis.modes), axis=1),
                           [[0.0, 1.0], [0.0, 1.0]])

    def test_diagonal_mass_sorting(self):
        factor = pivoted_cholesky(DenseOracle(np.eye(2)), 1e-12)
        basis = reduced_eigs(factor, csr_matrix(diags([2.0, 3.0])), block=1)
        assert np.allclose(basis.mu, [3.0, 2.0])

    def test_matches_dense_generalized_solver(self):
        rng = np.random.default_rng(3)
        L = rng.standard_normal((8, 3))
        A = rng.standard_normal((8, 8))
        M = csr_matrix(A @ A.T + 8 * np.eye(8))
        from domainuq.lowrank import LowRankFactor
        factor = LowRankFactor(columns=L, pivots=np.arange(3),
                               trace_residual=0.0,
                               residual_history=np.zeros(4),
                               hit_max_rank=False)
        basis = reduced_eigs(factor, M, block=1)
        # dense oracle: M C M v = mu M v with C = L L^T
        from scipy.linalg import eigh
        Md = M.toarray()
        w = eigh(Md @ (L @ L.T) @ Md, Md, eigvals_only=True)[::-1]
        assert np.allclose(basis.mu, w[:3], atol=1e-10)
        assert np.abs(w[3:]).max() < 1e-10

    def test_mass_orthogonality(self, mesh3):
        import domainuq as dq
        from domainuq.fem import assemble_mass
        from domainuq.fields import VectorFieldCovariance
        oracle = VectorFieldCovariance(mesh3.nodes)
        factor = pivoted_cholesky(oracle, 1e-5)
        mass = assemble_mass(mesh3)
        basis = reduced_eigs(factor, mass, block=2)
        n = mesh3.n_nodes
        MV = np.hstack([(mass @ basis.modes[:, :n].T).T,
                        (mass @ basis.modes[:, n:].T).T])
        gram = basis.modes @ MV.T
        resid = np.abs(gram - np.diag(basis.mu)).max()
        assert resid <= 1e-8 * basis.mu.max()

    def test_shape_mismatch_rejected(self):
        factor = pivoted_cholesky(DenseOracle(np.eye(4)), 1e-12)
        with pytest.raises(ValueError):
            reduced_eigs(factor, csr_matrix(identity(3)), block=1)

    def test_basis_reconstructs_covariance_in_trace_norm(self):
        C = gaussian_kernel_matrix(20)
        tol = 1e-7
        factor = pivoted_cholesky(DenseOracle(C), tol)
        h = 1.0 / 19
        main = np.full(20, 4.0)
        main[0] = main[-1] = 2.0
        mass = (diags([np.ones(19), main, np.ones(19)], [-1, 0, 1])
                * (h / 6.0)).tocsr()
        basis = reduced_eigs(factor, mass, block=1)
        resid = C - basis.modes.T @ basis.modes
        assert np.trace(resid) <= tol * np.trace(C) * (1 + 1e-9)


class TestTruncate:
    def test_no_discard(self):
        basis = KLBasis(np.array([1.0, 0.5]), np.eye(2))
        out = truncate(basis, 1e-12)
        assert out.n_modes == 2

    def test_direct_criterion(self):
        basis = KLBasis(np.array([0.9, 0.09, 0.01]), np.eye(3))
        out = truncate(basis, 0.02)
        assert out.n_modes == 2

    def test_mode_count_bracket_at_desk_scale(self, mesh5):
        import domainuq as dq
        vf = dq.build_vector_field_kl(mesh5, 1e-2)
        assert 40 <= vf.n_modes <= 70

    def test_tol_bounds(self):
        basis = KLBasis(np.array([1.0]), np.eye(1))
        with pytest.raises(ValueError):
            truncate(basis, 0.0)
        with pytest.raises(ValueError):
            truncate(basis, 1.0)


def test_klbasis_roundtrip_bit_exact():
    rng = np.random.default_rng(11)
    basis = KLBasis(np.sort(rng.random(4))[::-1], rng.standard_normal((4, 7)),
                    truncation_tol=0.0)
    text = klbasis_to_text(basis)
    back = klbasis_from_text(text)
    assert np.array_equal(back.mu, basis.mu)
    assert np.array_equal(back.modes, basis.modes)
    assert klbasis_to_text(back) == text
