import math

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from neumann_spectra.discrete_operator import assemble, export_coo, quadratic_form, sobolev_norm
from neumann_spectra.eigensolver import (
    EigensolverError,
    clusters,
    dirichlet_ball_eigenvalues,
    inradius_upper_bound,
    load_eigenvectors,
    lowest_eigenpairs,
    rayleigh_ritz,
    save_eigenvectors,
)
from neumann_spectra.geometry import BoxDomain, RasterDomain, rasterize, unit_disc, unit_interval, unit_square

# squared first zero of J_1 (Dirichlet disc, first nonzero mode counted twice)
J11_SQ = 3.8317059702075125**2


def raster_from(mask, h=1.0, origin=None):
    mask = np.asarray(mask, bool)
    origin = tuple([0.0] * mask.ndim) if origin is None else origin
    return RasterDomain(mask, origin, h)


def face_sum(mask, f, h):
    """Independent face enumeration over the full grid."""
    idx = -np.ones(mask.shape, int)
    idx[mask] = np.arange(mask.sum())
    total = 0.0
    for i, j in np.ndindex(*mask.shape):
        if not mask[i, j]:
            continue
        for di, dj in ((1, 0), (0, 1)):
            a, b = i + di, j + dj
            if a < mask.shape[0] and b < mask.shape[1] and mask[a, b]:
                total += (f[idx[i, j]] - f[idx[a, b]]) ** 2
    return total * h ** (mask.ndim - 2)


L_SHAPE = np.array([[1, 1, 1, 1], [1, 1, 1, 1], [1, 1, 0, 0], [1, 1, 0, 0]], bool)


class TestAssembly:
    def test_interval_tridiagonal(self):
        n = 10
        op = assemble(rasterize(unit_interval(), 1 / n))
        K = op.K.toarray() * (1 / n)  # face weight 1/h in 1D
        ref = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
        ref[0, 0] = ref[-1, -1] = 1
        assert np.allclose(K, ref)
        lam = la.eigh(op.K.toarray(), np.diag(op.mass), eigvals_only=True)
        m = np.arange(n)
        assert np.allclose(np.sort(lam), (2 * n * n) * (1 - np.cos(np.pi * m / n)))

    def test_two_by_two_dense(self):
        op = assemble(raster_from(np.ones((2, 2)), h=0.5))
        lam = np.sort(la.eigvalsh(op.K.toarray(), np.diag(op.mass)))
        ref = np.sort(la.eigvalsh(np.array(
            [[2, -1, -1, 0], [-1, 2, 0, -1], [-1, 0, 2, -1], [0, -1, -1, 2]], float
        ) / 0.25))
        assert np.allclose(lam, ref)
        assert np.allclose(lam, [0, 8, 8, 16])

    def test_constants_in_kernel(self):
        op = assemble(rasterize(unit_disc(), 1 / 16))
        assert np.abs(op.K @ np.ones(op.n)).max() == 0.0

    def test_single_cell_warns(self):
        with pytest.warns(RuntimeWarning):
            assemble(raster_from([[True]]))

    @given(arrays(float, 6, elements=st.floats(-10, 10)))
    def test_quadratic_form_face_sum(self, f):
        mask = np.array([[1, 1, 1], [1, 0, 1], [0, 1, 0]], bool)
        op = assemble(raster_from(mask, h=0.25))
        assert quadratic_form(op, f) == pytest.approx(face_sum(mask, f, 0.25), rel=1e-12, abs=1e-12)
        assert quadratic_form(op, f) >= 0

    def test_form_constant_and_linear(self):
        op = assemble(rasterize(unit_square(), 1 / 64))
        assert quadratic_form(op, np.ones(op.n)) == 0
        x = op.cell_centers()[:, 0]
        assert quadratic_form(op, x) == pytest.approx(1.0, abs=2 / 64)

    def test_sobolev_norm(self):
        op = assemble(rasterize(unit_square(), 1 / 64))
        assert sobolev_norm(op, np.ones(op.n)) == pytest.approx(1.0)
        assert sobolev_norm(op, np.zeros(op.n)) == 0.0
        x = op.cell_centers()[:, 0]
        assert sobolev_norm(op, x) == pytest.approx(math.sqrt(1 + 1 / 3), rel=0.02)

    def test_galerkin_consistency(self):
        errs = []
        for n in (16, 32, 64):
            op = assemble(rasterize(unit_square(), 1 / n))
            c = op.cell_centers()
            f = np.cos(np.pi * c[:, 0]) * np.cos(np.pi * c[:, 1])
            errs.append(abs(quadratic_form(op, f) - math.pi**2 / 2))
        assert errs[2] < errs[1] < errs[0]
        assert errs[2] <= 2 * math.pi**2 / 64

    def test_positivity_of_semigroup(self):
        op = assemble(raster_from(L_SHAPE, h=0.25))
        A = np.diag(1 / op.mass) @ op.K.toarray()
        E = la.expm(-0.05 * A)
        assert np.all(E > 0)

    def test_export_coo(self, tmp_path):
        op = assemble(raster_from(L_SHAPE))
        lines = export_coo(op, tmp_path / "k.txt").read_text().splitlines()
        assert lines[0] == f"% 12 12 {op.K.nnz}"
        assert len(lines) == op.K.nnz + 1


class TestEigen:
    def test_l_shape_dense_oracle(self):
        op = assemble(raster_from(L_SHAPE, h=0.25))
        spec = lowest_eigenpairs(op, 12, dense=False)
        ref = la.eigh(op.K.toarray(), np.diag(op.mass), eigvals_only=True)
        assert np.allclose(spec.eigenvalues, ref, atol=1e-10)

    def test_interval_fine(self):
        spec = lowest_eigenpairs(assemble(rasterize(unit_interval(), 1 / 1000)), 5)
        n = np.arange(1, 5)
        assert np.allclose(spec.eigenvalues[1:], (n * math.pi) ** 2, rtol=0.005)
        assert abs(spec.eigenvalues[0]) <= 1e-10

    def test_orthonormal_and_residuals(self):
        spec = lowest_eigenpairs(assemble(rasterize(unit_disc(), 1 / 24)), 8)
        G = spec.eigenvectors.T @ (spec.mass[:, None] * spec.eigenvectors)
        assert np.allclose(G, np.eye(8), atol=1e-8)
        assert spec.residuals.max() <= 1e-8

    def test_deterministic(self):
        op = assemble(rasterize(unit_disc(), 1 / 24))
        a = lowest_eigenpairs(op, 6, seed=3)
        b = lowest_eigenpairs(op, 6, seed=3)
        assert np.array_equal(a.eigenvalues, b.eigenvalues)

    def test_scaling_law(self):
        mask = np.ones((12, 9), bool)
        mask[:4, :3] = False
        lam1 = lowest_eigenpairs(assemble(raster_from(mask, h=0.1)), 6).eigenvalues
        lam2 = lowest_eigenpairs(assemble(raster_from(mask, h=0.3)), 6).eigenvalues
        assert np.allclose(lam2[1:], lam1[1:] / 9, rtol=1e-9)

    @pytest.mark.slow
    def test_weyl_trend_square(self):
        spec = lowest_eigenpairs(assemble(rasterize(unit_square(), 1 / 64)), 41)
        n = np.arange(10, 41)
        # growth rate of lambda_n against n; pointwise ratios carry the
        # perimeter correction of the Neumann counting function
        slope = np.polyfit(n, spec.eigenvalues[10:41], 1)[0]
        assert slope == pytest.approx(4 * math.pi, rel=0.25)

    def test_clusters(self):
        assert clusters([0, 1, 1 + 1e-9, 2]) == [[0], [1, 2], [3]]

    def test_bad_m(self):
        with pytest.raises((ValueError, EigensolverError)):
            lowest_eigenpairs(assemble(raster_from(L_SHAPE)), 13)

    def test_eigenvector_dump_roundtrip(self, tmp_path):
        spec = lowest_eigenpairs(assemble(raster_from(L_SHAPE, h=0.5)), 4)
        vec, h = load_eigenvectors(save_eigenvectors(spec, tmp_path / "v.bin"))
        assert h == 0.5
        assert np.array_equal(vec, spec.eigenvectors)


class TestRitz:
    def setup_method(self):
        self.op = assemble(rasterize(unit_square(), 1 / 24))
        self.spec = lowest_eigenpairs(self.op, 6)

    def test_exact_basis(self):
        rr = rayleigh_ritz(self.op, self.spec.eigenvectors)
        assert np.allclose(rr.mu, self.spec.eigenvalues, atol=1e-8)

    @given(st.integers(0, 2**31 - 1), st.integers(1, 5))
    def test_random_basis_upper_bounds(self, seed, k):
        V = np.random.default_rng(seed).standard_normal((self.op.n, k))
        rr = rayleigh_ritz(self.op, V)
        assert np.all(rr.mu >= self.spec.eigenvalues[:k] - 1e-8)

    def test_rank_deficient_warns(self):
        V = np.ones((self.op.n, 2))
        with pytest.warns(RuntimeWarning):
            rr = rayleigh_ritz(self.op, V)
        assert rr.dimension == 1

    def test_restriction_gives_upper_bounds(self):
        big = rasterize(unit_square(), 1 / 24)
        op1 = assemble(big)
        keep = np.all((big.cell_centers() > 0.1) & (big.cell_centers() < 0.9), axis=1)
        small = big.restrict(keep, "inner")
        op2 = assemble(small)
        idx = op1.index_map[tuple(small.cell_indices().T)]
        rr = rayleigh_ritz(op2, self.spec.eigenvectors[idx])
        lam2 = lowest_eigenpairs(op2, 6).eigenvalues
        assert np.all(lam2 <= rr.mu + 1e-8)


class TestInradius:
    def test_table(self):
        table = dirichlet_ball_eigenvalues(2)
        assert table[1] == pytest.approx(J11_SQ, rel=1e-10)
        assert table[0] == pytest.approx(2.404825557695773**2, rel=1e-10)

    def test_square_bound(self):
        b = inradius_upper_bound(unit_square(), 1, h=1 / 256)
        assert b == pytest.approx(4 * J11_SQ, rel=0.02)
        assert math.pi**2 <= b

    def test_scaling(self):
        b1 = inradius_upper_bound(unit_square(), 1, h=1 / 64)
        b2 = inradius_upper_bound(BoxDomain((0.0, 0.0), (2.0, 2.0)), 1, h=1 / 32)
        assert b2 == pytest.approx(b1 / 4, rel=1e-12)

    def test_disc(self):
        spec = lowest_eigenpairs(assemble(rasterize(unit_disc(), 1 / 32)), 2)
        assert spec.eigenvalues[1] <= inradius_upper_bound(unit_disc(), 1, h=1 / 128)
